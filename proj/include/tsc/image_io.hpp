#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace tsc {

/// Interleaved 8-bit image with 1 (gray) or 3 (RGB) channels.
struct Image8 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(std::size_t h, std::size_t w, std::size_t c)
      : height(h), width(w), channels(c), pixels(h * w * c, 0) {}
};

struct GrayImage16 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint16_t> pixels;

  GrayImage16() = default;
  GrayImage16(std::size_t h, std::size_t w) : height(h), width(w), pixels(h * w, 0) {}
};

void write_png(const std::filesystem::path& path, const Image8& image);
void write_png(const std::filesystem::path& path, const GrayImage16& image);

/// Reads an 8-bit gray or RGB PNG without any colour conversion.
Image8 read_png8(const std::filesystem::path& path);
GrayImage16 read_png16(const std::filesystem::path& path);

}  // namespace tsc
