#include "tsc/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <string>

namespace tsc {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open(const std::filesystem::path& path, const char* mode) {
  File file(std::fopen(path.c_str(), mode));
  if (!file) {
    throw std::runtime_error("cannot open '" + path.string() + "' for " +
                             (mode[0] == 'r' ? "reading" : "writing"));
  }
  return file;
}

[[noreturn]] void png_fail(png_structp png, png_const_charp message) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  if (text) *text = message;
  png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

void write_rows(const std::filesystem::path& path, std::size_t width, std::size_t height,
                int bit_depth, int color_type, const std::vector<png_bytep>& rows) {
  File file = open(path, "wb");
  std::string error;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, png_fail, png_warn);
  if (!png) throw std::runtime_error("libpng: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("cannot write PNG '" + path.string() + "': " + error);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct Decoded {
  std::size_t width = 0;
  std::size_t height = 0;
  int bit_depth = 0;
  int color_type = 0;
  std::vector<std::uint8_t> bytes;
};

Decoded read_rows(const std::filesystem::path& path) {
  File file = open(path, "rb");
  png_byte signature[8];
  if (std::fread(signature, 1, 8, file.get()) != 8 || png_sig_cmp(signature, 0, 8) != 0) {
    throw std::runtime_error("'" + path.string() + "' is not a PNG file");
  }
  std::string error;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, png_fail, png_warn);
  if (!png) throw std::runtime_error("libpng: cannot create read struct");
  png_infop info = png_create_info_struct(png);
  Decoded out;
  std::vector<png_bytep> rows;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("malformed PNG '" + path.string() + "': " + error);
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  out.color_type = png_get_color_type(png, info);
  if (out.bit_depth == 16) png_set_swap(png);
  png_read_update_info(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  out.bytes.resize(stride * out.height);
  for (std::size_t y = 0; y < out.height; ++y) rows.push_back(out.bytes.data() + y * stride);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw std::invalid_argument("write_png: only 1 or 3 channels are supported");
  }
  std::vector<png_bytep> rows;
  const std::size_t stride = image.width * image.channels;
  for (std::size_t y = 0; y < image.height; ++y) {
    rows.push_back(const_cast<png_bytep>(image.pixels.data() + y * stride));
  }
  write_rows(path, image.width, image.height, 8,
             image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, rows);
}

void write_png(const std::filesystem::path& path, const GrayImage16& image) {
  std::vector<png_bytep> rows;
  for (std::size_t y = 0; y < image.height; ++y) {
    rows.push_back(reinterpret_cast<png_bytep>(
        const_cast<std::uint16_t*>(image.pixels.data() + y * image.width)));
  }
  write_rows(path, image.width, image.height, 16, PNG_COLOR_TYPE_GRAY, rows);
}

Image8 read_png8(const std::filesystem::path& path) {
  Decoded d = read_rows(path);
  if (d.bit_depth != 8 || (d.color_type != PNG_COLOR_TYPE_GRAY && d.color_type != PNG_COLOR_TYPE_RGB)) {
    throw std::runtime_error("'" + path.string() + "': expected an 8-bit gray or RGB PNG");
  }
  Image8 image;
  image.height = d.height;
  image.width = d.width;
  image.channels = d.color_type == PNG_COLOR_TYPE_GRAY ? 1 : 3;
  image.pixels = std::move(d.bytes);
  return image;
}

GrayImage16 read_png16(const std::filesystem::path& path) {
  Decoded d = read_rows(path);
  if (d.bit_depth != 16 || d.color_type != PNG_COLOR_TYPE_GRAY) {
    throw std::runtime_error("'" + path.string() + "': expected a 16-bit grayscale PNG");
  }
  GrayImage16 image(d.height, d.width);
  std::memcpy(image.pixels.data(), d.bytes.data(), d.bytes.size());
  return image;
}

}  // namespace tsc
