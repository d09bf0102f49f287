#include "tsc/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

#include "tsc/image_io.hpp"
#include "tsc/random.hpp"

namespace tsc {

void DatasetConfig::validate() const {
  if (height < 8 || width < 8) throw std::invalid_argument("dataset: images must be at least 8x8");
  if (!(min_rect_fraction > 0) || !(max_rect_fraction >= min_rect_fraction) ||
      max_rect_fraction > 1) {
    throw std::invalid_argument("dataset: need 0 < min_rect_fraction <= max_rect_fraction <= 1");
  }
  if (noise < 0 || noise > 0.5) throw std::invalid_argument("dataset: noise must be in [0, 0.5]");
}

namespace {

struct Rect {
  long y = 0, x = 0, h = 0, w = 0;
  // Doubled centre coordinates keep the comparisons in integers.
  long cy2() const { return 2 * y + h - 1; }
  long cx2() const { return 2 * x + w - 1; }
  bool contains(long py, long px) const { return py >= y && py < y + h && px >= x && px < x + w; }
};

bool separated(const Rect& a, const Rect& b, long gap) {
  return a.y + a.h + gap <= b.y || b.y + b.h + gap <= a.y || a.x + a.w + gap <= b.x ||
         b.x + b.w + gap <= a.x;
}

// One procedural texture evaluated in image coordinates, so both rectangles
// sample the same field.
class Texture {
 public:
  explicit Texture(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    stripes_ = unit(rng) < 0.5;
    angle_ = unit(rng) * std::numbers::pi;
    period_ = 3.0 + 4.0 * unit(rng);
    phase_ = 2 * std::numbers::pi * unit(rng);
    cell_ = 2 + static_cast<long>(unit(rng) * 3.0);
    offset_y_ = static_cast<long>(unit(rng) * 8.0);
    offset_x_ = static_cast<long>(unit(rng) * 8.0);
    // Two colours with a strong difference in at least one channel.
    do {
      for (auto& v : a_) v = unit(rng);
      for (auto& v : b_) v = unit(rng);
    } while (contrast() < 0.5);
  }

  double value(std::size_t channel, long y, long x) const {
    double t = 0;
    if (stripes_) {
      const double u = static_cast<double>(x) * std::cos(angle_) + static_cast<double>(y) * std::sin(angle_);
      t = 0.5 + 0.5 * std::sin(2 * std::numbers::pi * u / period_ + phase_);
    } else {
      t = static_cast<double>(((x + offset_x_) / cell_ + (y + offset_y_) / cell_) % 2);
    }
    return a_[channel] * (1 - t) + b_[channel] * t;
  }

 private:
  double contrast() const {
    double best = 0;
    for (std::size_t c = 0; c < 3; ++c) best = std::max(best, std::abs(a_[c] - b_[c]));
    return best;
  }

  bool stripes_ = true;
  double angle_ = 0, period_ = 4, phase_ = 0;
  long cell_ = 2, offset_y_ = 0, offset_x_ = 0;
  double a_[3] = {0, 0, 0};
  double b_[3] = {1, 1, 1};
};

float quantize(double v) {
  const double clamped = std::clamp(v, 0.0, 1.0);
  return static_cast<float>(std::lround(clamped * 255.0)) / 255.0f;
}

std::size_t sample_count(const DatasetConfig& config, Split split) {
  return split == Split::Train ? config.train_samples : config.validation_samples;
}

}  // namespace

SegmentationSample generate_sample(const DatasetConfig& config, Split split, std::size_t index) {
  config.validate();
  std::mt19937_64 rng(derive_seed(config.seed, {static_cast<std::uint64_t>(split), index}));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto H = static_cast<long>(config.height);
  const auto W = static_cast<long>(config.width);

  const auto side = [&](long extent) {
    const long lo = std::max(1L, static_cast<long>(std::ceil(config.min_rect_fraction * extent)));
    const long hi = std::max(lo, static_cast<long>(std::floor(config.max_rect_fraction * extent)));
    return std::uniform_int_distribution<long>(lo, hi)(rng);
  };
  const auto place = [&] {
    Rect r;
    r.h = side(H);
    r.w = side(W);
    r.y = std::uniform_int_distribution<long>(0, H - r.h)(rng);
    r.x = std::uniform_int_distribution<long>(0, W - r.w)(rng);
    return r;
  };

  Rect top, left;
  bool placed = false;
  for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
    Rect a = place();
    Rect b = place();
    if (!separated(a, b, 2)) continue;
    // Demand a clear winner on both axes and that the roles differ.
    if (std::abs(a.cy2() - b.cy2()) < 4 || std::abs(a.cx2() - b.cx2()) < 4) continue;
    const bool a_top = a.cy2() < b.cy2();
    const bool a_left = a.cx2() < b.cx2();
    if (a_top == a_left) continue;
    top = a_top ? a : b;
    left = a_top ? b : a;
    placed = true;
  }
  if (!placed) {
    throw std::invalid_argument("dataset: rectangle placement infeasible for the configured "
                                "size range on a " + std::to_string(H) + "x" + std::to_string(W) +
                                " image");
  }

  const Texture texture(rng);
  const double background = 0.3 + 0.4 * unit(rng);
  SegmentationSample sample;
  sample.image = Tensor<float>(Shape{1, 3, config.height, config.width});
  sample.mask = LabelMap(1, config.height, config.width, 0);
  auto pixels = sample.image.mutable_data();
  const Shape& shape = sample.image.shape();
  for (long y = 0; y < H; ++y) {
    for (long x = 0; x < W; ++x) {
      std::int32_t label = 0;
      if (top.contains(y, x)) label = 1;
      if (left.contains(y, x)) label = 2;
      sample.mask.at(0, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = label;
      for (std::size_t c = 0; c < 3; ++c) {
        const double base = label == 0 ? background + 1.5 * config.noise * (2 * unit(rng) - 1)
                                       : texture.value(c, y, x);
        const double v = base + config.noise * (2 * unit(rng) - 1);
        pixels[shape.offset(0, c, static_cast<std::size_t>(y), static_cast<std::size_t>(x))] =
            quantize(v);
      }
    }
  }
  return sample;
}

std::vector<SegmentationSample> generate_samples(const DatasetConfig& config, Split split) {
  std::vector<SegmentationSample> out;
  const std::size_t count = sample_count(config, split);
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_sample(config, split, i));
  return out;
}

Dataset generate_dataset(const DatasetConfig& config) {
  return Dataset{generate_samples(config, Split::Train),
                 generate_samples(config, Split::Validation)};
}

void save_sample(const SegmentationSample& sample, const std::filesystem::path& image_path,
                 const std::filesystem::path& mask_path) {
  const Shape& s = sample.image.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3)) {
    throw std::invalid_argument("save_sample: expected a (1, 1|3, H, W) image, got " + to_string(s));
  }
  Image8 image(s.h, s.w, s.c);
  const auto values = sample.image.data();
  for (std::size_t y = 0; y < s.h; ++y) {
    for (std::size_t x = 0; x < s.w; ++x) {
      for (std::size_t c = 0; c < s.c; ++c) {
        const double v = std::clamp(static_cast<double>(values[s.offset(0, c, y, x)]), 0.0, 1.0);
        image.pixels[(y * s.w + x) * s.c + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  Image8 mask(sample.mask.height, sample.mask.width, 1);
  for (std::size_t i = 0; i < mask.pixels.size(); ++i) {
    const auto label = sample.mask.values[i];
    if (label < 0 || label > 255) throw std::invalid_argument("save_sample: label does not fit 8 bits");
    mask.pixels[i] = static_cast<std::uint8_t>(label);
  }
  write_png(image_path, image);
  write_png(mask_path, mask);
}

SegmentationSample load_sample(const std::filesystem::path& image_path,
                               const std::filesystem::path& mask_path, std::int32_t num_classes) {
  const Image8 image = read_png8(image_path);
  const Image8 mask = read_png8(mask_path);
  if (mask.channels != 1) {
    throw std::runtime_error("'" + mask_path.string() + "': mask must be single-channel");
  }
  if (mask.height != image.height || mask.width != image.width) {
    throw std::runtime_error("'" + mask_path.string() + "': mask size does not match '" +
                             image_path.string() + "'");
  }
  SegmentationSample sample;
  const Shape shape{1, image.channels, image.height, image.width};
  sample.image = Tensor<float>(shape);
  auto values = sample.image.mutable_data();
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      for (std::size_t c = 0; c < image.channels; ++c) {
        values[shape.offset(0, c, y, x)] =
            static_cast<float>(image.pixels[(y * image.width + x) * image.channels + c]) / 255.0f;
      }
    }
  }
  sample.mask = LabelMap(1, mask.height, mask.width);
  for (std::size_t i = 0; i < mask.pixels.size(); ++i) {
    const std::int32_t label = mask.pixels[i];
    if (label >= num_classes) {
      throw std::runtime_error("'" + mask_path.string() + "': class index " +
                               std::to_string(label) + " is not below num_classes = " +
                               std::to_string(num_classes));
    }
    sample.mask.values[i] = label;
  }
  return sample;
}

namespace {

std::string stem_name(std::size_t index) {
  std::string digits = std::to_string(index);
  if (digits.size() < 4) digits.insert(0, 4 - digits.size(), '0');
  return digits + ".png";
}

// Numeric stems of the PNG files in a directory.
std::map<long, std::filesystem::path> numbered_pngs(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::runtime_error("dataset directory '" + dir.string() + "' does not exist");
  }
  std::map<long, std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
    const std::string stem = entry.path().stem().string();
    long value = 0;
    const auto [end, ec] = std::from_chars(stem.data(), stem.data() + stem.size(), value);
    if (ec != std::errc() || end != stem.data() + stem.size()) continue;
    files.emplace(value, entry.path());
  }
  return files;
}

}  // namespace

void save_split(const std::vector<SegmentationSample>& samples, const std::filesystem::path& root) {
  std::filesystem::create_directories(root / "images");
  std::filesystem::create_directories(root / "masks");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    save_sample(samples[i], root / "images" / stem_name(i), root / "masks" / stem_name(i));
  }
}

std::vector<SegmentationSample> load_split(const std::filesystem::path& root,
                                           std::int32_t num_classes) {
  const auto images = numbered_pngs(root / "images");
  const auto masks = numbered_pngs(root / "masks");
  std::vector<SegmentationSample> samples;
  for (const auto& [stem, image_path] : images) {
    const auto mask = masks.find(stem);
    if (mask == masks.end()) {
      throw std::runtime_error("image '" + image_path.string() + "' has no matching mask");
    }
    samples.push_back(load_sample(image_path, mask->second, num_classes));
  }
  if (masks.size() != images.size()) {
    throw std::runtime_error("'" + root.string() + "': masks without matching images");
  }
  return samples;
}

}  // namespace tsc
