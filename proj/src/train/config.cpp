#include "tsc/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tsc {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* kind) {
  throw std::invalid_argument("config key '" + key + "': '" + value + "' is not " + kind);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value, const char* kind) {
  T out{};
  const auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || end != value.data() + value.size()) bad_value(key, value, kind);
  return out;
}

}  // namespace

ConfigMap ConfigMap::parse(std::istream& in, const std::string& source) {
  ConfigMap config;
  std::string line;
  for (int number = 1; std::getline(in, line); ++number) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string content = trim(line);
    if (content.empty()) continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(source + ":" + std::to_string(number) +
                                  ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(content).substr(0, eq));
    if (key.empty()) {
      throw std::invalid_argument(source + ":" + std::to_string(number) + ": empty key");
    }
    config.set(key, trim(std::string_view(content).substr(eq + 1)));
  }
  return config;
}

ConfigMap ConfigMap::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file '" + path.string() + "'");
  return parse(in, path.string());
}

std::string ConfigMap::get_string(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

long ConfigMap::get_int(const std::string& key, long fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : parse_number<long>(key, it->second, "an integer");
}

std::uint64_t ConfigMap::get_uint(const std::string& key, std::uint64_t fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback
                             : parse_number<std::uint64_t>(key, it->second, "a non-negative integer");
}

double ConfigMap::get_double(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : parse_number<double>(key, it->second, "a number");
}

bool ConfigMap::get_bool(const std::string& key, bool fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "a boolean");
}

void ConfigMap::require_known(const std::vector<std::string_view>& known) const {
  for (const auto& [key, value] : values_) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw std::invalid_argument("unknown config key '" + key + "'");
    }
  }
}

const std::vector<std::string_view>& known_config_keys() {
  static const std::vector<std::string_view> keys = {
      "variant",    "depth",         "base",          "widths",     "classes",
      "ote",        "image_channels", "width_policy", "epochs",     "batch_size",
      "optimizer",  "learning_rate", "momentum",      "seed",       "runs",
      "jobs",       "data",          "image_size",    "train_samples", "val_samples",
      "rect_min",   "rect_max",      "noise",         "data_seed",  "out",
      "model",      "erf_samples",   "tau",           "erf_size"};
  return keys;
}

ArchitectureSpec architecture_from(const ConfigMap& config) {
  ArchitectureSpec spec;
  spec.variant = parse_variant(config.get_string("variant", "unet"));
  spec.depth = static_cast<int>(config.get_int("depth", spec.depth));
  spec.base_channels = static_cast<int>(config.get_int("base", spec.base_channels));
  spec.num_classes = static_cast<int>(config.get_int("classes", spec.num_classes));
  spec.ote = config.get_bool("ote", spec.ote);
  spec.image_channels = static_cast<int>(config.get_int("image_channels", spec.image_channels));
  const std::string policy = config.get_string("width_policy", "below-bnet");
  if (policy == "below-bnet") {
    spec.width_policy = WidthPolicy::BelowBNet;
  } else if (policy == "exact") {
    spec.width_policy = WidthPolicy::Exact;
  } else {
    bad_value("width_policy", policy, "'below-bnet' or 'exact'");
  }
  if (config.has("widths")) {
    std::stringstream list(config.get_string("widths", ""));
    std::string item;
    while (std::getline(list, item, ',')) {
      spec.widths.push_back(parse_number<int>("widths", trim(item), "an integer list"));
    }
  }
  spec.validate();
  return spec;
}

DatasetConfig dataset_from(const ConfigMap& config) {
  DatasetConfig data;
  const auto size = static_cast<std::size_t>(config.get_int("image_size", 64));
  data.height = size;
  data.width = size;
  data.train_samples = static_cast<std::size_t>(config.get_int("train_samples", 200));
  data.validation_samples = static_cast<std::size_t>(config.get_int("val_samples", 50));
  data.min_rect_fraction = config.get_double("rect_min", data.min_rect_fraction);
  data.max_rect_fraction = config.get_double("rect_max", data.max_rect_fraction);
  data.noise = config.get_double("noise", data.noise);
  data.seed = config.get_uint("data_seed", data.seed);
  data.validate();
  return data;
}

TrainConfig train_config_from(const ConfigMap& config) {
  TrainConfig train;
  train.architecture = architecture_from(config);
  train.epochs = static_cast<std::size_t>(config.get_int("epochs", 20));
  train.batch_size = static_cast<std::size_t>(config.get_int("batch_size", 8));
  train.optimizer.kind = parse_optimizer(config.get_string("optimizer", "adam"));
  train.optimizer.learning_rate = config.get_double("learning_rate", 1e-3);
  train.optimizer.momentum = config.get_double("momentum", 0.9);
  train.seed = config.get_uint("seed", 1);
  train.dataset = dataset_from(config);
  train.data_dir = config.get_string("data", "");
  train.output_dir = config.get_string("out", "");
  train.validate();
  return train;
}

AblationConfig ablation_config_from(const ConfigMap& config) {
  AblationConfig ablation;
  ablation.base = train_config_from(config);
  const long runs = config.get_int("runs", 3);
  if (runs < 2) throw std::invalid_argument("ablation: runs must be >= 2");
  ablation.seeds.clear();
  for (long r = 0; r < runs; ++r) ablation.seeds.push_back(ablation.base.seed + static_cast<std::uint64_t>(r));
  ablation.jobs = static_cast<std::size_t>(std::max(1L, config.get_int("jobs", 1)));
  return ablation;
}

}  // namespace tsc
