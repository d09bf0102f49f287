#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "tsc/trainer.hpp"

namespace tsc {

/// Line-oriented `key = value` settings. `#` starts a comment; blank lines
/// are ignored; later assignments win.
class ConfigMap {
 public:
  static ConfigMap parse(std::istream& in, const std::string& source = "<config>");
  static ConfigMap load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const noexcept { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  long get_int(const std::string& key, long fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  /// Throws if any key is not in `known`.
  void require_known(const std::vector<std::string_view>& known) const;

 private:
  std::map<std::string, std::string> values_;
};

/// Every key understood by the command-line tool.
const std::vector<std::string_view>& known_config_keys();

ArchitectureSpec architecture_from(const ConfigMap& config);
DatasetConfig dataset_from(const ConfigMap& config);
TrainConfig train_config_from(const ConfigMap& config);
AblationConfig ablation_config_from(const ConfigMap& config);

}  // namespace tsc
