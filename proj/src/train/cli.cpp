#include "tsc/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsc/config.hpp"
#include "tsc/erf.hpp"
#include "tsc/trainer.hpp"

namespace tsc {
namespace {

std::string flag_name(std::string_view key) {
  std::string name(key);
  std::replace(name.begin(), name.end(), '_', '-');
  return "--" + name;
}

// Flags shared by every subcommand: --config plus one override per key.
struct Overrides {
  std::string config_path;
  std::map<std::string, std::string> values;
};

void add_overrides(CLI::App& app, Overrides& overrides,
                   const std::map<std::string, std::string>& renames = {}) {
  app.add_option("-c,--config", overrides.config_path, "key = value settings file");
  for (const auto key : known_config_keys()) {
    if (renames.count(std::string(key)) != 0) continue;
    std::string flag = flag_name(key);
    for (const auto& [from, to] : renames) {
      if (to == key) flag = flag_name(from);
    }
    auto* option = app.add_option_function<std::string>(
        flag, [&overrides, k = std::string(key)](const std::string& v) { overrides.values[k] = v; });
    option->type_name("VALUE");
  }
}

ConfigMap resolve(const Overrides& overrides) {
  ConfigMap config;
  if (!overrides.config_path.empty()) config = ConfigMap::load(overrides.config_path);
  for (const auto& [key, value] : overrides.values) config.set(key, value);
  config.require_known(known_config_keys());
  return config;
}

void print_report(std::ostream& out, const MiouReport& report) {
  out << std::setprecision(6) << std::fixed;
  for (std::size_t k = 0; k < report.per_class.size(); ++k) {
    out << "class " << k << ": ";
    if (report.per_class[k]) {
      out << *report.per_class[k] << "\n";
    } else {
      out << "undefined\n";
    }
  }
  out << "miou: " << report.mean << "\n";
}

int cmd_gen_data(const ConfigMap& config, std::ostream& out) {
  const std::string root = config.get_string("out", "");
  if (root.empty()) throw std::invalid_argument("gen-data: --out is required");
  const DatasetConfig data = dataset_from(config);
  save_split(generate_samples(data, Split::Train), std::filesystem::path(root) / "train");
  save_split(generate_samples(data, Split::Validation), std::filesystem::path(root) / "val");
  out << "wrote " << data.train_samples << " train and " << data.validation_samples
      << " validation samples to " << root << "\n";
  return 0;
}

int cmd_train(const ConfigMap& config, std::ostream& out) {
  TrainConfig train_config = train_config_from(config);
  train_config.log = &out;
  const RunRecord record = train(train_config);
  out << std::setprecision(6) << std::fixed << "max val miou: " << record.max_val_miou
      << "  wall: " << std::setprecision(1) << record.wall_seconds << " s\n";
  return 0;
}

int cmd_ablation(const ConfigMap& config, std::ostream& out) {
  AblationConfig ablation_config = ablation_config_from(config);
  ablation_config.base.log = &out;
  const AblationResult result = ablation(ablation_config);
  out << std::setprecision(4) << std::fixed;
  for (const auto& condition : result.conditions) {
    out << std::left << std::setw(12) << condition.condition.name() << " mean max miou "
        << condition.max_miou.mean << " +/- " << condition.max_miou.standard_error << "\n";
  }
  return 0;
}

int cmd_eval(const ConfigMap& config, std::ostream& out) {
  const TrainConfig train_config = train_config_from(config);
  const std::string model = config.get_string("model", "");
  if (model.empty()) throw std::invalid_argument("eval: --model is required");
  LayerGraph<float> graph = build<float>(train_config.architecture, 0);
  load_parameters(graph, model);
  const Dataset data = load_or_generate(train_config);
  print_report(out, evaluate(graph, data.validation,
                             static_cast<std::size_t>(train_config.architecture.num_classes),
                             train_config.batch_size));
  return 0;
}

int cmd_erf(const ConfigMap& config, std::ostream& out) {
  const ArchitectureSpec base = architecture_from(config);
  const auto size = static_cast<std::size_t>(config.get_int("erf_size", 64));
  const auto samples = static_cast<std::size_t>(config.get_int("erf_samples", 8));
  const double tau = config.get_double("tau", 0.01);
  const std::uint64_t seed = config.get_uint("seed", 1);
  const std::filesystem::path dir = config.get_string("out", "erf");
  if (samples < 1) throw std::invalid_argument("erf: --erf-samples must be >= 1");
  std::filesystem::create_directories(dir);

  std::vector<Variant> variants;
  if (config.has("variant")) {
    variants.push_back(base.variant);
  } else {
    variants.assign(std::begin(kAllVariants), std::end(kAllVariants));
  }
  std::ofstream csv(dir / "erf_support.csv");
  if (!csv) throw std::runtime_error("cannot write '" + (dir / "erf_support.csv").string() + "'");
  csv << "variant,depth,tau,support_count,support_fraction\n";
  out << std::setprecision(4) << std::fixed;
  for (const Variant variant : variants) {
    ArchitectureSpec spec = base;
    spec.variant = variant;
    const auto graph = build<double>(spec, seed);
    const UnitCoord target{0, size / 2, size / 2};
    const ErfMap map = empirical_erf(graph, size, size, target, samples, seed);
    const SupportStats stats = erf_support_stats(map, tau);
    const std::string stem = std::string(to_string(variant)) + (spec.ote ? "_ote" : "") + "_d" +
                             std::to_string(spec.depth);
    save_heatmap(map, dir / ("erf_" + stem + ".png"));
    csv << to_string(variant) << "," << spec.depth << "," << tau << "," << stats.count << ","
        << std::setprecision(10) << stats.fraction << std::setprecision(4) << "\n";
    const RfRegion region = analytic_rf(graph, size, size, target);
    out << std::left << std::setw(10) << to_string(variant) << " support " << std::setw(6)
        << stats.count << " fraction " << stats.fraction << " analytic area " << region.area()
        << "\n";
  }
  return 0;
}

int cmd_params(const ConfigMap& config, std::ostream& out) {
  if (config.has("variant")) {
    out << count_params(architecture_from(config)) << "\n";
    return 0;
  }
  for (const Variant variant : kAllVariants) {
    ConfigMap with_variant = config;
    with_variant.set("variant", std::string(to_string(variant)));
    out << std::left << std::setw(10) << to_string(variant) << " "
        << count_params(architecture_from(with_variant)) << "\n";
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app("Translated skip connection segmentation networks", "tscnet");
  app.require_subcommand(1);

  struct Command {
    const char* name;
    const char* help;
    int (*run)(const ConfigMap&, std::ostream&);
    std::map<std::string, std::string> renames;
  };
  const std::vector<Command> commands = {
      {"gen-data", "write the synthetic dataset as PNG files", cmd_gen_data, {{"seed", "data_seed"}}},
      {"train", "train one network", cmd_train, {}},
      {"ablation", "UNet/TscNet x OTE comparison over several seeds", cmd_ablation, {}},
      {"eval", "validation MIoU of saved parameters", cmd_eval, {}},
      {"erf", "effective receptive field heatmaps and support sizes", cmd_erf, {}},
      {"params", "parameter counts", cmd_params, {}},
  };
  std::vector<Overrides> overrides(commands.size());
  std::vector<CLI::App*> subcommands;
  for (std::size_t i = 0; i < commands.size(); ++i) {
    auto* sub = app.add_subcommand(commands[i].name, commands[i].help);
    add_overrides(*sub, overrides[i], commands[i].renames);
    subcommands.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  for (std::size_t i = 0; i < commands.size(); ++i) {
    if (!subcommands[i]->parsed()) continue;
    try {
      return commands[i].run(resolve(overrides[i]), out);
    } catch (const std::exception& e) {
      err << "tscnet " << commands[i].name << ": " << e.what() << "\n";
      return 1;
    }
  }
  return 1;
}

}  // namespace tsc
