#include "tsc/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <thread>

#include "tsc/random.hpp"

namespace tsc {

void TrainConfig::validate() const {
  architecture.validate();
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (optimizer.learning_rate < 0) throw std::invalid_argument("train: learning_rate must be >= 0");
  if (data_dir.empty()) dataset.validate();
}

Dataset load_or_generate(const TrainConfig& config) {
  if (config.data_dir.empty()) return generate_dataset(config.dataset);
  Dataset data;
  data.train = load_split(config.data_dir / "train", config.architecture.num_classes);
  data.validation = load_split(config.data_dir / "val", config.architecture.num_classes);
  return data;
}

namespace {

std::string format_number(double value) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%.10g", value);
  return buffer;
}

template <typename Real>
struct Batch {
  Tensor<Real> images;
  LabelMap labels;
};

template <typename Real>
Batch<Real> assemble(const std::vector<SegmentationSample>& samples,
                     std::span<const std::size_t> indices) {
  const Shape& first = samples[indices.front()].image.shape();
  const Shape shape{indices.size(), first.c, first.h, first.w};
  std::vector<Real> values(shape.numel());
  LabelMap labels(indices.size(), first.h, first.w);
  const std::size_t image_size = first.c * first.plane();
  const std::size_t label_size = first.plane();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const SegmentationSample& s = samples[indices[b]];
    if (s.image.shape() != first) {
      throw std::invalid_argument("batch: samples of different sizes cannot share a batch");
    }
    const auto src = s.image.data();
    std::copy(src.begin(), src.end(), values.begin() + static_cast<long>(b * image_size));
    std::copy(s.mask.values.begin(), s.mask.values.end(),
              labels.values.begin() + static_cast<long>(b * label_size));
  }
  return {Tensor<Real>(shape, std::move(values)), std::move(labels)};
}

}  // namespace

template <typename Real>
MiouReport evaluate(const LayerGraph<Real>& graph, const std::vector<SegmentationSample>& samples,
                    std::size_t num_classes, std::size_t batch_size) {
  if (samples.empty()) throw std::invalid_argument("evaluate: dataset is empty");
  if (batch_size < 1) throw std::invalid_argument("evaluate: batch_size must be >= 1");
  NoGradGuard no_grad;
  ConfusionMatrix confusion(num_classes);
  std::vector<std::size_t> indices(samples.size());
  std::iota(indices.begin(), indices.end(), std::size_t{0});
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, indices.size() - start);
    const Batch<Real> batch = assemble<Real>(samples, std::span(indices).subspan(start, count));
    const Tensor<Real> logits = graph.forward(batch.images);
    if (logits.shape().c != num_classes) {
      throw std::invalid_argument("evaluate: network emits " + std::to_string(logits.shape().c) +
                                  " classes, expected " + std::to_string(num_classes));
    }
    confusion.add(argmax_channels(logits), batch.labels);
  }
  return confusion.report();
}

template <typename Real>
RunRecord train(const TrainConfig& config, const Dataset& data, LayerGraph<Real>* trained) {
  config.validate();
  if (data.train.empty()) throw std::invalid_argument("train: training set is empty");
  if (data.validation.empty()) throw std::invalid_argument("train: validation set is empty");
  const auto start = std::chrono::steady_clock::now();

  LayerGraph<Real> graph = build<Real>(config.architecture, derive_seed(config.seed, {0}));
  auto optimizer = make_optimizer<Real>(config.optimizer, graph.parameters());
  std::mt19937_64 shuffle_rng(derive_seed(config.seed, {1}));
  const auto classes = static_cast<std::size_t>(config.architecture.num_classes);

  RunRecord record;
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_total = 0;
    std::size_t batch_index = 0;
    for (std::size_t first = 0; first < order.size(); first += config.batch_size, ++batch_index) {
      const std::size_t count = std::min(config.batch_size, order.size() - first);
      const Batch<Real> batch = assemble<Real>(data.train, std::span(order).subspan(first, count));
      const Tensor<Real> logits = graph.forward(batch.images);
      const Tensor<Real> loss = softmax_cross_entropy(logits, batch.labels);
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) {
        throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                 std::to_string(epoch + 1) + ", batch " +
                                 std::to_string(batch_index + 1));
      }
      backward(loss);
      optimizer->step();
      optimizer->zero_grad();
      loss_total += value * static_cast<double>(count);
    }
    record.train_loss.push_back(loss_total / static_cast<double>(order.size()));
    record.val_miou.push_back(evaluate(graph, data.validation, classes, config.batch_size).mean);
    if (config.log) {
      *config.log << "epoch " << epoch + 1 << "/" << config.epochs
                  << " loss " << format_number(record.train_loss.back())
                  << " val_miou " << format_number(record.val_miou.back()) << "\n";
      config.log->flush();
    }
  }
  record.max_val_miou = *std::max_element(record.val_miou.begin(), record.val_miou.end());
  record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (trained) *trained = std::move(graph);
  return record;
}

void write_curves(std::ostream& out, const std::string& condition, std::size_t run,
                  const RunRecord& record, bool header) {
  if (header) out << "condition,run,epoch,train_loss,val_miou\n";
  for (std::size_t e = 0; e < record.val_miou.size(); ++e) {
    out << condition << ',' << run << ',' << e + 1 << ',' << format_number(record.train_loss[e])
        << ',' << format_number(record.val_miou[e]) << '\n';
  }
}

namespace {

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  return out;
}

constexpr char kParamsMagic[8] = {'T', 'S', 'C', 'P', 'A', 'R', '0', '1'};

}  // namespace

RunRecord train(const TrainConfig& config) {
  config.validate();
  const Dataset data = load_or_generate(config);
  LayerGraph<float> graph(1);
  RunRecord record = train<float>(config, data, &graph);
  if (!config.output_dir.empty()) {
    std::filesystem::create_directories(config.output_dir);
    auto out = open_output(config.output_dir / "curves.csv");
    AblationCondition condition{config.architecture.variant, config.architecture.ote};
    write_curves(out, condition.name(), 0, record, true);
    save_parameters(graph, config.output_dir / "model.params");
  }
  return record;
}

template <typename Real>
void save_parameters(const LayerGraph<Real>& graph, const std::filesystem::path& path) {
  auto out = open_output(path);
  const auto params = graph.parameters();
  out.write(kParamsMagic, sizeof(kParamsMagic));
  const auto count = static_cast<std::uint64_t>(params.size());
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& p : params) {
    const Shape& s = p.shape();
    const std::uint64_t dims[4] = {s.n, s.c, s.h, s.w};
    out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    for (Real v : p.data()) {
      const auto f = static_cast<float>(v);
      out.write(reinterpret_cast<const char*>(&f), sizeof(f));
    }
  }
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

template <typename Real>
void load_parameters(LayerGraph<Real>& graph, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read parameter file '" + path.string() + "'");
  char magic[sizeof(kParamsMagic)];
  std::uint64_t count = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (!in || !std::equal(magic, magic + sizeof(magic), kParamsMagic)) {
    throw std::runtime_error("'" + path.string() + "' is not a parameter file");
  }
  auto params = graph.parameters();
  if (count != params.size()) {
    throw std::runtime_error("'" + path.string() + "' holds " + std::to_string(count) +
                             " tensors but the network has " + std::to_string(params.size()));
  }
  for (auto& p : params) {
    std::uint64_t dims[4];
    in.read(reinterpret_cast<char*>(dims), sizeof(dims));
    const Shape s{dims[0], dims[1], dims[2], dims[3]};
    if (!in || s != p.shape()) {
      throw std::runtime_error("'" + path.string() + "': tensor shape " + to_string(s) +
                               " does not match the network's " + to_string(p.shape()));
    }
    auto values = p.mutable_data();
    for (auto& v : values) {
      float f = 0;
      in.read(reinterpret_cast<char*>(&f), sizeof(f));
      v = static_cast<Real>(f);
    }
    if (!in) throw std::runtime_error("'" + path.string() + "' is truncated");
  }
}

std::string AblationCondition::name() const {
  return std::string(to_string(variant)) + (ote ? "+ote" : "");
}

std::vector<AblationCondition> default_conditions() {
  return {{Variant::UNet, false}, {Variant::UNet, true}, {Variant::TscNet, false},
          {Variant::TscNet, true}};
}

AblationResult ablation(const AblationConfig& config) {
  if (config.seeds.size() < 2) throw std::invalid_argument("ablation: at least 2 runs are required");
  if (config.conditions.empty()) throw std::invalid_argument("ablation: no conditions");
  config.base.validate();
  const Dataset data = load_or_generate(config.base);

  struct Task {
    std::size_t condition;
    std::size_t run;
  };
  std::vector<Task> tasks;
  for (std::size_t c = 0; c < config.conditions.size(); ++c) {
    for (std::size_t r = 0; r < config.seeds.size(); ++r) tasks.push_back({c, r});
  }

  AblationResult result;
  for (const auto& condition : config.conditions) {
    result.conditions.push_back({condition, std::vector<RunRecord>(config.seeds.size()), {}});
  }

  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  std::exception_ptr failure;
  const auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      const Task task = tasks[i];
      TrainConfig run = config.base;
      run.architecture.variant = config.conditions[task.condition].variant;
      run.architecture.ote = config.conditions[task.condition].ote;
      run.seed = config.seeds[task.run];
      run.log = nullptr;
      try {
        RunRecord record = train<float>(run, data);
        if (config.base.log) {
          std::lock_guard lock(log_mutex);
          *config.base.log << config.conditions[task.condition].name() << " run " << task.run
                           << " max_val_miou " << format_number(record.max_val_miou) << " ("
                           << format_number(record.wall_seconds) << " s)\n";
          config.base.log->flush();
        }
        result.conditions[task.condition].runs[task.run] = std::move(record);
      } catch (...) {
        std::lock_guard lock(log_mutex);
        if (!failure) failure = std::current_exception();
        next = tasks.size();
      }
    }
  };
  const std::size_t jobs = std::clamp<std::size_t>(config.jobs, 1, tasks.size());
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> threads;
    for (std::size_t j = 0; j < jobs; ++j) threads.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  for (auto& c : result.conditions) {
    std::vector<double> maxima;
    for (const auto& r : c.runs) maxima.push_back(r.max_val_miou);
    c.max_miou = aggregate_runs(maxima);
  }

  if (!config.base.output_dir.empty()) {
    const auto& dir = config.base.output_dir;
    std::filesystem::create_directories(dir);
    auto curves = open_output(dir / "curves.csv");
    auto mean_curves = open_output(dir / "curves_mean.csv");
    auto summary = open_output(dir / "summary.csv");
    curves << "condition,run,epoch,train_loss,val_miou\n";
    mean_curves << "condition,epoch,mean_val_miou,stderr_val_miou\n";
    summary << "condition,mean_max_miou,stderr\n";
    for (const auto& c : result.conditions) {
      const std::string name = c.condition.name();
      for (std::size_t r = 0; r < c.runs.size(); ++r) write_curves(curves, name, r, c.runs[r], false);
      for (std::size_t e = 0; e < config.base.epochs; ++e) {
        std::vector<double> values;
        for (const auto& r : c.runs) values.push_back(r.val_miou[e]);
        const RunAggregate agg = aggregate_runs(values);
        mean_curves << name << ',' << e + 1 << ',' << format_number(agg.mean) << ','
                    << format_number(agg.standard_error) << '\n';
      }
      summary << name << ',' << format_number(c.max_miou.mean) << ','
              << format_number(c.max_miou.standard_error) << '\n';
    }
  }
  return result;
}

template MiouReport evaluate(const LayerGraph<float>&, const std::vector<SegmentationSample>&,
                             std::size_t, std::size_t);
template MiouReport evaluate(const LayerGraph<double>&, const std::vector<SegmentationSample>&,
                             std::size_t, std::size_t);
template RunRecord train(const TrainConfig&, const Dataset&, LayerGraph<float>*);
template RunRecord train(const TrainConfig&, const Dataset&, LayerGraph<double>*);
template void save_parameters(const LayerGraph<float>&, const std::filesystem::path&);
template void save_parameters(const LayerGraph<double>&, const std::filesystem::path&);
template void load_parameters(LayerGraph<float>&, const std::filesystem::path&);
template void load_parameters(LayerGraph<double>&, const std::filesystem::path&);

}  // namespace tsc
