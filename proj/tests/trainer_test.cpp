#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "tsc/config.hpp"
#include "tsc/random.hpp"
#include "tsc/trainer.hpp"

namespace tsc {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  fs::path p = fs::temp_directory_path() /
               (std::string("tsc_") + info->test_suite_name() + "_" + info->name());
  fs::remove_all(p);
  return p;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.architecture.depth = 1;
  c.architecture.base_channels = 2;
  c.epochs = 3;
  c.batch_size = 4;
  c.dataset.height = 16;
  c.dataset.width = 16;
  c.dataset.train_samples = 8;
  c.dataset.validation_samples = 4;
  c.dataset.min_rect_fraction = 0.2;
  c.dataset.max_rect_fraction = 0.3;
  return c;
}

template <typename Real>
std::vector<std::vector<Real>> snapshot(const LayerGraph<Real>& g) {
  std::vector<std::vector<Real>> out;
  for (const auto& p : g.parameters()) out.emplace_back(p.data().begin(), p.data().end());
  return out;
}

TEST(Train, ZeroLearningRateLeavesParametersAndLossUnchanged) {
  TrainConfig c = tiny_config();
  c.optimizer.kind = OptimizerKind::Sgd;
  c.optimizer.learning_rate = 0;
  const Dataset data = load_or_generate(c);
  const auto before = snapshot(build<double>(c.architecture, derive_seed(c.seed, {0})));
  LayerGraph<double> trained(1);
  const RunRecord r = train<double>(c, data, &trained);
  EXPECT_EQ(snapshot(trained), before);
  // The shuffle changes batch composition, not the per-epoch mean.
  for (double loss : r.train_loss) EXPECT_NEAR(loss, r.train_loss.front(), 1e-12);
  for (double miou : r.val_miou) EXPECT_EQ(miou, r.val_miou.front());

  c.optimizer.kind = OptimizerKind::Adam;
  LayerGraph<double> adam(1);
  (void)train<double>(c, data, &adam);
  EXPECT_EQ(snapshot(adam), before);
}

TEST(Train, SameSeedIsBitIdentical) {
  const TrainConfig c = tiny_config();
  const Dataset data = load_or_generate(c);
  const RunRecord a = train<float>(c, data);
  const RunRecord b = train<float>(c, data);
  EXPECT_EQ(a.train_loss, b.train_loss);
  EXPECT_EQ(a.val_miou, b.val_miou);
  TrainConfig other = c;
  other.seed = 2;
  EXPECT_NE(train<float>(other, data).train_loss, a.train_loss);
}

TEST(Train, RecordShapeAndMaximum) {
  const TrainConfig c = tiny_config();
  const RunRecord r = train<float>(c, load_or_generate(c));
  ASSERT_EQ(r.train_loss.size(), c.epochs);
  ASSERT_EQ(r.val_miou.size(), c.epochs);
  EXPECT_EQ(r.max_val_miou, *std::max_element(r.val_miou.begin(), r.val_miou.end()));
  EXPECT_GT(r.wall_seconds, 0.0);
}

TEST(Train, OverfitsOneSample) {
  TrainConfig c = tiny_config();
  c.architecture.depth = 2;
  c.architecture.base_channels = 8;
  c.optimizer.learning_rate = 1e-2;
  c.epochs = 50;
  c.batch_size = 1;
  Dataset data;
  data.train = {generate_sample(c.dataset, Split::Train, 0)};
  data.validation = data.train;
  const RunRecord r = train<double>(c, data);
  EXPECT_EQ(r.max_val_miou, 1.0);
  EXPECT_LT(r.train_loss.back(), r.train_loss.front());
}

TEST(Train, RejectsBadInputs) {
  TrainConfig c = tiny_config();
  Dataset data = load_or_generate(c);
  Dataset no_train{{}, data.validation};
  EXPECT_THROW((void)train<float>(c, no_train), std::invalid_argument);
  Dataset no_val{data.train, {}};
  EXPECT_THROW((void)train<float>(c, no_val), std::invalid_argument);
  c.epochs = 0;
  EXPECT_THROW((void)train<float>(c, data), std::invalid_argument);
}

TEST(Train, DivergenceNamesEpochAndBatch) {
  TrainConfig c = tiny_config();
  c.optimizer.kind = OptimizerKind::Sgd;
  c.optimizer.learning_rate = 1e30;
  try {
    (void)train<float>(c, load_or_generate(c));
    FAIL() << "expected divergence";
  } catch (const std::runtime_error& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("non-finite loss at epoch"), std::string::npos) << what;
    EXPECT_NE(what.find("batch"), std::string::npos) << what;
  }
}

TEST(Evaluate, RandomNetworkIsFarFromPerfect) {
  ArchitectureSpec spec;
  const auto g = build<float>(spec, 3);
  DatasetConfig d;
  d.validation_samples = 8;
  const MiouReport r = evaluate(g, generate_samples(d, Split::Validation), 3);
  EXPECT_LT(r.mean, 0.5);
  EXPECT_THROW((void)evaluate(g, {}, 3), std::invalid_argument);
  EXPECT_THROW((void)evaluate(g, generate_samples(d, Split::Validation), 4), std::invalid_argument);
}

// The file stores single precision, which is what training uses.
TEST(Parameters, SaveLoadRoundTrip) {
  const fs::path dir = scratch_dir();
  fs::create_directories(dir);
  ArchitectureSpec spec;
  spec.depth = 2;
  spec.base_channels = 2;
  const auto a = build<float>(spec, 1);
  auto b = build<float>(spec, 2);
  save_parameters(a, dir / "a.params");
  load_parameters(b, dir / "a.params");
  EXPECT_EQ(snapshot(a), snapshot(b));

  spec.base_channels = 4;
  auto wider = build<float>(spec, 1);
  EXPECT_THROW(load_parameters(wider, dir / "a.params"), std::runtime_error);
  EXPECT_THROW(load_parameters(b, dir / "missing.params"), std::runtime_error);
  fs::remove_all(dir);
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

AblationConfig tiny_ablation(const fs::path& out, std::vector<std::uint64_t> seeds) {
  AblationConfig a;
  a.base = tiny_config();
  a.base.epochs = 2;
  a.base.output_dir = out;
  a.seeds = std::move(seeds);
  return a;
}

TEST(Ablation, IdenticalSeedsGiveZeroStandardError) {
  const fs::path dir = scratch_dir();
  const AblationResult r = ablation(tiny_ablation(dir, {5, 5}));
  ASSERT_EQ(r.conditions.size(), 4u);
  const auto mean = read_csv(dir / "curves_mean.csv");
  ASSERT_EQ(mean.size(), 1u + 4u * 2u);
  EXPECT_EQ(mean[0], (std::vector<std::string>{"condition", "epoch", "mean_val_miou", "stderr_val_miou"}));
  std::set<std::string> names;
  for (std::size_t i = 1; i < mean.size(); ++i) {
    names.insert(mean[i][0]);
    EXPECT_EQ(std::stod(mean[i][3]), 0.0);
  }
  EXPECT_EQ(names, (std::set<std::string>{"unet", "unet+ote", "tscnet", "tscnet+ote"}));
  const auto summary = read_csv(dir / "summary.csv");
  ASSERT_EQ(summary.size(), 5u);
  for (std::size_t i = 1; i < summary.size(); ++i) EXPECT_EQ(std::stod(summary[i][2]), 0.0);
  fs::remove_all(dir);
}

TEST(Ablation, SummaryIsRecomputableFromCurves) {
  const fs::path dir = scratch_dir();
  (void)ablation(tiny_ablation(dir, {1, 2, 3}));
  const auto curves = read_csv(dir / "curves.csv");
  EXPECT_EQ(curves[0], (std::vector<std::string>{"condition", "run", "epoch", "train_loss", "val_miou"}));
  ASSERT_EQ(curves.size(), 1u + 4u * 3u * 2u);
  std::map<std::string, std::map<std::string, double>> best;
  for (std::size_t i = 1; i < curves.size(); ++i) {
    double& b = best[curves[i][0]][curves[i][1]];
    b = std::max(b, std::stod(curves[i][4]));
  }
  const auto summary = read_csv(dir / "summary.csv");
  EXPECT_EQ(summary[0], (std::vector<std::string>{"condition", "mean_max_miou", "stderr"}));
  for (std::size_t i = 1; i < summary.size(); ++i) {
    std::vector<double> maxima;
    for (const auto& [run, value] : best.at(summary[i][0])) maxima.push_back(value);
    ASSERT_EQ(maxima.size(), 3u);
    const RunAggregate agg = aggregate_runs(maxima);
    EXPECT_NEAR(std::stod(summary[i][1]), agg.mean, 1e-9) << summary[i][0];
    EXPECT_NEAR(std::stod(summary[i][2]), agg.standard_error, 1e-9) << summary[i][0];
  }
  fs::remove_all(dir);
}

TEST(Ablation, ParallelRunsMatchSerialRuns) {
  AblationConfig serial = tiny_ablation({}, {1, 2});
  AblationConfig parallel = serial;
  parallel.jobs = 3;
  const AblationResult a = ablation(serial);
  const AblationResult b = ablation(parallel);
  for (std::size_t c = 0; c < a.conditions.size(); ++c) {
    for (std::size_t r = 0; r < 2; ++r) {
      EXPECT_EQ(a.conditions[c].runs[r].train_loss, b.conditions[c].runs[r].train_loss);
    }
  }
}

TEST(Ablation, NeedsTwoRuns) {
  EXPECT_THROW((void)ablation(tiny_ablation({}, {1})), std::invalid_argument);
}

TEST(Config, ParsesCommentsAndOverrides) {
  std::istringstream in("# comment\n\nvariant = tscnet\ndepth=2 # trailing\nlearning_rate = 0.01\n"
                        "depth = 4\note = true\n");
  const ConfigMap m = ConfigMap::parse(in);
  const TrainConfig t = train_config_from(m);
  EXPECT_EQ(t.architecture.variant, Variant::TscNet);
  EXPECT_EQ(t.architecture.depth, 4);
  EXPECT_TRUE(t.architecture.ote);
  EXPECT_DOUBLE_EQ(t.optimizer.learning_rate, 0.01);
  EXPECT_EQ(t.epochs, 20u);
}

TEST(Config, ErrorsNameTheProblem) {
  const auto message = [](const std::string& text) -> std::string {
    std::istringstream in(text);
    try {
      const ConfigMap m = ConfigMap::parse(in, "x.cfg");
      m.require_known(known_config_keys());
      (void)train_config_from(m);
    } catch (const std::exception& e) {
      return e.what();
    }
    return "";
  };
  EXPECT_NE(message("depth = three\n").find("depth"), std::string::npos);
  EXPECT_NE(message("no equals sign\n").find("x.cfg"), std::string::npos);
  EXPECT_NE(message("colour = red\n").find("colour"), std::string::npos);
  EXPECT_NE(message("variant = resnet\n").find("resnet"), std::string::npos);
  try {
    (void)ConfigMap::load("definitely_missing.cfg");
    FAIL();
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("definitely_missing.cfg"), std::string::npos);
  }
}

TEST(Config, AblationSeedsAreConsecutive) {
  std::istringstream in("runs = 4\nseed = 10\njobs = 2\n");
  const AblationConfig a = ablation_config_from(ConfigMap::parse(in));
  EXPECT_EQ(a.seeds, (std::vector<std::uint64_t>{10, 11, 12, 13}));
  EXPECT_EQ(a.jobs, 2u);
}

}  // namespace
}  // namespace tsc
