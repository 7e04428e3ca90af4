#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "asi/harness/checkpoint.hpp"
#include "asi/harness/config.hpp"
#include "asi/harness/dataset.hpp"
#include "asi/harness/training.hpp"

using namespace asi;
using namespace asi::harness;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("asi_harness_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

TrainConfig small_config() {
  TrainConfig c;
  c.dataset = "synthetic:2:20:3:3x8x8";
  c.epochs = 2;
  c.batch_size = 4;
  c.calib_batch = 4;
  c.seed = 11;
  return c;
}

}  // namespace

TEST(Dataset, SyntheticSplit) {
  const auto d = load_dataset("synthetic:2:100:7");
  EXPECT_EQ(d.train.size(), 160u);
  EXPECT_EQ(d.validation.size(), 40u);
  EXPECT_EQ(d.train.channels, 3u);
  EXPECT_EQ(d.train.height, 16u);
  EXPECT_EQ(d.train.classes, 2u);
}

TEST(Dataset, SyntheticDeterministic) {
  const auto a = load_dataset("synthetic:3:10:5:1x4x4");
  const auto b = load_dataset("synthetic:3:10:5:1x4x4");
  EXPECT_EQ(a.train.images, b.train.images);
  EXPECT_EQ(a.train.labels, b.train.labels);
  const auto c = load_dataset("synthetic:3:10:6:1x4x4");
  EXPECT_NE(a.train.images, c.train.images);
}

TEST(Dataset, RejectsSingleClass) {
  EXPECT_THROW(load_dataset("synthetic:1:10:5"), std::invalid_argument);
}

TEST(Dataset, IdxMagicMismatchNamesOffset) {
  const auto dir = scratch("idx");
  const auto p = (dir / "bad.idx").string();
  {
    std::ofstream f(p, std::ios::binary);
    const unsigned char bytes[] = {0, 0, 0x0d, 1, 0, 0, 0, 1, 0};
    f.write(reinterpret_cast<const char*>(bytes), sizeof bytes);
  }
  try {
    read_idx(p);
    FAIL() << "expected runtime_error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("offset 2"), std::string::npos) << e.what();
  }
}

TEST(Dataset, IdxRoundTrip) {
  const auto dir = scratch("idx_ok");
  const auto img = (dir / "img.idx").string();
  const auto lbl = (dir / "lbl.idx").string();
  {
    std::ofstream f(img, std::ios::binary);
    const unsigned char hdr[] = {0, 0, 8, 3, 0, 0, 0, 4, 0, 0, 0, 2, 0, 0, 0, 2};
    f.write(reinterpret_cast<const char*>(hdr), sizeof hdr);
    for (int i = 0; i < 16; ++i) f.put(static_cast<char>(i * 10));
  }
  {
    std::ofstream f(lbl, std::ios::binary);
    const unsigned char hdr[] = {0, 0, 8, 1, 0, 0, 0, 4, 0, 1, 0, 1};
    f.write(reinterpret_cast<const char*>(hdr), sizeof hdr);
  }
  const auto a = read_idx(img);
  EXPECT_EQ(a.dims, (std::vector<std::uint32_t>{4, 2, 2}));
  const auto d = load_dataset("idx:" + img + ":" + lbl);
  EXPECT_EQ(d.train.size() + d.validation.size(), 4u);
  EXPECT_EQ(d.train.channels, 1u);
}

TEST(EpochOrder, PermutationAndPure) {
  auto o = epoch_order(50, 3, 1);
  EXPECT_EQ(o, epoch_order(50, 3, 1));
  EXPECT_NE(o, epoch_order(50, 3, 2));
  std::sort(o.begin(), o.end());
  for (std::size_t i = 0; i < o.size(); ++i) EXPECT_EQ(o[i], i);
}

TEST(Config, SetUnknownAndHash) {
  TrainConfig c;
  c.set("epochs", "3");
  EXPECT_EQ(c.epochs, 3u);
  c.set("regime", "asi");
  EXPECT_EQ(c.regime, cost::Regime::Asi);
  EXPECT_THROW(c.set("nope", "1"), std::invalid_argument);
  EXPECT_THROW(c.set("epochs", "x"), std::invalid_argument);
  TrainConfig d = c;
  d.max_steps = 7;
  EXPECT_EQ(c.hash(), d.hash());
  d.lr = 0.1;
  EXPECT_NE(c.hash(), d.hash());
}

TEST(Config, DocumentRoundTrip) {
  TrainConfig c;
  c.set("eps", "0.7");
  c.set("warm_start", "false");
  const auto back = TrainConfig::from_document(c.to_document());
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_EQ(TrainConfig::keys().size(), c.to_document().values().size());
}

TEST(Config, ValidateRejectsBadEps) {
  TrainConfig c;
  c.regime = cost::Regime::Hosvd;
  c.eps = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  CheckpointBundle b;
  b.arrays.push_back({"w", {2, 3}, {1, 2, 3, 4, 5, 6}});
  b.arrays.push_back({"s", {}, {7}});
  b.meta["step"] = "4";
  const auto dir = scratch("ckpt");
  b.save(dir.string());
  const auto back = CheckpointBundle::load(dir.string());
  EXPECT_EQ(back.array("w").data, b.arrays[0].data);
  EXPECT_EQ(back.array("w").shape, b.arrays[0].shape);
  EXPECT_TRUE(back.array("s").shape.empty());
  EXPECT_EQ(back.meta.at("step"), "4");
  EXPECT_THROW(back.array("missing"), std::runtime_error);

  {
    std::fstream f(dir / "tensors.bin", std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(5);
    f.put('\x7f');
  }
  EXPECT_THROW(CheckpointBundle::load(dir.string()), std::runtime_error);
}

TEST(Training, DeterministicLosses) {
  auto cfg = small_config();
  cfg.regime = cost::Regime::Asi;
  cfg.asi_ranks = "full";
  cfg.max_steps = 6;
  const auto a = run_training(cfg);
  const auto b = run_training(cfg);
  ASSERT_EQ(a.steps.size(), 6u);
  for (std::size_t i = 0; i < a.steps.size(); ++i) EXPECT_EQ(a.steps[i].loss, b.steps[i].loss);
}

TEST(Training, ResumeMatchesUninterrupted) {
  auto cfg = small_config();
  cfg.regime = cost::Regime::Asi;
  cfg.budget = 0;
  cfg.asi_ranks = "full";
  cfg.max_steps = 5;
  const auto first = run_training(cfg);
  cfg.max_steps = 6;
  TrainingOptions opt;
  opt.resume = first.checkpoint;
  const auto resumed = run_training(cfg, opt);
  const auto straight = run_training(cfg);
  ASSERT_EQ(resumed.steps.size(), 1u);
  EXPECT_EQ(resumed.steps[0].step, 6u);
  for (const auto& arr : straight.checkpoint.arrays) {
    const auto& r = resumed.checkpoint.array(arr.name);
    ASSERT_EQ(r.data.size(), arr.data.size());
    for (std::size_t i = 0; i < arr.data.size(); ++i) EXPECT_NEAR(r.data[i], arr.data[i], 1e-6) << arr.name;
  }
}

TEST(Training, ResumeRejectsDifferentConfig) {
  auto cfg = small_config();
  cfg.max_steps = 2;
  const auto first = run_training(cfg);
  cfg.lr = 0.2;
  TrainingOptions opt;
  opt.resume = first.checkpoint;
  EXPECT_THROW(run_training(cfg, opt), std::runtime_error);
}

TEST(Training, AsiStaysWithinBudget) {
  auto cfg = small_config();
  cfg.regime = cost::Regime::Asi;
  const auto table = calibrate(cfg);
  cfg.budget = minimal_memory(table);
  const auto out = run_training(cfg);
  ASSERT_TRUE(out.selection.has_value());
  EXPECT_LE(out.peak_stored_elements, cfg.budget);
  for (const auto& m : out.epochs) EXPECT_LE(m.stored_activation_elements, cfg.budget);
  EXPECT_LT(out.peak_stored_elements, out.dense_trainable_elements);
}

TEST(Training, InfeasibleBudgetThrows) {
  auto cfg = small_config();
  cfg.regime = cost::Regime::Asi;
  cfg.budget = 1;
  EXPECT_THROW(run_training(cfg), InfeasibleBudget);
}

TEST(Training, FrozenLayersUnchanged) {
  auto cfg = small_config();
  cfg.layers = 2;
  cfg.max_steps = 4;
  const auto data = load_dataset(cfg.dataset);
  const auto init = build_network(cfg, data.train);
  const auto out = run_training(cfg);
  const auto* first = init.parameters().front();
  EXPECT_FALSE(first->trainable);
  EXPECT_EQ(out.checkpoint.array(first->name).data, first->value);
  const auto* last = init.parameters().back();
  EXPECT_NE(out.checkpoint.array(last->name).data, last->value);
}

TEST(Training, HosvdReportsRanksAndOverhead) {
  auto cfg = small_config();
  cfg.regime = cost::Regime::Hosvd;
  cfg.max_steps = 3;
  const auto out = run_training(cfg);
  EXPECT_EQ(out.ranks.size(), 2u);
  EXPECT_EQ(out.cost.layers.size(), 2u);
  for (const auto& r : out.cost.layers) EXPECT_GT(r.compression_overhead_flops, 0u);
  EXPECT_GT(out.mean_reconstruction_error, 0.0);
}

TEST(Metrics, JsonLineKeys) {
  MetricsRecord m;
  m.step = 3;
  m.stored_activation_elements = 10;
  const auto s = to_json_line(m);
  EXPECT_NE(s.find("\"activation_bytes\":40"), std::string::npos) << s;
  EXPECT_EQ(s.find('\n'), std::string::npos);
}

TEST(LearningRate, CosineEndpoints) {
  TrainConfig c;
  c.lr = 0.1;
  EXPECT_DOUBLE_EQ(learning_rate(c, 0, 10), 0.1);
  EXPECT_LT(learning_rate(c, 9, 10), 0.01);
  c.lr_schedule = LrSchedule::Constant;
  EXPECT_DOUBLE_EQ(learning_rate(c, 9, 10), 0.1);
}
