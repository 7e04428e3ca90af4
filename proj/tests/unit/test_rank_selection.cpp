#include <gtest/gtest.h>

#include <filesystem>

#include "asi/rank_selection.hpp"
#include "asi_test/oracles.hpp"
#include "asi_test/suites.hpp"

using namespace asi;

namespace {

// Table with hand-set cells; ranks chosen so that mem matches exactly.
PerplexityTable table_from(const std::vector<std::vector<double>>& p, const std::vector<std::vector<std::size_t>>& k) {
  PerplexityTable t;
  for (std::size_t j = 0; j < p[0].size(); ++j) t.eps.push_back(0.5 + 0.1 * static_cast<double>(j));
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Shape4 s(8, 8, 8, 8);
    t.layer_names.push_back("conv" + std::to_string(i));
    t.layer_shapes.push_back(s);
    t.perplexity.push_back(p[i]);
    auto& r = t.ranks.emplace_back();
    auto& m = t.mem.emplace_back();
    for (std::size_t kk : k[i]) {
      r.emplace_back(kk, kk, kk, kk);
      m.push_back(stored_elements(r.back(), s));
    }
  }
  t.validate();
  return t;
}

}  // namespace

TEST(ThresholdSet, DefaultsAndValidation) {
  EXPECT_EQ(ThresholdSet::defaults().values(), (std::vector<double>{0.4, 0.5, 0.6, 0.7, 0.8, 0.9}));
  EXPECT_THROW(ThresholdSet({0.5, 0.5}), std::invalid_argument);
  EXPECT_THROW(ThresholdSet({0.0}), std::invalid_argument);
  EXPECT_THROW(ThresholdSet({1.1}), std::invalid_argument);
  EXPECT_EQ(ThresholdSet::parse("0.5,1").size(), 2u);
}

TEST(SelectRanks, UnconstrainedTakesMinimumPerplexity) {
  const auto t = table_from({{3, 2, 1}, {5, 4, 0.5}}, {{1, 2, 3}, {1, 2, 4}});
  std::uint64_t hi = 0;
  for (const auto& row : t.mem) hi += *std::max_element(row.begin(), row.end());
  const auto s = select_ranks(t, {hi});
  EXPECT_EQ(s.choice, (std::vector<std::size_t>{2, 2}));
  EXPECT_DOUBLE_EQ(s.total_perplexity, 1.5);
}

TEST(SelectRanks, TightBudgetTakesAllMinimumMemory) {
  const auto t = table_from({{3, 2, 1}, {5, 4, 0.5}}, {{1, 2, 3}, {1, 2, 4}});
  const auto s = select_ranks(t, {minimal_memory(t)});
  EXPECT_EQ(s.choice, (std::vector<std::size_t>{0, 0}));
  EXPECT_EQ(s.total_memory, minimal_memory(t));
}

TEST(SelectRanks, InfeasibleNamesMinimalBudget) {
  const auto t = table_from({{3, 2}}, {{2, 3}});
  try {
    select_ranks(t, {0});
    FAIL() << "expected InfeasibleBudget";
  } catch (const InfeasibleBudget& e) {
    EXPECT_EQ(e.minimal_memory(), minimal_memory(t));
    EXPECT_NE(std::string(e.what()).find(std::to_string(minimal_memory(t))), std::string::npos);
  }
}

TEST(SelectRanks, SingleLayer) {
  const auto t = table_from({{9, 4, 1}}, {{1, 2, 3}});
  EXPECT_EQ(select_ranks(t, {t.mem[0][1]}).choice, std::vector<std::size_t>{1});
}

TEST(SelectRanks, AdversarialGreedyCase) {
  // Greedy would take layer 0's best (idx 2) and then have no room; the
  // optimum spends memory on layer 1 instead.
  const auto t = table_from({{10, 9.5, 9}, {100, 50, 1}}, {{1, 2, 4}, {1, 2, 4}});
  const std::uint64_t b = t.mem[0][0] + t.mem[1][2];
  const auto s = select_ranks(t, {b});
  EXPECT_EQ(s.choice, (std::vector<std::size_t>{0, 2}));
  EXPECT_DOUBLE_EQ(s.total_perplexity, 11.0);
  const auto bf = brute_force_select(t, {b});
  EXPECT_EQ(bf.choice, s.choice);
}

TEST(SelectRanks, TieBreakLexicographicallySmallest) {
  const auto t = table_from({{1, 1}, {1, 1}}, {{1, 2}, {1, 2}});
  const auto s = select_ranks(t, {10000000});
  EXPECT_EQ(s.choice, (std::vector<std::size_t>{0, 0}));
}

TEST(SelectRanks, MatchesBruteForceOnRandomTables) {
  const auto r = asi::testing::selection_suite(17, 100);
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(BruteForce, RefusesHugeInstances) {
  std::mt19937_64 rng(1);
  const auto t = asi::testing::random_table(rng, 10, 6);
  EXPECT_THROW(brute_force_select(t, {~0ull}), std::length_error);
}

TEST(PerplexityTable, ValidateRejectsInconsistentMemory) {
  auto t = table_from({{1, 0.5}}, {{1, 2}});
  t.mem[0][1] += 1;
  EXPECT_THROW(t.validate(), std::invalid_argument);
}

TEST(Persistence, TableAndSelectionRoundTrip) {
  std::mt19937_64 rng(3);
  auto t = asi::testing::random_table(rng, 3, 4);
  t.batch_size = 8;
  t.seed = 5;
  t.model_hash = "conv:3:8:3:1:1";
  const auto dir = std::filesystem::temp_directory_path() / "asi_table_rt";
  std::filesystem::create_directories(dir);
  write_table(t, (dir / "p.csv").string());
  const auto back = read_table((dir / "p.csv").string());
  EXPECT_EQ(back.perplexity, t.perplexity);
  EXPECT_EQ(back.mem, t.mem);
  EXPECT_EQ(back.layer_shapes, t.layer_shapes);
  EXPECT_EQ(back.eps, t.eps);
  EXPECT_EQ(back.batch_size, 8u);
  EXPECT_EQ(back.model_hash, t.model_hash);

  std::uint64_t hi = 0;
  for (const auto& row : t.mem) hi += row.back();
  const auto s = select_ranks(t, {hi});
  write_selection(s, (dir / "s.txt").string());
  const auto sb = read_selection((dir / "s.txt").string());
  EXPECT_EQ(sb.choice, s.choice);
  EXPECT_EQ(sb.ranks, s.ranks);
  EXPECT_EQ(sb.total_perplexity, s.total_perplexity);
  EXPECT_EQ(sb.budget, s.budget);
}

namespace {
Network toy(std::uint64_t seed) {
  auto net = Network::from_spec("conv:3:8:3:1:1,relu,conv:8:16:3:1:1,relu,gap,fc:16:4");
  net.initialize(seed);
  return net;
}
}  // namespace

TEST(MeasurePerplexity, FullVarianceColumnIsNearZeroAndMonotone) {
  auto net = toy(1);
  std::mt19937_64 rng(1);
  const auto x = asi::testing::random_tensor<float>(Shape4(8, 3, 12, 12), rng);
  const std::vector<int> y{0, 1, 2, 3, 0, 1, 2, 3};
  const auto t = measure_perplexity(net, x, y, ThresholdSet({0.5, 0.9, 1.0}));
  ASSERT_EQ(t.layers(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_LE(t.perplexity[i][1], t.perplexity[i][0]);
    EXPECT_LT(t.perplexity[i][2], 1e-4);
  }
  for (const auto* p : net.parameters())
    for (float g : p->grad) EXPECT_EQ(g, 0.0f);
}

TEST(MeasurePerplexity, SeparableActivationHasNegligiblePerplexity) {
  // Single conv on a rank-(1,1,1,1) input.
  auto net = Network::from_spec("conv:2:3:3:1:1,gap,fc:3:2");
  net.initialize(2);
  std::mt19937_64 rng(2);
  const auto x = tensor_cast<float>(asi::testing::separable_tensor(Shape4(4, 2, 6, 6), rng));
  const auto t = measure_perplexity(net, x, {0, 1, 0, 1}, ThresholdSet::defaults());
  for (double p : t.perplexity[0]) EXPECT_LT(p, 1e-5);
}

TEST(MeasurePerplexity, OnlyTrainableConvolutions) {
  auto net = toy(3);
  net.set_trainable_suffix(2);
  std::mt19937_64 rng(3);
  const auto x = asi::testing::random_tensor<float>(Shape4(4, 3, 8, 8), rng);
  const auto t = measure_perplexity(net, x, {0, 1, 2, 3}, ThresholdSet::defaults());
  ASSERT_EQ(t.layers(), 1u);
  EXPECT_EQ(t.layer_names[0], "conv1");
}
