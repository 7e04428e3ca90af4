#include <gtest/gtest.h>

#include "asi/conv.hpp"
#include "asi/cost_model.hpp"
#include "asi/network.hpp"
#include "asi/optim.hpp"
#include "asi_test/oracles.hpp"
#include "asi_test/suites.hpp"

using namespace asi;
using asi::testing::random_tensor;
using asi::testing::rel_diff;

namespace {
ConvSpec spec_of(std::size_t c, std::size_t co, std::size_t d, std::size_t stride = 1, std::size_t pad = 0) {
  ConvSpec s;
  s.in_channels = c;
  s.out_channels = co;
  s.kernel = d;
  s.stride = stride;
  s.padding = pad;
  return s;
}
}  // namespace

TEST(ConvSpec, OutputShape) {
  EXPECT_EQ(spec_of(3, 4, 3, 1, 1).output_shape(Shape4(2, 3, 8, 8)), Shape4(2, 4, 8, 8));
  EXPECT_EQ(spec_of(3, 4, 3, 2, 0).output_shape(Shape4(2, 3, 7, 6)), Shape4(2, 4, 3, 2));
  EXPECT_THROW(spec_of(3, 4, 3).output_shape(Shape4(2, 2, 8, 8)), ShapeError);
  EXPECT_THROW(spec_of(3, 4, 5).output_shape(Shape4(2, 3, 4, 4)), std::invalid_argument);
}

TEST(ConvForward, IdentityKernel) {
  std::mt19937_64 rng(1);
  const auto x = random_tensor<double>(Shape4(2, 3, 5, 4), rng);
  Tensor4<double> w(Shape4(3, 3, 1, 1));
  for (std::size_t c = 0; c < 3; ++c) w(c, c, 0, 0) = 1.0;
  EXPECT_EQ(conv_forward(x, w, spec_of(3, 3, 1)), x);
}

TEST(ConvForward, ZeroInputZeroOutput) {
  std::mt19937_64 rng(2);
  const auto w = random_tensor<double>(Shape4(4, 3, 3, 3), rng);
  const auto y = conv_forward(Tensor4<double>(Shape4(2, 3, 6, 6)), w, spec_of(3, 4, 3, 1, 1));
  for (double v : y.data()) {
    EXPECT_EQ(v, 0.0);
  }
}

TEST(ConvForward, MatchesNaiveLoops) {
  std::mt19937_64 rng(3);
  const auto x = random_tensor<double>(Shape4(1, 1, 5, 5), rng);
  const auto w = random_tensor<double>(Shape4(1, 1, 3, 3), rng);
  const auto s = spec_of(1, 1, 3);
  EXPECT_LT(rel_diff(conv_forward(x, w, s).data(), asi::testing::naive_conv_forward(x, w, s).data()), 1e-12);
  for (const auto& sp : {spec_of(3, 2, 3, 2, 1), spec_of(3, 2, 5, 1, 2), spec_of(3, 2, 3, 3, 0)}) {
    const auto xx = random_tensor<double>(Shape4(2, 3, 9, 8), rng);
    const auto ww = random_tensor<double>(sp.weight_shape(), rng);
    EXPECT_LT(rel_diff(conv_forward(xx, ww, sp).data(), asi::testing::naive_conv_forward(xx, ww, sp).data()), 1e-12);
  }
}

TEST(ConvForward, FloatWithinTolerance) {
  std::mt19937_64 rng(4);
  const auto x = random_tensor<double>(Shape4(1, 1, 5, 5), rng);
  const auto w = random_tensor<double>(Shape4(1, 1, 3, 3), rng);
  const auto y = conv_forward(tensor_cast<float>(x), tensor_cast<float>(w), spec_of(1, 1, 3));
  const auto ref = asi::testing::naive_conv_forward(x, w, spec_of(1, 1, 3));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-5);
}

TEST(ConvBackwardWeight, ZeroGradOut) {
  std::mt19937_64 rng(5);
  const auto x = random_tensor<double>(Shape4(2, 3, 6, 6), rng);
  const auto s = spec_of(3, 4, 3, 1, 1);
  const auto dw = conv_backward_weight(x, Tensor4<double>(s.output_shape(x.shape())), s);
  for (double v : dw.data()) EXPECT_EQ(v, 0.0);
}

TEST(ConvBackwardWeight, SinglePixelGradientIsInputPatch) {
  std::mt19937_64 rng(6);
  const auto x = random_tensor<double>(Shape4(1, 2, 6, 6), rng);
  const auto s = spec_of(2, 1, 3);
  Tensor4<double> g(s.output_shape(x.shape()));
  g(0, 0, 1, 2) = 1.0;
  const auto dw = conv_backward_weight(x, g, s);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(dw(0, c, i, j), x(0, c, 1 + i, 2 + j));
}

TEST(ConvBackwardWeight, MatchesNaive) {
  std::mt19937_64 rng(7);
  for (const auto& sp : {spec_of(3, 2, 3, 1, 1), spec_of(3, 2, 3, 2, 1), spec_of(3, 4, 1)}) {
    const auto x = random_tensor<double>(Shape4(2, 3, 7, 8), rng);
    const auto g = random_tensor<double>(sp.output_shape(x.shape()), rng);
    EXPECT_LT(rel_diff(conv_backward_weight(x, g, sp).data(),
                       asi::testing::naive_conv_backward_weight(x, g, sp).data()), 1e-12);
  }
}

TEST(ConvBackwardInput, IdentityAndZeroKernels) {
  std::mt19937_64 rng(8);
  const auto g = random_tensor<double>(Shape4(2, 3, 5, 5), rng);
  Tensor4<double> w(Shape4(3, 3, 1, 1));
  for (std::size_t c = 0; c < 3; ++c) w(c, c, 0, 0) = 1.0;
  EXPECT_EQ(conv_backward_input(w, g, spec_of(3, 3, 1), g.shape()), g);
  const Tensor4<double> z(Shape4(3, 3, 3, 3));
  const auto dx = conv_backward_input(z, g, spec_of(3, 3, 3, 1, 1), g.shape());
  for (double v : dx.data()) EXPECT_EQ(v, 0.0);
}

TEST(ConvBackwardInput, MatchesNaive) {
  std::mt19937_64 rng(9);
  for (const auto& sp : {spec_of(3, 2, 3, 1, 1), spec_of(3, 2, 3, 2, 1), spec_of(3, 2, 5, 1, 2)}) {
    const Shape4 s(2, 3, 9, 7);
    const auto w = random_tensor<double>(sp.weight_shape(), rng);
    const auto g = random_tensor<double>(sp.output_shape(s), rng);
    EXPECT_LT(rel_diff(conv_backward_input(w, g, sp, s).data(),
                       asi::testing::naive_conv_backward_input(w, g, sp, s).data()), 1e-12);
  }
}

TEST(ConvBackwardWeightLowrank, FullRanksEqualDense) {
  std::mt19937_64 rng(10);
  const auto x = random_tensor<double>(Shape4(3, 3, 6, 6), rng);
  const auto s = spec_of(3, 4, 3, 1, 1);
  const auto g = random_tensor<double>(s.output_shape(x.shape()), rng);
  const auto f = hosvd_fixed(x, RankVector::full(x.shape()));
  EXPECT_LT(rel_diff(conv_backward_weight_lowrank(f, g, s).data(), conv_backward_weight(x, g, s).data()), 1e-5);
}

TEST(ConvBackwardWeightLowrank, SeparableRankOne) {
  std::mt19937_64 rng(11);
  const auto x = asi::testing::separable_tensor(Shape4(3, 2, 6, 5), rng);
  const auto s = spec_of(2, 3, 3, 1, 1);
  const auto g = random_tensor<double>(s.output_shape(x.shape()), rng);
  const auto f = hosvd_fixed(x, RankVector(1, 1, 1, 1));
  EXPECT_LT(rel_diff(conv_backward_weight_lowrank(f, g, s).data(), conv_backward_weight(reconstruct(f), g, s).data()),
            1e-5);
}

TEST(ConvBackwardWeightLowrank, CounterMatchesFormulaOnSpecCase) {
  std::mt19937_64 rng(12);
  const auto x = random_tensor<double>(Shape4(2, 3, 8, 8), rng);
  const auto s = spec_of(3, 4, 3, 1, 1);
  const RankVector r(2, 2, 2, 2);
  const auto g = random_tensor<double>(s.output_shape(x.shape()), rng);
  MacCounter c;
  conv_backward_weight_lowrank(hosvd_fixed(x, r), g, s, &c);
  EXPECT_EQ(c.macs, cost::flops_asi_backward(cost::LayerCostInputs::make(x.shape(), s, r)));
  MacCounter f;
  conv_forward(x, random_tensor<double>(s.weight_shape(), rng), s, &f);
  EXPECT_EQ(f.macs, 13824u);
}

TEST(ConvBackwardWeightLowrank, RandomCasesAgainstReconstruction) {
  const auto r = asi::testing::lowrank_gradient_suite(3, 30);
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(ConvBackward, FiniteDifferences) {
  const auto r = asi::testing::finite_difference_suite(1);
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(Counters, RandomSameShapes) {
  const auto r = asi::testing::counter_equality_suite(5, 20);
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(Fc, IdentityWeight) {
  std::mt19937_64 rng(13);
  const auto x = asi::testing::random_matrix<double>(3, 4, rng);
  EXPECT_EQ(fc_forward(x, Matrix<double>::identity(4), {}), x);
}

TEST(Fc, LowRankFullRankEqualsDense) {
  std::mt19937_64 rng(14);
  const auto x = asi::testing::random_matrix<double>(5, 7, rng);
  const auto w = asi::testing::random_matrix<double>(3, 7, rng);
  const auto g = asi::testing::random_matrix<double>(5, 3, rng);
  const auto dense = fc_backward(x, w, g).weight;
  const auto low = fc_backward_weight_lowrank(compress_activation(x, 5), g);
  EXPECT_LT(rel_diff(low.data(), dense.data()), 1e-5);
}

TEST(Relu, MaskAndBackward) {
  Tensor4<float> x(Shape4(1, 1, 1, 4), std::vector<float>{-1.0f, 0.0f, 2.0f, 3.0f});
  std::vector<std::uint8_t> mask;
  const auto y = relu_forward(x, mask);
  EXPECT_EQ(y.storage(), (std::vector<float>{0.0f, 0.0f, 2.0f, 3.0f}));
  const auto g = relu_backward(Tensor4<float>(x.shape(), 1.0f), mask);
  EXPECT_EQ(g.storage(), (std::vector<float>{0.0f, 0.0f, 1.0f, 1.0f}));
}

TEST(Sgd, ZeroGradientNoChange) {
  Parameter p("p", {3});
  p.value = {1.0f, 2.0f, 3.0f};
  Parameter* ps[] = {&p};
  sgd_step(ps, SgdOptions{0.1, 0.9, 0.0, 0.0});
  EXPECT_EQ(p.value, (std::vector<float>{1.0f, 2.0f, 3.0f}));
}

TEST(Sgd, PlainStep) {
  Parameter p("p", {2});
  p.value = {1.0f, 1.0f};
  p.grad = {0.25f, -0.5f};
  Parameter* ps[] = {&p};
  sgd_step(ps, SgdOptions{1.0, 0.0, 0.0, 0.0});
  EXPECT_EQ(p.value, (std::vector<float>{0.75f, 1.5f}));
}

TEST(Sgd, ClipHalvesNormFour) {
  Parameter p("p", {2});
  p.grad = {0.0f, 4.0f};
  Parameter* ps[] = {&p};
  const auto st = sgd_step(ps, SgdOptions{1.0, 0.0, 0.0, 2.0});
  EXPECT_DOUBLE_EQ(st.grad_norm, 4.0);
  EXPECT_DOUBLE_EQ(st.clip_scale, 0.5);
  EXPECT_EQ(p.value, (std::vector<float>{0.0f, -2.0f}));
}

TEST(Sgd, FrozenParametersUntouched) {
  Parameter p("p", {1});
  p.grad = {1.0f};
  p.trainable = false;
  Parameter* ps[] = {&p};
  sgd_step(ps, SgdOptions{1.0, 0.0, 0.1, 0.0});
  EXPECT_EQ(p.value[0], 0.0f);
}

namespace {
const char* kToy = "conv:3:4:3:1:1,relu,conv:4:5:3:1:1,relu,gap,fc:5:3";

class DensePolicy final : public ActivationPolicy {
 public:
  ActivationStore<float> store(std::size_t, const Tensor4<float>& x) override { return x; }
};

class FullRankPolicy final : public ActivationPolicy {
 public:
  ActivationStore<float> store(std::size_t, const Tensor4<float>& x) override {
    return hosvd_fixed(x, RankVector::full(x.shape()));
  }
};
}  // namespace

TEST(Network, ParsesSpecAndNamesParameters) {
  const auto net = Network::from_spec(kToy);
  EXPECT_EQ(net.layers().size(), 6u);
  EXPECT_EQ(net.conv_count(), 2u);
  EXPECT_EQ(net.parametric_layers(), (std::vector<std::size_t>{0, 2, 5}));
  std::vector<std::string> names;
  for (const auto* p : net.parameters()) names.push_back(p->name);
  EXPECT_EQ(names, (std::vector<std::string>{"conv0.weight", "conv0.bias", "conv1.weight", "conv1.bias",
                                             "fc0.weight", "fc0.bias"}));
  EXPECT_THROW(Network::from_spec("conv:3:4"), std::invalid_argument);
  EXPECT_THROW(Network::from_spec("pool"), std::invalid_argument);
}

TEST(Network, FrozenPrefixStoresNothingAndGetsNoGradient) {
  auto net = Network::from_spec(kToy);
  net.initialize(1);
  net.set_trainable_suffix(2);
  EXPECT_FALSE(net.is_trainable(0));
  EXPECT_TRUE(net.is_trainable(2));
  std::mt19937_64 rng(1);
  const auto x = random_tensor<float>(Shape4(2, 3, 6, 6), rng);
  Tape tape;
  const auto logits = net.forward(x, nullptr, tape);
  EXPECT_TRUE(std::holds_alternative<std::monostate>(tape.entries[0].conv_store));
  EXPECT_EQ(tape.conv_stored_elements(), 2u * 4 * 6 * 6);
  net.backward(tape, softmax_cross_entropy(logits, {0, 2}).grad);
  for (float g : net.parameters()[0]->grad) EXPECT_EQ(g, 0.0f);
  double s = 0.0;
  for (float g : net.parameters()[2]->grad) s += std::abs(g);
  EXPECT_GT(s, 0.0);
}

TEST(Network, FullRankCompressedStoreMatchesDenseGradient) {
  auto net = Network::from_spec(kToy);
  net.initialize(2);
  std::mt19937_64 rng(2);
  const auto x = random_tensor<float>(Shape4(2, 3, 6, 6), rng);
  const std::vector<int> y{1, 2};
  DensePolicy dense;
  FullRankPolicy full;
  std::vector<std::vector<float>> ref;
  for (ActivationPolicy* p : {static_cast<ActivationPolicy*>(&dense), static_cast<ActivationPolicy*>(&full)}) {
    net.zero_grad();
    Tape tape;
    const auto logits = net.forward(x, p, tape);
    net.backward(tape, softmax_cross_entropy(logits, y).grad);
    std::vector<std::vector<float>> grads;
    for (const auto* q : net.parameters()) grads.push_back(q->grad);
    if (ref.empty()) {
      ref = grads;
    } else {
      for (std::size_t i = 0; i < grads.size(); ++i) {
        std::vector<double> a(grads[i].begin(), grads[i].end()), b(ref[i].begin(), ref[i].end());
        EXPECT_LT(rel_diff(a, b), 1e-4) << i;
      }
    }
  }
}

TEST(Network, BackwardMatchesFiniteDifferences) {
  auto net = Network::from_spec("conv:2:3:3:1:1,relu,gap,fc:3:2");
  net.initialize(3);
  std::mt19937_64 rng(3);
  const auto x = random_tensor<float>(Shape4(3, 2, 5, 5), rng);
  const std::vector<int> y{0, 1, 1};
  Tape tape;
  net.zero_grad();
  net.backward(tape, softmax_cross_entropy(net.forward(x, nullptr, tape), y).grad);
  for (Parameter* p : net.parameters()) {
    std::vector<double> an, num;
    for (std::size_t i = 0; i < std::min<std::size_t>(p->size(), 12); ++i) {
      const float v0 = p->value[i];
      const float h = 1e-3f;
      auto loss_at = [&](float v) {
        p->value[i] = v;
        Tape t;
        return softmax_cross_entropy(net.forward(x, nullptr, t), y).loss;
      };
      const double lp = loss_at(v0 + h), lm = loss_at(v0 - h);
      p->value[i] = v0;
      num.push_back((lp - lm) / (2.0 * static_cast<double>(h)));
      an.push_back(p->grad[i]);
    }
    EXPECT_LT(rel_diff(num, an), 1e-2) << p->name;
  }
}

TEST(SoftmaxCrossEntropy, UniformLogits) {
  Matrix<float> z(2, 4);
  const auto r = softmax_cross_entropy(z, {0, 3});
  EXPECT_NEAR(r.loss, std::log(4.0), 1e-6);
  EXPECT_NEAR(r.grad(0, 0), (0.25 - 1.0) / 2.0, 1e-7);
  EXPECT_NEAR(r.grad(1, 1), 0.25 / 2.0, 1e-7);
  EXPECT_THROW(softmax_cross_entropy(z, {0, 4}), std::out_of_range);
}
