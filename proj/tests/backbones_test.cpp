#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "unida/backbones.hpp"
#include "unida/error.hpp"
#include "unida/fft.hpp"
#include "unida/ops.hpp"

using namespace unida;
using unida::testing::check_gradients;
using unida::testing::probe;

namespace {

constexpr double kRelTol = 1e-4;

BackboneConfig tiny(BackboneKind kind) {
  BackboneConfig c;
  c.kind = kind;
  c.in_channels = 2;
  c.seq_len = 16;
  c.feature_dim = 8;
  c.cnn_widths = {4, 6};
  c.cnn_kernels = {4, 3, 3};
  c.n_fourier_modes = 4;
  c.fourier_width = 3;
  c.fourier_features = 5;
  c.n_segments = 4;
  c.patch_size = 4;
  c.embed_dim = 6;
  c.tslanet_layers = 1;
  c.icb_hidden = 5;
  return c;
}

Tensor random_input(Shape shape, std::uint64_t seed, double stddev = 1.0, bool rg = false) {
  Rng rng(seed);
  return Tensor::randn(std::move(shape), rng, stddev, rg);
}

std::vector<Tensor> smooth_leaves(const Backbone& model) {
  std::vector<Tensor> out;
  for (const auto& p : model.parameters()) {
    const bool straight_through = p.name.find("priority") != std::string::npos ||
                                  p.name.find("threshold") != std::string::npos;
    if (!straight_through) out.push_back(p.tensor);
  }
  return out;
}

constexpr BackboneKind kAllKinds[] = {BackboneKind::Cnn, BackboneKind::Fno, BackboneKind::S3, BackboneKind::TslaNet};

}  // namespace

TEST(BackboneConfig, KindNamesRoundTrip) {
  for (BackboneKind k : kAllKinds) EXPECT_EQ(parse_backbone_kind(to_string(k)), k);
  EXPECT_EQ(parse_backbone_kind("TSLANet"), BackboneKind::TslaNet);
  EXPECT_THROW(parse_backbone_kind("lstm"), ConfigError);
}

TEST(BackboneConfig, RejectsInvalidFields) {
  BackboneConfig c = tiny(BackboneKind::Cnn);
  c.feature_dim = 0;
  EXPECT_THROW(c.validate(), ConfigError);

  c = tiny(BackboneKind::Cnn);
  c.seq_len = 3;  // first kernel is 4
  EXPECT_THROW(c.validate(), ConfigError);

  c = tiny(BackboneKind::Fno);
  c.n_fourier_modes = rfft_bins(c.seq_len) + 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c.n_fourier_modes = rfft_bins(c.seq_len);
  EXPECT_NO_THROW(c.validate());

  c = tiny(BackboneKind::TslaNet);
  c.patch_size = c.seq_len + 1;
  EXPECT_THROW(c.validate(), ConfigError);

  Rng rng(1);
  c.patch_size = 64;
  EXPECT_THROW(make_backbone(c, rng), ConfigError);
}

TEST(BackboneConfig, PaddedLength) {
  EXPECT_EQ(padded_length(16, 4), 16u);
  EXPECT_EQ(padded_length(17, 4), 20u);
  EXPECT_EQ(padded_length(1, 5), 5u);
}

TEST(CnnBackbone, OutputShape) {
  BackboneConfig c;
  c.in_channels = 9;
  c.seq_len = 128;
  c.feature_dim = 64;
  Rng rng(3);
  auto model = make_backbone(c, rng);
  const Tensor y = model->forward(random_input({4, 9, 128}, 4), false);
  EXPECT_EQ(y.shape(), (Shape{4, 64}));
}

TEST(CnnBackbone, ZeroInputCollapsesBatch) {
  const BackboneConfig c = tiny(BackboneKind::Cnn);
  Rng rng(5);
  auto model = make_backbone(c, rng);
  const Tensor y = model->forward(Tensor::zeros({3, 2, 16}), false);
  for (std::size_t b = 1; b < 3; ++b)
    for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(y.values()[b * 8 + k], y.values()[k]);
}

TEST(CnnBackbone, GradientMatchesFiniteDifferences) {
  const BackboneConfig c = tiny(BackboneKind::Cnn);
  Rng rng(6);
  auto model = make_backbone(c, rng);
  Tensor x = random_input({2, 2, 16}, 7, 1.0, true);
  std::vector<Tensor> leaves = smooth_leaves(*model);
  leaves.push_back(x);
  const auto r = check_gradients([&] { return probe(model->forward(x, false)); }, leaves);
  EXPECT_LT(r.max_rel_error, kRelTol) << r.worst;
}

TEST(CnnBackbone, DropoutOnlyInTraining) {
  BackboneConfig c = tiny(BackboneKind::Cnn);
  c.dropout = 0.5;
  Rng rng(8);
  auto model = make_backbone(c, rng);
  const Tensor x = random_input({2, 2, 16}, 9);
  const Tensor e1 = model->forward(x, false), e2 = model->forward(x, false);
  EXPECT_EQ(std::vector<double>(e1.values().begin(), e1.values().end()),
            std::vector<double>(e2.values().begin(), e2.values().end()));
  const Tensor t1 = model->forward(x, true);
  EXPECT_NE(std::vector<double>(e1.values().begin(), e1.values().end()),
            std::vector<double>(t1.values().begin(), t1.values().end()));
}

TEST(FnoBackbone, CosineWindowBelowOneAfterDc) {
  for (std::size_t bins : {1u, 2u, 9u, 65u}) {
    const auto w = cosine_window(bins);
    ASSERT_EQ(w.size(), bins);
    EXPECT_DOUBLE_EQ(w[0], 1.0);
    for (std::size_t f = 1; f < bins; ++f) {
      EXPECT_LT(w[f], 1.0);
      EXPECT_GT(w[f], 0.0);
      EXPECT_LT(w[f], w[f - 1]);
    }
  }
}

TEST(FnoBackbone, ConstantSignalHasOnlyDcRadius) {
  const BackboneConfig c = tiny(BackboneKind::Fno);
  Rng rng(10);
  FnoBackbone model(c, rng);
  const Tensor x = Tensor::full({2, 2, 16}, 1.75);
  const auto [r, theta] = model.polar_spectrum(x);
  ASSERT_EQ(r.shape(), (Shape{2, 3, 4}));
  for (std::size_t i = 0; i < r.numel(); ++i) {
    const std::size_t mode = i % 4;
    if (mode == 0) {
      EXPECT_GT(r.values()[i], 0.0);
    } else {
      EXPECT_LT(r.values()[i], 1e-12);
      EXPECT_EQ(theta.values()[i], 0.0);
    }
  }
}

TEST(FnoBackbone, OutputShapeForSeveralConfigs) {
  for (std::size_t t : {16u, 31u, 64u}) {
    BackboneConfig c = tiny(BackboneKind::Fno);
    c.seq_len = t;
    c.n_fourier_modes = std::min<std::size_t>(6, rfft_bins(t));
    Rng rng(t);
    auto model = make_backbone(c, rng);
    EXPECT_EQ(model->forward(random_input({3, 2, t}, t + 1), false).shape(), (Shape{3, 8}));
  }
}

TEST(FnoBackbone, GradientThroughPolarBranch) {
  const BackboneConfig c = tiny(BackboneKind::Fno);
  Rng rng(11);
  FnoBackbone model(c, rng);
  Tensor x = random_input({2, 2, 16}, 12, 1.0, true);
  std::vector<Tensor> leaves = smooth_leaves(model);
  leaves.push_back(x);
  const auto polar = check_gradients([&] { return probe(model.frequency_features(x)); }, leaves);
  EXPECT_LT(polar.max_rel_error, kRelTol) << polar.worst;
  const auto full = check_gradients([&] { return probe(model.forward(x, false)); }, leaves);
  EXPECT_LT(full.max_rel_error, kRelTol) << full.worst;
}

TEST(FnoBackbone, ZeroInputHasFiniteGradient) {
  const BackboneConfig c = tiny(BackboneKind::Fno);
  Rng rng(13);
  FnoBackbone model(c, rng);
  Tensor x = Tensor::zeros({1, 2, 16}, true);
  Tensor loss = probe(model.frequency_features(x));
  loss.backward();
  for (double g : x.grad()) EXPECT_TRUE(std::isfinite(g));
}

TEST(S3, SegmentOrderDescendingPriority) {
  const std::vector<double> p{0.3, 0.1, 0.2};
  EXPECT_EQ(segment_order(p), (std::vector<std::size_t>{0, 2, 1}));
  const std::vector<double> ties{0.5, 0.5, 0.5, 0.5};
  EXPECT_EQ(segment_order(ties), (std::vector<std::size_t>{0, 1, 2, 3}));
  const std::vector<double> partial{0.1, 0.7, 0.1, 0.7};
  EXPECT_EQ(segment_order(partial), (std::vector<std::size_t>{1, 3, 0, 2}));
}

TEST(S3, ShuffleMovesSegments) {
  const Tensor x({1, 1, 6}, {1, 2, 3, 4, 5, 6});
  const Tensor p({3}, {0.3, 0.1, 0.2});
  const Tensor y = segment_shuffle(x, p, 0.1);
  EXPECT_EQ(std::vector<double>(y.values().begin(), y.values().end()), (std::vector<double>{1, 2, 5, 6, 3, 4}));
}

TEST(S3, EqualPrioritiesGiveDoubledInput) {
  const Tensor x = random_input({2, 3, 12}, 14);
  const Tensor p = Tensor::full({4}, 0.25);
  const Tensor y = segment_shuffle(x, p, 0.1) + x;
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.values()[i], 2.0 * x.values()[i]);
}

TEST(S3, PermutationIsBijection) {
  Rng rng(15);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(9);
    std::vector<double> p(n);
    for (auto& v : p) v = static_cast<double>(rng.below(4));  // frequent ties
    auto order = segment_order(p);
    std::sort(order.begin(), order.end());
    std::vector<std::size_t> expected(n);
    std::iota(expected.begin(), expected.end(), std::size_t{0});
    EXPECT_EQ(order, expected);
  }
}

TEST(S3, InputGradientIsInversePermutation) {
  Tensor x = random_input({2, 2, 8}, 16, 1.0, true);
  const Tensor p({4}, {0.9, -0.3, 0.4, 0.2});
  const auto r = check_gradients([&] { return probe(segment_shuffle(x, p, 0.1)); }, {x});
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(S3, PriorityGetsStraightThroughGradient) {
  const BackboneConfig c = tiny(BackboneKind::S3);
  Rng rng(17);
  S3Backbone model(c, rng);
  Tensor loss = probe(model.forward(random_input({3, 2, 16}, 18), true));
  loss.backward();
  for (Tensor& p : model.priorities()) {
    ASSERT_TRUE(p.has_grad());
    const double largest = std::accumulate(p.grad().begin(), p.grad().end(), 0.0,
                                           [](double m, double g) { return std::max(m, std::abs(g)); });
    EXPECT_GT(largest, 0.0);
    EXPECT_TRUE(std::all_of(p.grad().begin(), p.grad().end(), [](double g) { return std::isfinite(g); }));
  }
}

TEST(S3, StraightThroughGradientFormula) {
  // Surrogate oracle: d/dp of sum_k <g_k, seg_{pi(k)}> * log softmax(p / tau)_{pi(k)}.
  const Tensor x({1, 1, 6}, {1, -2, 0.5, 3, -1, 2});
  Tensor p({3}, {0.3, 0.1, 0.2}, true);
  const double tau = 0.1;
  const std::vector<double> g{0.7, -0.4, 1.3, 0.2, -0.9, 0.5};
  Tensor y = segment_shuffle(x, p, tau);
  Tensor loss = sum(y * Tensor({1, 1, 6}, g));
  loss.backward();

  const std::vector<std::size_t> order{0, 2, 1};
  std::vector<double> a(3, 0.0);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < 2; ++i) a[order[k]] += g[k * 2 + i] * x.values()[order[k] * 2 + i];
  std::vector<double> w{std::exp(3.0), std::exp(1.0), std::exp(2.0)};
  const double z = w[0] + w[1] + w[2];
  const double total = a[0] + a[1] + a[2];
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(p.grad()[i], (a[i] - w[i] / z * total) / tau, 1e-10);
}

TEST(S3, PadsIndivisibleLength) {
  BackboneConfig c = tiny(BackboneKind::S3);
  c.seq_len = 14;
  Rng rng(19);
  S3Backbone model(c, rng);
  const Tensor x = random_input({2, 2, 14}, 20);
  EXPECT_EQ(model.stitched(x).shape(), (Shape{2, 2, 16}));
  EXPECT_EQ(model.forward(x, false).shape(), (Shape{2, 8}));
}

TEST(S3, GradientMatchesFiniteDifferencesExceptPriority) {
  const BackboneConfig c = tiny(BackboneKind::S3);
  Rng rng(21);
  S3Backbone model(c, rng);
  Tensor x = random_input({2, 2, 16}, 22, 1.0, true);
  std::vector<Tensor> leaves = smooth_leaves(model);
  leaves.push_back(x);
  const auto r = check_gradients([&] { return probe(model.forward(x, false)); }, leaves);
  EXPECT_LT(r.max_rel_error, kRelTol) << r.worst;
}

TEST(Tslanet, TiedConvolutionsGiveEqualTerms) {
  Rng rng(23);
  nn::Conv1d conv(6, 5, 3, rng, 1);
  const Tensor s = random_input({2, 6, 4}, 24);
  const IcbTerms t = icb_terms(s, conv, conv);
  ASSERT_EQ(t.a1.shape(), t.a2.shape());
  for (std::size_t i = 0; i < t.a1.numel(); ++i) EXPECT_EQ(t.a1.values()[i], t.a2.values()[i]);
}

TEST(Tslanet, IcbMatchesDirectFormula) {
  Rng rng(25);
  nn::Conv1d c1(3, 4, 1, rng), c2(3, 4, 3, rng, 1), c3(4, 3, 1, rng);
  const Tensor s = random_input({1, 3, 5}, 26);
  const Tensor out = interactive_conv_block(s, c1, c2, c3);
  const Tensor u = c1(s), v = c2(s);
  const Tensor expected = c3(gelu(u) * v + gelu(v) * u);
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_NEAR(out.values()[i], expected.values()[i], 1e-14);
}

TEST(Tslanet, ThresholdGateIsHardWithStraightThroughGradient) {
  const Tensor power({4}, {0.1, 0.6, 0.4, 2.0});
  Tensor logit = Tensor::scalar(0.0, true);  // threshold 0.5
  Tensor m = threshold_gate(power, logit, 0.1);
  EXPECT_EQ(std::vector<double>(m.values().begin(), m.values().end()), (std::vector<double>{0, 1, 0, 1}));
  Tensor loss = sum(m);
  loss.backward();
  double expected = 0;
  for (double pv : power.values()) {
    const double s = 1.0 / (1.0 + std::exp(-(pv - 0.5) / 0.1));
    expected += s * (1 - s) * (-0.25 / 0.1);
  }
  EXPECT_NEAR(logit.grad()[0], expected, 1e-12);
  EXPECT_LT(logit.grad()[0], 0.0);
}

TEST(Tslanet, OutputShapeAndPadding) {
  BackboneConfig c = tiny(BackboneKind::TslaNet);
  c.seq_len = 18;
  Rng rng(27);
  TslaNetBackbone model(c, rng);
  const Tensor x = random_input({3, 2, 18}, 28);
  EXPECT_EQ(model.embed(x).shape(), (Shape{3, 5, 6}));
  EXPECT_EQ(model.forward(x, false).shape(), (Shape{3, 8}));
}

TEST(Tslanet, FullBlockGradientMatchesFiniteDifferences) {
  BackboneConfig c = tiny(BackboneKind::TslaNet);
  c.tslanet_layers = 2;
  Rng rng(29);
  TslaNetBackbone model(c, rng);
  Tensor x = random_input({2, 2, 16}, 30, 1.0, true);
  std::vector<Tensor> leaves = smooth_leaves(model);
  leaves.push_back(x);
  const auto r = check_gradients([&] { return probe(model.forward(x, false)); }, leaves);
  EXPECT_LT(r.max_rel_error, kRelTol) << r.worst;
}

TEST(Tslanet, ThresholdReceivesGradient) {
  const BackboneConfig c = tiny(BackboneKind::TslaNet);
  Rng rng(31);
  TslaNetBackbone model(c, rng);
  Tensor loss = probe(model.forward(random_input({3, 2, 16}, 32), true));
  loss.backward();
  const Tensor& theta = model.layers()[0].threshold_logit;
  ASSERT_TRUE(theta.has_grad());
  EXPECT_TRUE(std::isfinite(theta.grad()[0]));
  EXPECT_NE(theta.grad()[0], 0.0);
}

class AllBackbones : public ::testing::TestWithParam<BackboneKind> {};

TEST_P(AllBackbones, DeterministicForSameSeed) {
  const BackboneConfig c = tiny(GetParam());
  Rng r1(40), r2(40);
  auto a = make_backbone(c, r1);
  auto b = make_backbone(c, r2);
  const Tensor x = random_input({3, 2, 16}, 41);
  const Tensor ya = a->forward(x, false), ya2 = a->forward(x, false), yb = b->forward(x, false);
  for (std::size_t i = 0; i < ya.numel(); ++i) {
    EXPECT_EQ(ya.values()[i], ya2.values()[i]);
    EXPECT_EQ(ya.values()[i], yb.values()[i]);
  }
}

TEST_P(AllBackbones, BatchIndependence) {
  const BackboneConfig c = tiny(GetParam());
  Rng rng(42);
  auto model = make_backbone(c, rng);
  const Tensor x1 = random_input({2, 2, 16}, 43);
  const Tensor x2 = random_input({3, 2, 16}, 44, 5.0);
  const std::array<Tensor, 2> parts{x1, x2};
  const Tensor joint = model->forward(concat(parts, 0), false);
  const Tensor y1 = model->forward(x1, false), y2 = model->forward(x2, false);
  const std::size_t k = c.feature_dim;
  for (std::size_t i = 0; i < y1.numel(); ++i) EXPECT_NEAR(joint.values()[i], y1.values()[i], 1e-10);
  for (std::size_t i = 0; i < y2.numel(); ++i) EXPECT_NEAR(joint.values()[2 * k + i], y2.values()[i], 1e-10);
}

TEST_P(AllBackbones, FiniteOutputForExtremeInput) {
  const BackboneConfig c = tiny(GetParam());
  Rng rng(45);
  auto model = make_backbone(c, rng);
  Rng data(46);
  std::vector<double> v(4 * 2 * 16);
  for (auto& e : v) e = data.uniform(-1e3, 1e3);
  v[0] = 1e3;
  v[1] = -1e3;
  std::fill(v.begin() + 32, v.begin() + 64, 1e3);  // constant sample
  std::fill(v.begin() + 64, v.begin() + 96, 0.0);  // zero sample
  const Tensor y = model->forward(Tensor({4, 2, 16}, v), false);
  EXPECT_EQ(y.shape(), (Shape{4, 8}));
  for (double e : y.values()) EXPECT_TRUE(std::isfinite(e));
}

TEST_P(AllBackbones, RejectsWrongChannelCount) {
  const BackboneConfig c = tiny(GetParam());
  Rng rng(47);
  auto model = make_backbone(c, rng);
  EXPECT_THROW(model->forward(random_input({1, 3, 16}, 48), false), DimensionError);
}

TEST_P(AllBackbones, ParameterNamesAreUnique) {
  const BackboneConfig c = tiny(GetParam());
  Rng rng(49);
  auto model = make_backbone(c, rng);
  const auto params = model->parameters();
  EXPECT_FALSE(params.empty());
  EXPECT_NO_THROW(check_unique_names(params));
  for (const auto& p : params) EXPECT_TRUE(p.tensor.requires_grad()) << p.name;
}

INSTANTIATE_TEST_SUITE_P(Kinds, AllBackbones, ::testing::ValuesIn(kAllKinds),
                         [](const auto& info) { return std::string(to_string(info.param)); });
