#include <gtest/gtest.h>

#include <cmath>

#include "lbam/attention.hpp"
#include "lbam/error.hpp"
#include "test_util.hpp"

using namespace lbam;
using lbam::testing::random_tensor;

namespace {

float gaussian_at(float x, const GaussianActivation& p = GaussianActivation::initial()) {
  return gaussian_attention(Tensor::from_data({1}, {x}), p).item();
}

float update_at(float x, double alpha) { return mask_update(Tensor::from_data({1}, {x}), alpha).item(); }

}  // namespace

TEST(GaussianAttention, ReferenceValues) {
  EXPECT_FLOAT_EQ(gaussian_at(2.0f), 1.1f);
  EXPECT_NEAR(gaussian_at(0.0f), 1.1 * std::exp(-4.0), 1e-7);
  EXPECT_NEAR(gaussian_at(0.0f), 0.0201, 1e-4);
  EXPECT_NEAR(gaussian_at(100.0f), 1.0, 1e-12);
  EXPECT_NEAR(math::gaussian_value<double>(100.0, {1.1, 2.0, 1.0, 1.0}), 1.0, 1e-12);
  // right branch
  EXPECT_NEAR(gaussian_at(3.0f), 1.0 + 0.1 * std::exp(-1.0), 1e-6);
}

TEST(GaussianAttention, ContinuousAtMu) {
  const math::GaussianParams<double> p{1.1, 2.0, 1.0, 1.0};
  for (double d : {1e-3, 1e-6, 1e-9}) {
    EXPECT_LT(std::abs(math::gaussian_value(2.0 - d, p) - math::gaussian_value(2.0 + d, p)), 10 * d);
  }
  EXPECT_DOUBLE_EQ(math::gaussian_value(2.0, p), 1.1);
}

TEST(GaussianAttention, GammaClampedAtFloor) {
  GaussianActivation p = GaussianActivation::initial(1.1, 2.0, -5.0, 1.0);
  EXPECT_NEAR(gaussian_at(1.0f, p), 1.1 * std::exp(-1e-3), 1e-6);
  const auto g = math::gaussian_grad<double>(1.0, {1.1, 2.0, -5.0, 1.0});
  EXPECT_EQ(g.dgamma_l, 0.0);
}

TEST(GaussianAttention, RejectsNonFiniteInput) {
  EXPECT_THROW(gaussian_attention(Tensor::from_data({2}, {1.0f, std::nanf("")}), GaussianActivation::initial()),
               NumericError);
}

TEST(GaussianAttention, OpGradientsMatchScalarDerivatives) {
  const GaussianActivation p = GaussianActivation::initial(1.3, 1.5, 0.7, 2.0);
  Tensor x = Tensor::from_data({6}, {0.0f, 0.8f, 1.2f, 1.9f, 2.6f, 4.0f});
  x.set_requires_grad(true);
  const Tensor y = gaussian_attention(x, p);
  const auto g = grad(ops::sum(y), {x, p.a, p.mu, p.gamma_l, p.gamma_r});
  double da = 0, dmu = 0, dgl = 0, dgr = 0;
  for (int64_t i = 0; i < 6; ++i) {
    const auto s = math::gaussian_grad<double>(x.data()[i], {1.3, 1.5, 0.7, 2.0});
    EXPECT_NEAR(g[0].data()[i], s.dx, 1e-5);
    da += s.da;
    dmu += s.dmu;
    dgl += s.dgamma_l;
    dgr += s.dgamma_r;
  }
  EXPECT_NEAR(g[1].item(), da, 1e-5);
  EXPECT_NEAR(g[2].item(), dmu, 1e-5);
  EXPECT_NEAR(g[3].item(), dgl, 1e-5);
  EXPECT_NEAR(g[4].item(), dgr, 1e-5);
}

TEST(GaussianAttention, DoubleBackwardRefused) {
  Tensor x = Tensor::from_data({2}, {0.5f, 3.0f});
  x.set_requires_grad(true);
  GradOptions o;
  o.create_graph = true;
  EXPECT_THROW(grad(ops::sum(gaussian_attention(x, GaussianActivation::initial())), {x}, o), Error);
}

TEST(MaskUpdate, ReferenceValues) {
  EXPECT_FLOAT_EQ(update_at(0.0f, 0.8), 0.0f);
  EXPECT_FLOAT_EQ(update_at(-1.0f, 0.8), 0.0f);
  for (double a : {0.0, 0.3, 0.8, 2.0}) EXPECT_FLOAT_EQ(update_at(1.0f, a), 1.0f);
  EXPECT_NEAR(update_at(0.5f, 0.8), 0.574349, 1e-6);
  EXPECT_THROW(mask_update(Tensor::ones({1}), -0.1), Error);
}

TEST(MaskUpdate, MonotoneForEveryAlpha) {
  for (double a : {0.0, 0.5, 0.8, 1.0, 3.0}) {
    double prev = -1;
    for (int i = 0; i <= 500; ++i) {
      const double v = math::mask_update_value(i * 0.01, a);
      EXPECT_GE(v, prev);
      prev = v;
    }
  }
}

TEST(MaskUpdate, GradientMatchesScalarDerivative) {
  Tensor x = Tensor::from_data({4}, {0.0f, 0.3f, 1.0f, 4.0f});
  x.set_requires_grad(true);
  const Tensor g = grad(ops::sum(mask_update(x, 0.8)), {x})[0];
  for (int64_t i = 0; i < 4; ++i) EXPECT_NEAR(g.data()[i], math::mask_update_grad<double>(x.data()[i], 0.8), 1e-5);
}

TEST(Handcrafted, ReciprocalAndIndicator) {
  const Tensor x = Tensor::from_data({4}, {0.0f, 0.5f, 1.0f, 0.3f});
  const Tensor a = pconv_attention(x);
  EXPECT_FLOAT_EQ(a.data()[0], 0);
  EXPECT_FLOAT_EQ(a.data()[1], 2);
  EXPECT_FLOAT_EQ(a.data()[2], 1);
  const Tensor m = pconv_mask_update(x);
  EXPECT_FLOAT_EQ(m.data()[0], 0);
  EXPECT_FLOAT_EQ(m.data()[3], 1);
  EXPECT_FLOAT_EQ(ops::sum_value(pconv_mask_update(Tensor::ones({9}))), 9);
}

TEST(Handcrafted, AlphaZeroUpdateEqualsIndicator) {
  const Tensor x = random_tensor({1000}, 3, 0.0, 3.0);
  x.mutable_data()[0] = 0.0f;
  EXPECT_EQ(ops::max_abs_diff(mask_update(x, 0.0), pconv_mask_update(x)), 0.0f);
}

TEST(AttentionLayer, UniformKernelAndInterior) {
  const Tensor k = uniform_mask_kernel(2, 1, false);
  EXPECT_EQ(k.shape(), (Shape{2, 1, 4, 4}));
  EXPECT_FLOAT_EQ(k.data()[5], 1.0f / 16.0f);
  EXPECT_FALSE(k.requires_grad());
  const Tensor mc = mask_conv(Tensor::ones({1, 1, 8, 8}), k);
  ASSERT_EQ(mc.shape(), (Shape{1, 2, 4, 4}));
  // Interior outputs see a full 4×4 window; border ones lose a padded row or column.
  EXPECT_FLOAT_EQ(mc.at({0, 0, 1, 1}), 1.0f);
  EXPECT_FLOAT_EQ(mc.at({0, 1, 2, 2}), 1.0f);
  EXPECT_FLOAT_EQ(mc.at({0, 0, 0, 1}), 0.75f);
  EXPECT_FLOAT_EQ(mc.at({0, 0, 0, 0}), 0.5625f);
}

TEST(AttentionLayer, ZeroFeaturesGiveZeroOutput) {
  Rng rng(1);
  const AttentionConvLayer layer = AttentionConvLayer::create(3, 4, rng);
  const Tensor m = lbam::rand_binary({1, 3, 8, 8}, rng, 0.7);
  const AttentionOutput z = forward_attention_apply(Tensor::zeros({1, 3, 8, 8}), m, layer);
  EXPECT_EQ(ops::sum_value(ops::abs(z.feature)), 0.0);
  const AttentionOutput r = forward_attention_apply(random_tensor({1, 3, 8, 8}, 2), m, layer);
  EXPECT_EQ(ops::max_abs_diff(z.mask, r.mask), 0.0f);
  EXPECT_EQ(r.feature.shape(), (Shape{1, 4, 4, 4}));
  EXPECT_EQ(r.mask.shape(), r.feature.shape());
  EXPECT_THROW(forward_attention_apply(random_tensor({1, 3, 8, 8}, 2), Tensor::ones({1, 3, 4, 4}), layer),
               ShapeError);
}

TEST(AttentionLayer, LearnedCollectsMaskKernelUnlearnedDoesNot) {
  Rng rng(1);
  std::vector<NamedTensor> learned, fixed;
  AttentionConvLayer::create(3, 4, rng, AttentionKind::learned).collect("l", learned);
  AttentionConvLayer::create(3, 4, rng, AttentionKind::unlearned).collect("u", fixed);
  EXPECT_EQ(learned.size(), 6u);
  ASSERT_EQ(fixed.size(), 1u);
  EXPECT_EQ(fixed[0].name, "u.feature_kernel");
}

TEST(PConvOracle, WindowCases) {
  PConvOracleLayer layer;
  layer.feature_kernel = Tensor::ones({1, 1, 4, 4});
  layer.bias = Tensor::from_data({1}, {0.5f});
  layer.stride = 1;
  layer.padding = 0;
  const Tensor f = Tensor::full({1, 1, 4, 4}, 2.0f);
  // fully valid: standard convolution plus bias
  PConvOutput full = pconv_layer_forward(f, Tensor::ones({1, 1, 4, 4}), layer);
  EXPECT_FLOAT_EQ(full.feature.item(), 32.0f + 0.5f);
  EXPECT_FLOAT_EQ(full.mask.item(), 1.0f);
  // one valid pixel: scaled by 16 before bias
  Tensor one = Tensor::zeros({1, 1, 4, 4});
  one.mutable_data()[5] = 1.0f;
  PConvOutput single = pconv_layer_forward(f, one, layer);
  EXPECT_FLOAT_EQ(single.feature.item(), 2.0f * 16.0f + 0.5f);
  // fully invalid: zero output and zero mask
  PConvOutput none = pconv_layer_forward(f, Tensor::zeros({1, 1, 4, 4}), layer);
  EXPECT_FLOAT_EQ(none.feature.item(), 0.0f);
  EXPECT_FLOAT_EQ(none.mask.item(), 0.0f);
}

TEST(PConvOracle, MatchesUnlearnedAttentionLayer) {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    AttentionConvLayer layer = AttentionConvLayer::create(1, 4, rng, AttentionKind::unlearned);
    const Tensor f = rand_uniform({1, 1, 8, 8}, rng, -1, 1);
    const Tensor m = rand_binary({1, 1, 8, 8}, rng, 0.6);
    const AttentionOutput a = forward_attention_apply(f * m, m, layer);
    PConvOracleLayer oracle{layer.feature_kernel, std::nullopt, 2, 1};
    const PConvOutput p = pconv_layer_forward(f, m, oracle);
    EXPECT_LT(ops::max_abs_diff(a.feature, p.feature), 1e-5f);
    EXPECT_EQ(ops::max_abs_diff(a.mask, p.mask), 0.0f);
  }
}

TEST(ReverseCombine, MatchesElementwiseReference) {
  const Tensor dec = random_tensor({1, 512, 4, 4}, 21);
  const Tensor skip = random_tensor({1, 512, 4, 4}, 22);
  const Tensor fmc = random_tensor({1, 512, 4, 4}, 23, 0.0, 4.0);
  const Tensor rmc = random_tensor({1, 512, 4, 4}, 24, 0.0, 4.0);
  const GaussianActivation fp = GaussianActivation::initial(1.2, 1.5, 0.8, 1.3);
  const GaussianActivation rp = GaussianActivation::initial();
  const Tensor c = reverse_attention_combine(dec, skip, fmc, rmc, fp, rp);
  ASSERT_EQ(c.shape(), (Shape{1, 1024, 4, 4}));
  const int64_t half = 512 * 16;
  double worst = 0;
  for (int64_t i = 0; i < half; ++i) {
    const double r1 = dec.data()[i] * math::gaussian_value<double>(rmc.data()[i], {1.1, 2.0, 1.0, 1.0});
    const double r2 = skip.data()[i] * math::gaussian_value<double>(fmc.data()[i], {1.2, 1.5, 0.8, 1.3});
    worst = std::max({worst, std::abs(c.data()[i] - r1), std::abs(c.data()[half + i] - r2)});
  }
  EXPECT_LT(worst, 1e-5);
  EXPECT_THROW(reverse_attention_combine(dec, random_tensor({1, 512, 2, 2}, 1), fmc, rmc, fp, rp), ShapeError);
}

TEST(ReverseCombine, ZeroReverseAttentionZeroesDecoderHalf) {
  const Tensor dec = random_tensor({1, 2, 2, 2}, 31);
  const Tensor skip = random_tensor({1, 3, 2, 2}, 32);
  // a = 0 and a huge left width: g_A ≡ 0 on inputs below μ.
  const GaussianActivation zero = GaussianActivation::initial(0.0, 10.0, 1.0, 1.0);
  const Tensor c = reverse_attention_combine(dec, skip, Tensor::full({1, 3, 2, 2}, 2.0f), Tensor::zeros({1, 2, 2, 2}),
                                             GaussianActivation::initial(), zero);
  EXPECT_EQ(ops::sum_value(ops::abs(ops::slice(c, 1, 0, 2))), 0.0);
  EXPECT_LT(ops::max_abs_diff(ops::slice(c, 1, 2, 3), skip * 1.1), 1e-6f);
}
