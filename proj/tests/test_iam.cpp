#include <gtest/gtest.h>

#include <cmath>

#include "danet/iam.hpp"
#include "test_util.hpp"

using namespace danet;
using danet::testutil::random_tensor;

namespace {

Tensor probe(const Tensor& out) {
  std::mt19937_64 rng(31);
  return sum(mul(out, random_tensor(out.shape(), rng, -1, 1, false)));
}

double at(const Tensor& t, std::size_t b, std::size_t c, std::size_t n, std::size_t k) {
  const auto& s = t.shape();
  return t.data()[((b * s[1] + c) * s[2] + n) * s[3] + k];
}

}  // namespace

TEST(Iam, ReductionRatios) {
  for (std::size_t r : {4, 8, 16, 32}) EXPECT_TRUE(iam_reduction_supported(r));
  EXPECT_FALSE(iam_reduction_supported(3));
  EXPECT_EQ(iam_reduced_channels(64, 16), 4u);
  EXPECT_EQ(iam_reduced_channels(6, 4), 2u);
  nn::Rng rng(1);
  EXPECT_THROW(IAMParams::create(8, 5, rng), std::invalid_argument);
}

TEST(Iam, ConstantInputPoolsToConstant) {
  nn::Rng rng(2);
  auto p = IAMParams::create(8, 4, rng);
  p.shared_mlp.zero();
  for (std::size_t c = 0; c < p.reduced_channels; ++c) p.shared_mlp.weight.mutable_data()[c * p.reduced_channels + c] = 1;
  Tensor f = Tensor::full({2, 8, 16, 4}, 0.75);
  auto [en, ek] = encode_spatial(f, p);
  for (double v : en.data()) EXPECT_NEAR(v, 0.75, 1e-15);
  for (double v : ek.data()) EXPECT_NEAR(v, 0.75, 1e-15);
}

TEST(Iam, EncodedShapes) {
  nn::Rng rng(3);
  auto p = IAMParams::create(8, 4, rng);
  std::mt19937_64 r(3);
  Tensor f = random_tensor({2, 8, 16, 4}, r, -1, 1, false);
  auto [en, ek] = encode_spatial(f, p);
  EXPECT_EQ(en.shape(), (Shape{2, 2, 16, 1}));
  EXPECT_EQ(ek.shape(), (Shape{2, 2, 1, 4}));
  EXPECT_EQ(concat({en, permute(ek, {0, 1, 3, 2})}, 2).shape(), (Shape{2, 2, 20, 1}));
}

TEST(Iam, EncodingMatchesPoolingAndMlpLoops) {
  nn::Rng rng(4);
  auto p = IAMParams::create(8, 4, rng);
  std::mt19937_64 r(4);
  Tensor f = random_tensor({2, 8, 5, 3}, r, -1, 1, false);
  auto [en, ek] = encode_spatial(f, p);
  const std::size_t CR = p.reduced_channels;
  auto mlp = [&](const std::vector<double>& pooled, std::size_t o) {
    double a = p.shared_mlp.bias.data()[o];
    for (std::size_t c = 0; c < 8; ++c) a += pooled[c] * p.shared_mlp.weight.data()[c * CR + o];
    return a > 0 ? a : 0.2 * a;
  };
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t n = 0; n < 5; ++n) {
      std::vector<double> pooled(8);
      for (std::size_t c = 0; c < 8; ++c) {
        for (std::size_t k = 0; k < 3; ++k) pooled[c] += at(f, b, c, n, k) / 3;
      }
      for (std::size_t o = 0; o < CR; ++o) EXPECT_NEAR(at(en, b, o, n, 0), mlp(pooled, o), 1e-14);
    }
    for (std::size_t k = 0; k < 3; ++k) {
      std::vector<double> pooled(8);
      for (std::size_t c = 0; c < 8; ++c) {
        for (std::size_t n = 0; n < 5; ++n) pooled[c] += at(f, b, c, n, k) / 5;
      }
      for (std::size_t o = 0; o < CR; ++o) EXPECT_NEAR(at(ek, b, o, 0, k), mlp(pooled, o), 1e-14);
    }
  }
}

TEST(Iam, ZeroAttentionGivesUniformMaps) {
  nn::Rng rng(5);
  auto p = IAMParams::create(8, 4, rng);
  p.zero_attention();
  std::mt19937_64 r(5);
  Tensor f = random_tensor({1, 8, 6, 4}, r, -1, 1, false);
  auto [en, ek] = encode_spatial(f, p);
  auto [an, ak] = attention_maps(en, ek, p);
  for (double v : an.data()) EXPECT_DOUBLE_EQ(v, 1.0 / 6);
  for (double v : ak.data()) EXPECT_DOUBLE_EQ(v, 1.0 / 4);
}

TEST(Iam, AttentionMapsAreSoftmaxOverTheirAxis) {
  nn::Rng rng(6);
  auto p = IAMParams::create(8, 4, rng);
  std::mt19937_64 r(6);
  Tensor f = random_tensor({2, 8, 6, 4}, r, -2, 2, false);
  auto [en, ek] = encode_spatial(f, p);
  auto [an, ak] = attention_maps(en, ek, p);
  ASSERT_EQ(an.shape(), (Shape{2, 8, 6, 1}));
  ASSERT_EQ(ak.shape(), (Shape{2, 8, 1, 4}));
  const std::size_t CR = p.reduced_channels;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 8; ++c) {
      std::vector<double> logit(6);
      double mx = -1e300, z = 0, total = 0;
      for (std::size_t n = 0; n < 6; ++n) {
        double a = p.attn_n_mlp.bias.data()[c];
        for (std::size_t o = 0; o < CR; ++o) a += at(en, b, o, n, 0) * p.attn_n_mlp.weight.data()[o * 8 + c];
        logit[n] = a;
        mx = std::max(mx, a);
      }
      for (double l : logit) z += std::exp(l - mx);
      for (std::size_t n = 0; n < 6; ++n) {
        EXPECT_NEAR(at(an, b, c, n, 0), std::exp(logit[n] - mx) / z, 1e-14);
        total += at(an, b, c, n, 0);
      }
      EXPECT_NEAR(total, 1.0, 1e-14);
      double tk = 0;
      for (std::size_t k = 0; k < 4; ++k) tk += at(ak, b, c, 0, k);
      EXPECT_NEAR(tk, 1.0, 1e-14);
    }
}

TEST(Iam, ZeroAttentionClosedForm) {
  std::mt19937_64 r(7);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<std::size_t> cd(1, 40), nd(1, 20), kd(1, 16);
    const std::size_t C = cd(r), N = nd(r), K = kd(r);
    nn::Rng rng(trial);
    auto p = IAMParams::create(C, 4, rng);
    p.zero_attention();
    Tensor f = random_tensor({2, C, N, K}, r, -3, 3, false);
    Tensor out = apply_iam(f, p);
    const double factor = 1.0 + 1.0 / static_cast<double>(N * K);
    for (std::size_t i = 0; i < f.numel(); ++i) {
      EXPECT_NEAR(out.data()[i], f.data()[i] * factor, 1e-12 * std::max(1.0, std::abs(f.data()[i])));
    }
  }
}

TEST(Iam, MatchesElementwiseOracle) {
  nn::Rng rng(8);
  auto p = IAMParams::create(8, 4, rng);
  std::mt19937_64 r(8);
  Tensor f = random_tensor({2, 8, 5, 3}, r, -1, 1, false);
  auto [en, ek] = encode_spatial(f, p);
  auto [an, ak] = attention_maps(en, ek, p);
  Tensor out = apply_iam(f, p);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 8; ++c)
      for (std::size_t n = 0; n < 5; ++n)
        for (std::size_t k = 0; k < 3; ++k) {
          const double x = at(f, b, c, n, k);
          const double want = x * at(an, b, c, n, 0) * at(ak, b, c, 0, k) + x;
          EXPECT_NEAR(at(out, b, c, n, k), want, 1e-14);
        }
}

TEST(Iam, FullBlockGradientCheck) {
  nn::Rng rng(10);
  auto p = IAMParams::create(8, 4, rng);
  std::mt19937_64 r(10);
  Tensor f = random_tensor({2, 8, 4, 3}, r);
  const double err = gradient_check([&] { return probe(apply_iam(f, p)); },
                                    {f, p.shared_mlp.weight, p.shared_mlp.bias, p.attn_n_mlp.weight,
                                     p.attn_n_mlp.bias, p.attn_k_mlp.weight, p.attn_k_mlp.bias});
  EXPECT_LT(err, 1e-4);
}

TEST(Iam, FlopsDecreaseWithReduction) {
  std::uint64_t prev = ~0ull;
  for (std::size_t r : {4, 8, 16, 32}) {
    const auto f = iam_flops(1, 64, 64, 32, r);
    EXPECT_LT(f, prev);
    prev = f;
  }
}

TEST(Iam, ParameterCount) {
  nn::Rng rng(11);
  auto p = IAMParams::create(64, 16, rng);
  EXPECT_EQ(p.parameter_count(), (64u * 4 + 4) + 2 * (4u * 64 + 64));
}
