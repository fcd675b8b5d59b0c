#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "danet/kernels.hpp"
#include "danet/ops.hpp"
#include "op_gradient_cases.hpp"
#include "test_util.hpp"

using namespace danet;
using danet::testutil::away_from_zero;
using danet::testutil::probe;
using danet::testutil::random_tensor;

namespace {

constexpr double kGradTol = 1e-4;

}  // namespace

TEST(Tensor, ConstructionAndShapeChecks) {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.dim(1), 3u);
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), ShapeError);
  EXPECT_DOUBLE_EQ(Tensor::scalar(4.5).item(), 4.5);
  EXPECT_THROW(t.item(), ShapeError);
}

TEST(Tensor, CopiesShareStorageCloneDoesNot) {
  Tensor a({2}, {1, 2});
  Tensor b = a;
  Tensor c = a.clone();
  a.mutable_data()[0] = 7;
  EXPECT_EQ(b.data()[0], 7);
  EXPECT_EQ(c.data()[0], 1);
}

TEST(Tensor, MatmulKnownValues) {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b({3, 2}, {7, 8, 9, 10, 11, 12});
  Tensor c = matmul(a, b);
  const std::vector<double> expect{58, 64, 139, 154};
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), expect);
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Tensor, NoImplicitBroadcast) {
  Tensor a({2, 3}), b({3});
  EXPECT_THROW(add(a, b), ShapeError);
  Tensor e = expand(Tensor({1, 3}, {1, 2, 3}), {2, 3});
  EXPECT_EQ(e.data()[4], 2);
}

TEST(Tensor, PermuteMovesAxes) {
  Tensor x({2, 3}, {0, 1, 2, 3, 4, 5});
  Tensor y = permute(x, {1, 0});
  ASSERT_EQ(y.shape(), (Shape{3, 2}));
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{0, 3, 1, 4, 2, 5}));
}

TEST(Tensor, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({3, 4, 5}, rng, -20, 20, false);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    Tensor s = softmax(x, axis);
    Tensor total = sum(s);
    EXPECT_NEAR(total.item(), 3.0 * 4.0 * 5.0 / static_cast<double>(x.dim(axis)), 1e-12);
  }
}

TEST(Tensor, MaxPoolTiesPickLowestIndex) {
  Tensor x({1, 3}, {2.0, 2.0, 1.0}, true);
  Tensor y = max_pool(x, 1);
  sum(y).backward();
  EXPECT_EQ(x.grad()[0], 1.0);
  EXPECT_EQ(x.grad()[1], 0.0);
}

TEST(Tensor, CrossEntropyMatchesHandComputation) {
  Tensor logits({2, 3}, {1, 2, 3, 0, 0, 0});
  std::vector<int> labels{2, 1};
  const double l0 = -3 + std::log(std::exp(1) + std::exp(2) + std::exp(3));
  const double l1 = std::log(3.0);
  EXPECT_NEAR(cross_entropy(logits, labels).item(), 0.5 * (l0 + l1), 1e-14);
  std::vector<int> bad{0, 3};
  EXPECT_THROW(cross_entropy(logits, bad), std::out_of_range);
}

TEST(Tensor, BatchNormTrainingMatchesFormulaAndUpdatesBuffers) {
  Tensor x({4, 1}, {1, 2, 3, 6});
  Tensor g({1}, std::vector<double>{2}), b({1}, std::vector<double>{0.5});
  Tensor rm({1}, std::vector<double>{0}), rv({1}, std::vector<double>{1});
  Tensor y = batch_norm(x, g, b, rm, rv, true);
  const double mu = 3, var = (4 + 1 + 0 + 9) / 4.0;
  EXPECT_NEAR(y.data()[3], 2 * (6 - mu) / std::sqrt(var + 1e-5) + 0.5, 1e-12);
  EXPECT_NEAR(rm.data()[0], 0.1 * mu, 1e-15);
  EXPECT_NEAR(rv.data()[0], 0.9 + 0.1 * var * 4 / 3, 1e-15);
  Tensor e = batch_norm(x, g, b, rm, rv, false);
  EXPECT_NEAR(e.data()[0], 2 * (1 - rm.data()[0]) / std::sqrt(rv.data()[0] + 1e-5) + 0.5, 1e-12);
}

TEST(Tensor, DropoutIsInvertedAndIdentityInEval) {
  std::mt19937_64 rng(3);
  Tensor x = Tensor::full({10000}, 1.0);
  Tensor y = dropout(x, 0.4, rng, true);
  double total = 0;
  for (double v : y.data()) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 1 / 0.6) < 1e-15);
    total += v;
  }
  EXPECT_NEAR(total / 10000, 1.0, 0.05);
  Tensor z = dropout(x, 0.4, rng, false);
  EXPECT_EQ(testutil::max_abs_diff(x.data(), z.data()), 0.0);
}

TEST(Tensor, GradientAccumulatesAcrossUses) {
  Tensor x({2}, {1, 2}, true);
  Tensor y = add(mul(x, x), x);  // d/dx = 2x + 1
  sum(y).backward();
  EXPECT_EQ(x.grad()[0], 3);
  EXPECT_EQ(x.grad()[1], 5);
}

TEST(Tensor, NoGradGuardStopsRecording) {
  Tensor x({2}, {1, 2}, true);
  NoGradGuard guard;
  Tensor y = mul(x, x);
  EXPECT_TRUE(y.is_leaf());
  EXPECT_FALSE(y.requires_grad());
}

TEST(Tensor, FiniteChecksNameTheOp) {
  Tensor x({1}, std::vector<double>{1e308});
  try {
    scale(x, 10.0);
    FAIL() << "expected domain_error";
  } catch (const std::domain_error& e) {
    EXPECT_NE(std::string(e.what()).find("scale"), std::string::npos);
  }
}

TEST(Tensor, CheckpointRoundTripIsBitExact) {
  std::mt19937_64 rng(5);
  NamedTensors entries{{"a", random_tensor({3, 4}, rng)}, {"b.c", random_tensor({7}, rng)},
                       {"s", Tensor::scalar(-0.0)}};
  const auto path = std::filesystem::temp_directory_path() / "danet_ckpt_test.dack";
  save_checkpoint(path.string(), entries);
  NamedTensors back = load_checkpoint(path.string());
  ASSERT_EQ(back.size(), entries.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].first, entries[i].first);
    EXPECT_EQ(back[i].second.shape(), entries[i].second.shape());
    EXPECT_EQ(std::memcmp(back[i].second.data().data(), entries[i].second.data().data(),
                          sizeof(double) * back[i].second.numel()),
              0);
  }
  std::filesystem::remove(path);
}

TEST(Tensor, CheckpointRejectsGarbage) {
  const auto path = std::filesystem::temp_directory_path() / "danet_ckpt_bad.dack";
  {
    std::ofstream(path) << "not a checkpoint";
  }
  EXPECT_THROW(load_checkpoint(path.string()), std::runtime_error);
  std::filesystem::remove(path);
}

TEST(Tensor, EveryOpPassesFiniteDifferenceCheck) {
  for (const auto& c : testutil::op_gradient_cases()) {
    SCOPED_TRACE(c.name);
    EXPECT_LT(c.run(), kGradTol) << c.name;
  }
}

// ---- tuned kernels against the reference loops ----

TEST(Kernels, GemmMatchesReferenceForAllTransposes) {
  std::mt19937_64 rng(2);
  for (std::size_t m : {1, 5, 17, 64}) {
    for (std::size_t n : {1, 3, 16, 33}) {
      for (std::size_t k : {1, 7, 40}) {
        for (auto ta : {kernels::Trans::No, kernels::Trans::Yes}) {
          for (auto tb : {kernels::Trans::No, kernels::Trans::Yes}) {
            for (double beta : {0.0, 1.0}) {
              Tensor a = random_tensor({m * k}, rng, -1, 1, false);
              Tensor b = random_tensor({k * n}, rng, -1, 1, false);
              Tensor c0 = random_tensor({m * n}, rng, -1, 1, false);
              std::vector<double> fast(c0.data().begin(), c0.data().end()), ref = fast;
              kernels::gemm(ta, tb, m, n, k, a.data(), b.data(), beta, fast);
              kernels::reference::gemm(ta, tb, m, n, k, a.data(), b.data(), beta, ref);
              ASSERT_LT(testutil::max_abs_diff(fast, ref), 1e-12) << m << "x" << n << "x" << k;
            }
          }
        }
      }
    }
  }
}

TEST(Kernels, GemmRowResultDoesNotDependOnMatrixHeight) {
  std::mt19937_64 rng(8);
  const std::size_t n = 37, k = 53;
  Tensor a = random_tensor({100 * k}, rng, -1, 1, false), b = random_tensor({k * n}, rng, -1, 1, false);
  std::vector<double> tall(100 * n), one(n);
  kernels::gemm(kernels::Trans::No, kernels::Trans::No, 100, n, k, a.data(), b.data(), 0, tall);
  for (std::size_t r : {0, 13, 99}) {
    kernels::gemm(kernels::Trans::No, kernels::Trans::No, 1, n, k, a.data().subspan(r * k, k), b.data(), 0, one);
    EXPECT_EQ(std::memcmp(one.data(), tall.data() + r * n, n * sizeof(double)), 0);
  }
}

TEST(Kernels, OuterRowsMatchesReference) {
  std::mt19937_64 rng(4);
  const std::size_t rows = 37, ca = 9, cb = 5;
  Tensor a = random_tensor({rows * ca}, rng, -1, 1, false), b = random_tensor({rows * cb}, rng, -1, 1, false);
  Tensor g = random_tensor({rows * ca * cb}, rng, -1, 1, false);
  std::vector<double> fast(rows * ca * cb), ref(fast.size());
  kernels::outer_rows(rows, ca, cb, a.data(), b.data(), fast);
  kernels::reference::outer_rows(rows, ca, cb, a.data(), b.data(), ref);
  EXPECT_EQ(testutil::max_abs_diff(fast, ref), 0.0);
  std::vector<double> da(rows * ca, 0.5), db(rows * cb, -0.5), rda = da, rdb = db;
  kernels::outer_rows_backward(rows, ca, cb, a.data(), b.data(), g.data(), da, db);
  kernels::reference::outer_rows_backward(rows, ca, cb, a.data(), b.data(), g.data(), rda, rdb);
  EXPECT_LT(testutil::max_abs_diff(da, rda), 1e-13);
  EXPECT_LT(testutil::max_abs_diff(db, rdb), 1e-13);
}

TEST(Tensor, SmallKnownCases) {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor eye({2, 2}, {1, 0, 0, 1});
  EXPECT_EQ(testutil::max_abs_diff(matmul(a, eye).data(), a.data()), 0.0);
  Tensor s = softmax(Tensor({3}, {0, 0, 0}), 0);
  for (double v : s.data()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(leaky_relu(Tensor({1}, std::vector<double>{-1.0}), 0.2).data()[0], -0.2);
  Tensor x({3}, {4, -1, 2}, true);
  sum(x).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Tensor, LinearLayerGradientIsTight) {
  std::mt19937_64 rng(12);
  Tensor x = random_tensor({1, 6}, rng), w = random_tensor({6, 4}, rng);
  EXPECT_LT(gradient_check([&] { return probe(linear(x, w, Tensor())); }, {x, w}), 1e-6);
}
