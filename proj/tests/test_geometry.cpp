#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "danet/geometry.hpp"
#include "danet/ops.hpp"
#include "test_util.hpp"

using namespace danet;
using danet::testutil::random_points;

namespace {

double d2(const Point3& a, const Point3& b) {
  double s = 0;
  for (int i = 0; i < 3; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

bool before(double da, const Point3& pa, std::size_t ia, double db, const Point3& pb, std::size_t ib) {
  if (da != db) return da < db;
  if (pa != pb) return lex_less(pa, pb);
  return ia < ib;
}

// O(N * n) farthest point sampling written from the definition.
std::vector<std::size_t> fps_oracle(const std::vector<Point3>& p, std::size_t n) {
  std::size_t first = 0;
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (lex_less(p[i], p[first])) first = i;
  }
  std::vector<std::size_t> picked{first};
  while (picked.size() < n) {
    std::size_t best = p.size();
    double best_d = -1;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (std::find(picked.begin(), picked.end(), i) != picked.end()) continue;
      double m = std::numeric_limits<double>::infinity();
      for (std::size_t j : picked) m = std::min(m, d2(p[i], p[j]));
      // larger distance first, then canonical order
      if (best == p.size() || m > best_d || (m == best_d && before(0, p[i], i, 0, p[best], best))) {
        best = i;
        best_d = m;
      }
    }
    picked.push_back(best);
  }
  return picked;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

TEST(Fps, CollinearPicksEndpoints) {
  std::vector<Point3> p{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}};
  EXPECT_EQ(farthest_point_sample(p, 2), (std::vector<std::size_t>{0, 3}));
}

TEST(Fps, ExhaustionReturnsEveryIndex) {
  std::mt19937_64 rng(1);
  auto p = random_points(30, rng);
  auto s = farthest_point_sample(p, 30);
  std::sort(s.begin(), s.end());
  EXPECT_EQ(s, all_indices(30));
}

TEST(Fps, MatchesBruteForceOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    auto p = random_points(100, rng);
    EXPECT_EQ(farthest_point_sample(p, 10), fps_oracle(p, 10));
  }
}

TEST(Fps, TiesOnGridAreResolvedCanonically) {
  std::vector<Point3> p;
  for (int x = 0; x < 4; ++x)
    for (int y = 0; y < 4; ++y)
      for (int z = 0; z < 2; ++z) p.push_back({double(x), double(y), double(z)});
  EXPECT_EQ(farthest_point_sample(p, 12), fps_oracle(p, 12));
}

TEST(Fps, SelectionDistancesAreNonincreasing) {
  std::mt19937_64 rng(2);
  auto p = random_points(200, rng);
  std::vector<double> dist;
  farthest_point_sample(p, 50, &dist);
  ASSERT_EQ(dist.size(), 50u);
  EXPECT_TRUE(std::isinf(dist[0]));
  for (std::size_t i = 2; i < dist.size(); ++i) EXPECT_LE(dist[i], dist[i - 1]);
}

TEST(Fps, SelectedPointsDoNotDependOnInputOrder) {
  std::mt19937_64 rng(3);
  auto p = random_points(120, rng);
  p[7] = p[50];  // a duplicate
  std::vector<std::size_t> perm = all_indices(p.size());
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Point3> q;
  for (std::size_t i : perm) q.push_back(p[i]);
  auto a = farthest_point_sample(p, 40), b = farthest_point_sample(q, 40);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(p[a[i]], q[b[i]]);
}

TEST(Fps, RejectsBadCounts) {
  std::vector<Point3> p{{0, 0, 0}};
  EXPECT_THROW(farthest_point_sample(p, 0), std::invalid_argument);
  EXPECT_THROW(farthest_point_sample(p, 2), std::invalid_argument);
}

TEST(Knn, SmallKnownCase) {
  std::vector<Point3> p{{1, 0, 0}, {2, 0, 0}, {3, 0, 0}};
  auto nbr = knn_search_points(p, std::vector<Point3>{{0, 0, 0}}, 2);
  EXPECT_EQ(nbr.neighbors, (std::vector<std::size_t>{0, 1}));
  EXPECT_DOUBLE_EQ(nbr.distances[0], 1.0);
  EXPECT_DOUBLE_EQ(nbr.distances[1], 2.0);
}

TEST(Knn, SelfIsNearestWithK1) {
  std::mt19937_64 rng(4);
  auto p = random_points(50, rng);
  auto nbr = knn_search(p, all_indices(50), 1);
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_EQ(nbr.neighbors[i], i);
    EXPECT_EQ(nbr.distances[i], 0.0);
  }
}

TEST(Knn, KdTreeMatchesExhaustiveSort) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    std::mt19937_64 rng(seed);
    auto p = random_points(200, rng);
    const auto q = all_indices(200);
    auto fast = knn_search(p, q, 16);
    // independent oracle: sort every point by (distance, coordinates, index)
    for (std::size_t i = 0; i < p.size(); ++i) {
      std::vector<std::size_t> order = all_indices(p.size());
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return before(d2(p[a], p[i]), p[a], a, d2(p[b], p[i]), p[b], b);
      });
      for (std::size_t j = 0; j < 16; ++j) ASSERT_EQ(fast.neighbor(i, j), order[j]) << i << "," << j;
    }
    auto brute = knn_search_brute(p, q, 16);
    EXPECT_EQ(fast.neighbors, brute.neighbors);
  }
}

TEST(Knn, KdTreeMatchesBruteOnDegenerateClouds) {
  std::vector<Point3> grid;
  for (int x = 0; x < 6; ++x)
    for (int y = 0; y < 6; ++y)
      for (int z = 0; z < 6; ++z) grid.push_back({double(x), double(y), double(z)});
  std::vector<Point3> same(40, Point3{0.5, 0.5, 0.5});
  for (const auto* p : {&grid, &same}) {
    const auto q = all_indices(p->size());
    EXPECT_EQ(knn_search(*p, q, 20).neighbors, knn_search_brute(*p, q, 20).neighbors);
  }
}

TEST(Knn, DistancesAreNondecreasingAndPaddingRepeatsNearest) {
  std::mt19937_64 rng(6);
  auto p = random_points(5, rng);
  auto nbr = knn_search(p, all_indices(5), 8);
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t j = 1; j < 5; ++j) EXPECT_LE(nbr.distances[r * 8 + j - 1], nbr.distances[r * 8 + j]);
    for (std::size_t j = 5; j < 8; ++j) {
      EXPECT_EQ(nbr.neighbor(r, j), nbr.neighbor(r, 0));
      EXPECT_EQ(nbr.distances[r * 8 + j], nbr.distances[r * 8]);
    }
  }
}

TEST(Kde, CoincidentNeighborGivesKernelPeak) {
  std::vector<Point3> p{{0, 0, 0}};
  auto nbr = knn_search(p, std::vector<std::size_t>{0}, 1);
  EXPECT_NEAR(kde_density(p, nbr, 1.0).values[0], std::pow(2 * M_PI, -1.5), 1e-15);
  EXPECT_NEAR(std::pow(2 * M_PI, -1.5), 0.063494, 1e-6);
  std::vector<Point3> same(6, Point3{1, 2, 3});
  auto nbr6 = knn_search(same, std::vector<std::size_t>{0, 3}, 6);
  for (double d : kde_density(same, nbr6, 1.0).values) EXPECT_NEAR(d, std::pow(2 * M_PI, -1.5), 1e-15);
}

TEST(Kde, MatchesLiteralFormula) {
  std::mt19937_64 rng(7);
  auto p = random_points(60, rng);
  const double sigma = 0.2;
  auto nbr = knn_search(p, all_indices(60), 8);
  auto field = kde_density(p, nbr, sigma);
  for (std::size_t i = 0; i < 60; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 8; ++j) {
      const Point3& q = p[nbr.neighbor(i, j)];
      const double u2 = d2(q, p[i]) / (sigma * sigma);
      s += std::exp(-0.5 * u2) / std::pow(2 * M_PI, 1.5);
    }
    EXPECT_NEAR(field.values[i], s / (8 * sigma), 1e-12 * std::max(1.0, s));
  }
}

TEST(Kde, RejectsNonpositiveBandwidth) {
  std::vector<Point3> p{{0, 0, 0}, {1, 0, 0}};
  auto nbr = knn_search(p, all_indices(2), 2);
  EXPECT_THROW(kde_density(p, nbr, 0.0), std::invalid_argument);
}

TEST(Grouping, IdentityNeighborhoodReshapes) {
  std::mt19937_64 rng(8);
  auto p = random_points(10, rng);
  Tensor f = testutil::random_tensor({10, 4}, rng);
  auto nbr = knn_search(p, all_indices(10), 1);
  Tensor g = group_features(f, nbr);
  EXPECT_EQ(g.shape(), (Shape{10, 1, 4}));
  EXPECT_EQ(testutil::max_abs_diff(g.data(), f.data()), 0.0);
}

TEST(Grouping, DuplicateIndexAccumulatesGradient) {
  NeighborhoodIndex nbr;
  nbr.centers = {0};
  nbr.k = 3;
  nbr.neighbors = {1, 1, 0};
  nbr.distances = {0, 0, 0};
  Tensor f({2, 2}, {1, 2, 3, 4}, true);
  Tensor g = group_features(f, nbr);
  EXPECT_EQ(g.data()[0], 3);
  EXPECT_EQ(g.data()[2], 3);
  sum(g).backward();
  EXPECT_EQ(f.grad()[2], 2.0);
  EXPECT_EQ(f.grad()[0], 1.0);
}

TEST(Grouping, MatchesCopyLoop) {
  std::mt19937_64 rng(9);
  auto p = random_points(40, rng);
  Tensor f = testutil::random_tensor({40, 3}, rng);
  std::vector<std::size_t> centers{0, 5, 17, 39};
  auto nbr = knn_search(p, centers, 6);
  Tensor g = group_features(f, nbr);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t j = 0; j < 6; ++j)
      for (std::size_t c = 0; c < 3; ++c)
        EXPECT_EQ(g.data()[(r * 6 + j) * 3 + c], f.data()[nbr.neighbor(r, j) * 3 + c]);
}

TEST(Interpolation, CoincidentPointCopiesFeature) {
  std::vector<Point3> coarse{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  Tensor f({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  Tensor out = interpolate_features(coarse, f, std::vector<Point3>{{1, 0, 0}});
  EXPECT_NEAR(out.data()[0], 3, 1e-7);
  EXPECT_NEAR(out.data()[1], 4, 1e-7);
}

TEST(Interpolation, EquidistantIsPlainMean) {
  std::vector<Point3> coarse{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {5, 5, 5}};
  Tensor f({4, 1}, {3, 6, 9, 100});
  Tensor out = interpolate_features(coarse, f, std::vector<Point3>{{0, 0, 0}});
  EXPECT_NEAR(out.data()[0], 6.0, 1e-12);
}

TEST(Interpolation, MatchesExhaustiveOracle) {
  std::mt19937_64 rng(10);
  auto coarse = random_points(30, rng), fine = random_points(80, rng);
  Tensor f = testutil::random_tensor({30, 5}, rng);
  Tensor out = interpolate_features(coarse, f, fine);
  for (std::size_t i = 0; i < fine.size(); ++i) {
    std::vector<std::size_t> order = all_indices(30);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return before(d2(coarse[a], fine[i]), coarse[a], a, d2(coarse[b], fine[i]), coarse[b], b);
    });
    double w[3], total = 0;
    for (int t = 0; t < 3; ++t) total += w[t] = 1.0 / (std::sqrt(d2(coarse[order[t]], fine[i])) + 1e-8);
    for (std::size_t c = 0; c < 5; ++c) {
      double v = 0;
      for (int t = 0; t < 3; ++t) v += w[t] / total * f.data()[order[t] * 5 + c];
      EXPECT_NEAR(out.data()[i * 5 + c], v, 1e-12);
    }
  }
}

TEST(Geometry, CentroidNearestIsOrderIndependent) {
  std::mt19937_64 rng(11);
  auto p = random_points(64, rng);
  const std::size_t c = centroid_nearest_index(p);
  std::vector<Point3> q(p.rbegin(), p.rend());
  EXPECT_EQ(q[centroid_nearest_index(q)], p[c]);
}

TEST(Geometry, MeanNearestNeighborDistance) {
  std::vector<Point3> p{{0, 0, 0}, {1, 0, 0}, {3, 0, 0}};
  EXPECT_DOUBLE_EQ(mean_nearest_neighbor_distance(p), (1.0 + 1.0 + 2.0) / 3.0);
  std::vector<Point3> same(3, Point3{1, 1, 1});
  EXPECT_DOUBLE_EQ(mean_nearest_neighbor_distance(same), 1.0);
}
