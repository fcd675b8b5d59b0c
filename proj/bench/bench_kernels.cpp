// Tuned OpenMP kernels against the serial reference loops.
//
//   bench_kernels [--quick]
//
// Prints one row per case: median wall time of each implementation, the
// speedup and the largest absolute difference between their outputs.

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "danet/daconv.hpp"
#include "danet/geometry.hpp"
#include "danet/kernels.hpp"

using namespace danet;

namespace {

double median_seconds(const std::function<void()>& fn, int reps) {
  std::vector<double> t;
  for (int r = 0; r < reps; ++r) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void row(const std::string& name, double fast, double ref, double diff, double gflop = 0) {
  std::printf("%-34s %11.3f %11.3f %8.1fx %10.2e", name.c_str(), fast * 1e3, ref * 1e3, ref / fast, diff);
  if (gflop > 0) std::printf(" %8.1f", gflop / fast);
  std::printf("\n");
}

void bench_gemm(std::size_t m, std::size_t n, std::size_t k, kernels::Trans ta, kernels::Trans tb, int reps) {
  std::mt19937_64 rng(m * 31 + n * 7 + k);
  auto a = random_values(m * k, rng), b = random_values(k * n, rng);
  std::vector<double> c1(m * n), c2(m * n);
  const double fast = median_seconds([&] { kernels::gemm(ta, tb, m, n, k, a, b, 0, c1); }, reps);
  const double ref = median_seconds([&] { kernels::reference::gemm(ta, tb, m, n, k, a, b, 0, c2); }, reps);
  char name[96];
  std::snprintf(name, sizeof name, "gemm %s%s %zux%zux%zu", ta == kernels::Trans::Yes ? "T" : "N",
                tb == kernels::Trans::Yes ? "T" : "N", m, n, k);
  row(name, fast, ref, max_diff(c1, c2), 2.0 * m * n * k / 1e9);
}

void bench_outer(std::size_t rows, std::size_t ca, std::size_t cb, int reps) {
  std::mt19937_64 rng(rows);
  auto a = random_values(rows * ca, rng), b = random_values(rows * cb, rng), g = random_values(rows * ca * cb, rng);
  std::vector<double> o1(rows * ca * cb), o2(o1.size());
  double fast = median_seconds([&] { kernels::outer_rows(rows, ca, cb, a, b, o1); }, reps);
  double ref = median_seconds([&] { kernels::reference::outer_rows(rows, ca, cb, a, b, o2); }, reps);
  char name[96];
  std::snprintf(name, sizeof name, "outer_rows %zux%zux%zu", rows, ca, cb);
  row(name, fast, ref, max_diff(o1, o2));
  std::vector<double> da1(rows * ca), db1(rows * cb), da2(da1.size()), db2(db1.size());
  fast = median_seconds([&] { kernels::outer_rows_backward(rows, ca, cb, a, b, g, da1, db1); }, reps);
  ref = median_seconds([&] { kernels::reference::outer_rows_backward(rows, ca, cb, a, b, g, da2, db2); }, reps);
  std::snprintf(name, sizeof name, "outer_rows_backward %zux%zux%zu", rows, ca, cb);
  // both accumulate over `reps` calls, so compare per call
  for (double& x : da1) x /= reps;
  for (double& x : da2) x /= reps;
  row(name, fast, ref, max_diff(da1, da2));
}

// One DAConv layer with sum aggregation: the literal K x C_in x C_out weight
// against the reformulated two-step product.
void bench_daconv(std::size_t s, std::size_t k, std::size_t ci, std::size_t cm, std::size_t co, int reps) {
  std::mt19937_64 rng(s + k);
  Tensor f({s, k, ci}, random_values(s * k * ci, rng));
  Tensor w({s, k, cm}, random_values(s * k * cm, rng));
  Tensor t({ci, cm, co}, random_values(ci * cm * co, rng));
  Tensor y1, y2;
  NoGradGuard no_grad;
  const double fast = median_seconds([&] { y1 = aggregate_neighbors(daconv_mix(f, w, t), Aggregation::Sum); }, reps);
  const double ref = median_seconds([&] { y2 = daconv_naive(f, w, t); }, reps);
  char name[96];
  std::snprintf(name, sizeof name, "daconv %zu x K%zu %zu-%zu-%zu", s, k, ci, cm, co);
  std::vector<double> a(y1.data().begin(), y1.data().end()), b(y2.data().begin(), y2.data().end());
  row(name, fast, ref, max_diff(a, b));
}

void bench_knn(std::size_t n, std::size_t k, int reps) {
  std::mt19937_64 rng(n);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Point3> p(n);
  for (auto& q : p) q = {u(rng), u(rng), u(rng)};
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  NeighborhoodIndex a, b;
  const double fast = median_seconds([&] { a = knn_search(p, all, k); }, reps);
  const double ref = median_seconds([&] { b = knn_search_brute(p, all, k); }, std::max(1, reps / 3));
  char name[96];
  std::snprintf(name, sizeof name, "knn kd-tree vs brute %zu pts k%zu", n, k);
  row(name, fast, ref, a.neighbors == b.neighbors ? 0.0 : 1.0);
}

}  // namespace

int main(int argc, char** argv) {
  const bool quick = argc > 1 && std::strcmp(argv[1], "--quick") == 0;
  const int reps = quick ? 3 : 7;
  std::printf("threads %d\n", omp_get_max_threads());
  std::printf("%-34s %11s %11s %9s %10s %8s\n", "case", "tuned ms", "ref ms", "speedup", "max diff", "GFLOP/s");
  using kernels::Trans;
  for (std::size_t s : {64, 256, quick ? 256 : 512}) bench_gemm(s, s, s, Trans::No, Trans::No, reps);
  bench_gemm(2048, 64, 1024, Trans::No, Trans::No, reps);
  bench_gemm(1024, 64, 2048, Trans::Yes, Trans::No, reps);
  bench_gemm(2048, 1024, 64, Trans::No, Trans::Yes, reps);
  bench_outer(32768, 64, 16, reps);
  bench_outer(256, 512, 16, reps);
  bench_daconv(256, 32, 64, 16, 64, reps);
  bench_daconv(64, 30, 64, 16, 64, reps);
  bench_knn(1024, 32, reps);
  bench_knn(quick ? 2048 : 4096, 16, reps);
  return 0;
}
