#include <stdexcept>

#include "danet/kernels.hpp"

namespace danet::kernels {

namespace {

void check(std::size_t rows, std::size_t cols_a, std::size_t cols_b,
           std::span<const double> a, std::span<const double> b,
           std::size_t out_size) {
  if (a.size() != rows * cols_a || b.size() != rows * cols_b ||
      out_size != rows * cols_a * cols_b) {
    throw std::invalid_argument("outer_rows: inconsistent buffer sizes");
  }
}

}  // namespace

void outer_rows(std::size_t rows, std::size_t cols_a, std::size_t cols_b,
                std::span<const double> a, std::span<const double> b,
                std::span<double> out) {
  check(rows, cols_a, cols_b, a, b, out.size());
  const std::size_t width = cols_a * cols_b;
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) {
    const double* ar = a.data() + r * cols_a;
    const double* br = b.data() + r * cols_b;
    double* o = out.data() + r * width;
    for (std::size_t i = 0; i < cols_a; ++i) {
      const double av = ar[i];
      double* oi = o + i * cols_b;
      for (std::size_t j = 0; j < cols_b; ++j) oi[j] = av * br[j];
    }
  }
}

void outer_rows_backward(std::size_t rows, std::size_t cols_a,
                         std::size_t cols_b, std::span<const double> a,
                         std::span<const double> b, std::span<const double> g,
                         std::span<double> da, std::span<double> db) {
  check(rows, cols_a, cols_b, a, b, g.size());
  const std::size_t width = cols_a * cols_b;
  const bool want_a = !da.empty();
  const bool want_b = !db.empty();
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) {
    const double* ar = a.data() + r * cols_a;
    const double* br = b.data() + r * cols_b;
    const double* gr = g.data() + r * width;
    if (want_a) {
      double* dar = da.data() + r * cols_a;
      for (std::size_t i = 0; i < cols_a; ++i) {
        const double* gi = gr + i * cols_b;
        double s = 0.0;
        for (std::size_t j = 0; j < cols_b; ++j) s += gi[j] * br[j];
        dar[i] += s;
      }
    }
    if (want_b) {
      double* dbr = db.data() + r * cols_b;
      for (std::size_t i = 0; i < cols_a; ++i) {
        const double* gi = gr + i * cols_b;
        const double av = ar[i];
        for (std::size_t j = 0; j < cols_b; ++j) dbr[j] += gi[j] * av;
      }
    }
  }
}

namespace reference {

void outer_rows(std::size_t rows, std::size_t cols_a, std::size_t cols_b,
                std::span<const double> a, std::span<const double> b,
                std::span<double> out) {
  check(rows, cols_a, cols_b, a, b, out.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < cols_a; ++i)
      for (std::size_t j = 0; j < cols_b; ++j)
        out[(r * cols_a + i) * cols_b + j] = a[r * cols_a + i] * b[r * cols_b + j];
}

void outer_rows_backward(std::size_t rows, std::size_t cols_a,
                         std::size_t cols_b, std::span<const double> a,
                         std::span<const double> b, std::span<const double> g,
                         std::span<double> da, std::span<double> db) {
  check(rows, cols_a, cols_b, a, b, g.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < cols_a; ++i) {
      for (std::size_t j = 0; j < cols_b; ++j) {
        const double gv = g[(r * cols_a + i) * cols_b + j];
        if (!da.empty()) da[r * cols_a + i] += gv * b[r * cols_b + j];
        if (!db.empty()) db[r * cols_b + j] += gv * a[r * cols_a + i];
      }
    }
  }
}

}  // namespace reference

}  // namespace danet::kernels
