#pragma once

// Dense compute kernels behind the tensor ops and DAConv.
//
// Two implementations share each signature: the tuned OpenMP kernels in
// `danet::kernels` and the plain loops in `danet::kernels::reference`, which
// the tests and the benchmark use as the yardstick. Every output element of a
// tuned kernel is produced by exactly one thread with a fixed accumulation
// order, so results do not depend on the thread count or on where a row sits
// inside the matrix.

#include <cstddef>
#include <span>

namespace danet::kernels {

enum class Trans { No, Yes };

/// C = op(A) * op(B) + beta * C for row-major matrices, beta in {0, 1}.
///
/// op(A) is m x k and op(B) is k x n. With Trans::Yes the operand is stored
/// transposed (A as k x m, B as n x k).
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n,
          std::size_t k, std::span<const double> a, std::span<const double> b,
          double beta, std::span<double> c);

// out[r, i * cols_b + j] = a[r, i] * b[r, j]
void outer_rows(std::size_t rows, std::size_t cols_a, std::size_t cols_b,
                std::span<const double> a, std::span<const double> b,
                std::span<double> out);

// Adjoint of outer_rows: da[r,i] += sum_j g[r,i,j] b[r,j] and
// db[r,j] += sum_i g[r,i,j] a[r,i]. Either output may be empty to skip it.
void outer_rows_backward(std::size_t rows, std::size_t cols_a,
                         std::size_t cols_b, std::span<const double> a,
                         std::span<const double> b, std::span<const double> g,
                         std::span<double> da, std::span<double> db);

namespace reference {

void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n,
          std::size_t k, std::span<const double> a, std::span<const double> b,
          double beta, std::span<double> c);

void outer_rows(std::size_t rows, std::size_t cols_a, std::size_t cols_b,
                std::span<const double> a, std::span<const double> b,
                std::span<double> out);

void outer_rows_backward(std::size_t rows, std::size_t cols_a,
                         std::size_t cols_b, std::span<const double> a,
                         std::span<const double> b, std::span<const double> g,
                         std::span<double> da, std::span<double> db);

}  // namespace reference

}  // namespace danet::kernels
