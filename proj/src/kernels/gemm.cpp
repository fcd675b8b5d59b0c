#include <algorithm>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "danet/kernels.hpp"

namespace danet::kernels {

namespace {

// Register tile and cache blocking. kMC and kNC are multiples of the tile.
constexpr std::size_t kMR = 6;
constexpr std::size_t kNR = 16;
constexpr std::size_t kKC = 256;
constexpr std::size_t kMC = 96;
constexpr std::size_t kNC = 2048;

typedef double v8d __attribute__((vector_size(64)));

inline v8d load8(const double* p) {
  v8d v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

void check_sizes(std::size_t m, std::size_t n, std::size_t k,
                 std::span<const double> a, std::span<const double> b,
                 std::span<double> c) {
  if (a.size() < m * k || b.size() < k * n || c.size() < m * n) {
    throw std::invalid_argument(
        "gemm: buffers too small for m=" + std::to_string(m) +
        " n=" + std::to_string(n) + " k=" + std::to_string(k));
  }
}

// op(B)[pc:pc+kc, jc:jc+nc] as column panels of kNR, zero padded.
void pack_b(Trans tb, const double* b, std::size_t n, std::size_t k,
            std::size_t pc, std::size_t kc, std::size_t jc, std::size_t nc,
            double* out) {
  const std::size_t panels = (nc + kNR - 1) / kNR;
  for (std::size_t jp = 0; jp < panels; ++jp) {
    double* dst = out + jp * kc * kNR;
    const std::size_t j0 = jc + jp * kNR;
    const std::size_t width = std::min(kNR, jc + nc - j0);
    for (std::size_t p = 0; p < kc; ++p) {
      double* row = dst + p * kNR;
      if (tb == Trans::No) {
        const double* src = b + (pc + p) * n + j0;
        for (std::size_t jj = 0; jj < width; ++jj) row[jj] = src[jj];
      } else {
        for (std::size_t jj = 0; jj < width; ++jj) {
          row[jj] = b[(j0 + jj) * k + pc + p];
        }
      }
      for (std::size_t jj = width; jj < kNR; ++jj) row[jj] = 0.0;
    }
  }
}

// op(A)[ic:ic+mc, pc:pc+kc] as row panels of kMR, zero padded.
void pack_a(Trans ta, const double* a, std::size_t m, std::size_t k,
            std::size_t ic, std::size_t mc, std::size_t pc, std::size_t kc,
            double* out) {
  const std::size_t panels = (mc + kMR - 1) / kMR;
  for (std::size_t ip = 0; ip < panels; ++ip) {
    double* dst = out + ip * kc * kMR;
    const std::size_t i0 = ic + ip * kMR;
    const std::size_t height = std::min(kMR, ic + mc - i0);
    for (std::size_t p = 0; p < kc; ++p) {
      double* col = dst + p * kMR;
      for (std::size_t ii = 0; ii < height; ++ii) {
        col[ii] = ta == Trans::No ? a[(i0 + ii) * k + pc + p]
                                  : a[(pc + p) * m + i0 + ii];
      }
      for (std::size_t ii = height; ii < kMR; ++ii) col[ii] = 0.0;
    }
  }
}

// acc = sum_p pa[p, :]^T pb[p, :] over one kMR x kNR tile.
inline void micro_kernel(std::size_t kc, const double* pa, const double* pb,
                         double* acc) {
  v8d c0[kMR];
  v8d c1[kMR];
  for (std::size_t r = 0; r < kMR; ++r) {
    c0[r] = v8d{};
    c1[r] = v8d{};
  }
  for (std::size_t p = 0; p < kc; ++p) {
    const v8d b0 = load8(pb + p * kNR);
    const v8d b1 = load8(pb + p * kNR + 8);
    const double* ap = pa + p * kMR;
    for (std::size_t r = 0; r < kMR; ++r) {
      c0[r] += ap[r] * b0;
      c1[r] += ap[r] * b1;
    }
  }
  for (std::size_t r = 0; r < kMR; ++r) {
    std::memcpy(acc + r * kNR, &c0[r], sizeof(v8d));
    std::memcpy(acc + r * kNR + 8, &c1[r], sizeof(v8d));
  }
}

std::vector<double>& a_pack_buffer() {
  thread_local std::vector<double> buf;
  return buf;
}

}  // namespace

void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n,
          std::size_t k, std::span<const double> a, std::span<const double> b,
          double beta, std::span<double> c) {
  check_sizes(m, n, k, a, b, c);
  if (m == 0 || n == 0) return;
  double* cp = c.data();
  if (k == 0) {
    if (beta == 0.0) std::fill(cp, cp + m * n, 0.0);
    return;
  }

  std::vector<double> b_pack(kKC * ((std::min(n, kNC) + kNR - 1) / kNR) * kNR);
  const std::size_t m_blocks = (m + kMC - 1) / kMC;

  for (std::size_t jc = 0; jc < n; jc += kNC) {
    const std::size_t nc = std::min(kNC, n - jc);
    for (std::size_t pc = 0; pc < k; pc += kKC) {
      const std::size_t kc = std::min(kKC, k - pc);
      const bool overwrite = pc == 0 && beta == 0.0;
      pack_b(trans_b, b.data(), n, k, pc, kc, jc, nc, b_pack.data());

#pragma omp parallel for schedule(static)
      for (std::size_t blk = 0; blk < m_blocks; ++blk) {
        const std::size_t ic = blk * kMC;
        const std::size_t mc = std::min(kMC, m - ic);
        auto& a_pack = a_pack_buffer();
        a_pack.resize(kKC * kMC);
        pack_a(trans_a, a.data(), m, k, ic, mc, pc, kc, a_pack.data());

        alignas(64) double acc[kMR * kNR];
        for (std::size_t jr = 0; jr < nc; jr += kNR) {
          const std::size_t nr = std::min(kNR, nc - jr);
          const double* pb = b_pack.data() + (jr / kNR) * kc * kNR;
          for (std::size_t ir = 0; ir < mc; ir += kMR) {
            const std::size_t mr = std::min(kMR, mc - ir);
            micro_kernel(kc, a_pack.data() + (ir / kMR) * kc * kMR, pb, acc);
            for (std::size_t r = 0; r < mr; ++r) {
              double* crow = cp + (ic + ir + r) * n + jc + jr;
              const double* arow = acc + r * kNR;
              if (overwrite) {
                for (std::size_t j = 0; j < nr; ++j) crow[j] = arow[j];
              } else {
                for (std::size_t j = 0; j < nr; ++j) crow[j] += arow[j];
              }
            }
          }
        }
      }
    }
  }
}

namespace reference {

void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n,
          std::size_t k, std::span<const double> a, std::span<const double> b,
          double beta, std::span<double> c) {
  check_sizes(m, n, k, a, b, c);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double sum = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = trans_a == Trans::No ? a[i * k + p] : a[p * m + i];
        const double bv = trans_b == Trans::No ? b[p * n + j] : b[j * k + p];
        sum += av * bv;
      }
      c[i * n + j] = beta == 0.0 ? sum : c[i * n + j] + sum;
    }
  }
}

}  // namespace reference

}  // namespace danet::kernels
