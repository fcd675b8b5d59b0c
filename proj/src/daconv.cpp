#include "danet/daconv.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "danet/kernels.hpp"

namespace danet {

using kernels::Trans;

GeometricEncoding fuse_geometry(std::span<const Point3> positions, std::span<const double> densities,
                                const NeighborhoodIndex& nbr, AbsolutePosition absolute) {
  if (densities.size() != positions.size()) {
    throw std::invalid_argument("fuse_geometry: " + std::to_string(densities.size()) +
                                " densities for " + std::to_string(positions.size()) + " points");
  }
  const std::size_t rows = nbr.rows(), k = nbr.k;
  std::vector<double> v(rows * k * kGeometryChannels);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t i = nbr.centers[r];
    if (i >= positions.size()) throw std::out_of_range("fuse_geometry: center index out of range");
    const Point3& pi = positions[i];
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t n = nbr.neighbor(r, j);
      if (n >= positions.size()) throw std::out_of_range("fuse_geometry: neighbor index out of range");
      const Point3& pj = positions[n];
      double* e = v.data() + (r * k + j) * kGeometryChannels;
      const double dx = pj[0] - pi[0], dy = pj[1] - pi[1], dz = pj[2] - pi[2];
      const bool abs_pos = absolute == AbsolutePosition::Include;
      e[0] = abs_pos ? pi[0] : 0.0;
      e[1] = abs_pos ? pi[1] : 0.0;
      e[2] = abs_pos ? pi[2] : 0.0;
      e[3] = dx;
      e[4] = dy;
      e[5] = dz;
      e[6] = densities[n] - densities[i];
      e[7] = std::sqrt(dx * dx + dy * dy + dz * dz);
    }
  }
  return {Tensor({rows, k, kGeometryChannels}, std::move(v))};
}

DAConvParams DAConvParams::create(std::size_t in_channels, std::size_t mid_channels,
                                  std::size_t out_channels, nn::Rng& rng) {
  if (in_channels == 0 || mid_channels == 0 || out_channels == 0) {
    throw std::invalid_argument("DAConvParams: channel counts must be positive");
  }
  DAConvParams p;
  p.in_channels = in_channels;
  p.mid_channels = mid_channels;
  p.out_channels = out_channels;
  p.phi1 = nn::Linear(kGeometryChannels, kPhiHidden, rng);
  p.phi2 = nn::Linear(kPhiHidden, mid_channels, rng);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels * mid_channels));
  p.kernel = nn::uniform({in_channels, mid_channels, out_channels}, bound, rng);
  return p;
}

void DAConvParams::collect_parameters(const std::string& prefix, NamedTensors& out) const {
  phi1.collect_parameters(prefix + ".phi1", out);
  phi2.collect_parameters(prefix + ".phi2", out);
  out.emplace_back(prefix + ".kernel", kernel);
}

std::size_t DAConvParams::parameter_count() const {
  return phi1.parameter_count() + phi2.parameter_count() + kernel.numel();
}

Tensor adaptive_weights(const GeometricEncoding& enc, const DAConvParams& params) {
  const std::size_t s = enc.centers(), k = enc.neighbors();
  Tensor flat = reshape(enc.vectors, {s * k, kGeometryChannels});
  Tensor logits = params.phi2(leaky_relu(params.phi1(flat)));
  return softmax(reshape(logits, {s, k, params.mid_channels}), 1);
}

namespace {

// Rows per block so the outer-product scratch stays around 4 MB.
std::size_t block_rows(std::size_t rows, std::size_t width) {
  const std::size_t target = (std::size_t{1} << 19) / std::max<std::size_t>(width, 1);
  return std::clamp<std::size_t>(target, 16, std::max<std::size_t>(rows, 1));
}

}  // namespace

Tensor daconv_mix(const Tensor& features, const Tensor& weights, const Tensor& kernel) {
  if (features.rank() != 3 || weights.rank() != 3 || kernel.rank() != 3 ||
      features.dim(0) != weights.dim(0) || features.dim(1) != weights.dim(1) ||
      kernel.dim(0) != features.dim(2) || kernel.dim(1) != weights.dim(2)) {
    throw ShapeError("daconv: features " + shape_str(features.shape()) + ", weights " +
                     shape_str(weights.shape()) + " and kernel " + shape_str(kernel.shape()) +
                     " do not conform");
  }
  const std::size_t s = features.dim(0), k = features.dim(1);
  const std::size_t c_in = kernel.dim(0), c_mid = kernel.dim(1), c_out = kernel.dim(2);
  const std::size_t rows = s * k, width = c_in * c_mid;
  const std::size_t block = block_rows(rows, width);

  std::vector<double> out(rows * c_out);
  {
    std::vector<double> x(block * width);
    const auto fd = features.data(), wd = weights.data(), td = kernel.data();
    for (std::size_t r0 = 0; r0 < rows; r0 += block) {
      const std::size_t rc = std::min(block, rows - r0);
      std::span<double> xs(x.data(), rc * width);
      kernels::outer_rows(rc, c_in, c_mid, fd.subspan(r0 * c_in, rc * c_in),
                          wd.subspan(r0 * c_mid, rc * c_mid), xs);
      kernels::gemm(Trans::No, Trans::No, rc, c_out, width, xs, td, 0.0,
                    std::span<double>(out).subspan(r0 * c_out, rc * c_out));
    }
  }

  auto fi = features.impl(), wi = weights.impl(), ti = kernel.impl();
  return make_result(
      "daconv_mix", {s, k, c_out}, std::move(out), {features, weights, kernel},
      [fi, wi, ti, rows, c_in, c_mid, c_out, width, block](std::span<const double> g) {
        auto gf = grad_accumulator(fi);
        auto gw = grad_accumulator(wi);
        auto gt = grad_accumulator(ti);
        std::span<const double> fd = fi->data, wd = wi->data, td = ti->data;
        std::vector<double> x(block * width), gx(block * width);
        for (std::size_t r0 = 0; r0 < rows; r0 += block) {
          const std::size_t rc = std::min(block, rows - r0);
          auto f_blk = fd.subspan(r0 * c_in, rc * c_in);
          auto w_blk = wd.subspan(r0 * c_mid, rc * c_mid);
          auto g_blk = g.subspan(r0 * c_out, rc * c_out);
          std::span<double> xs(x.data(), rc * width), gxs(gx.data(), rc * width);
          if (!gt.empty()) {
            kernels::outer_rows(rc, c_in, c_mid, f_blk, w_blk, xs);
            kernels::gemm(Trans::Yes, Trans::No, width, c_out, rc, xs, g_blk, 1.0, gt);
          }
          if (!gf.empty() || !gw.empty()) {
            kernels::gemm(Trans::No, Trans::Yes, rc, width, c_out, g_blk, td, 0.0, gxs);
            kernels::outer_rows_backward(
                rc, c_in, c_mid, f_blk, w_blk, gxs,
                gf.empty() ? std::span<double>() : gf.subspan(r0 * c_in, rc * c_in),
                gw.empty() ? std::span<double>() : gw.subspan(r0 * c_mid, rc * c_mid));
          }
        }
      });
}

Tensor aggregate_neighbors(const Tensor& x, Aggregation aggregation) {
  if (x.rank() != 3) throw ShapeError("aggregate_neighbors: expected [S, K, C], got " + shape_str(x.shape()));
  const std::size_t s = x.dim(0), c = x.dim(2);
  Tensor pooled = aggregation == Aggregation::Max ? max_pool(x, 1)
                                                  : scale(avg_pool(x, 1), static_cast<double>(x.dim(1)));
  return reshape(pooled, {s, c});
}

Tensor daconv_reformulated(const Tensor& features, const GeometricEncoding& enc,
                           const DAConvParams& params) {
  return aggregate_neighbors(daconv_mix(features, adaptive_weights(enc, params), params.kernel),
                             params.aggregation);
}

Tensor daconv_naive(const Tensor& features, const Tensor& weights, const Tensor& kernel) {
  if (features.rank() != 3 || weights.rank() != 3 || kernel.rank() != 3 ||
      features.dim(0) != weights.dim(0) || features.dim(1) != weights.dim(1) ||
      kernel.dim(0) != features.dim(2) || kernel.dim(1) != weights.dim(2)) {
    throw ShapeError("daconv_naive: features " + shape_str(features.shape()) + ", weights " +
                     shape_str(weights.shape()) + " and kernel " + shape_str(kernel.shape()) +
                     " do not conform");
  }
  const std::size_t s = features.dim(0), k = features.dim(1);
  const std::size_t c_in = kernel.dim(0), c_mid = kernel.dim(1), c_out = kernel.dim(2);
  const auto f = features.data(), w = weights.data(), t = kernel.data();
  std::vector<double> out(s * c_out, 0.0);
  std::vector<double> full(k * c_in * c_out);
  for (std::size_t si = 0; si < s; ++si) {
    // W(j, c_in, :) = sum_m W~(j, m) T(c_in, m, :)
    std::fill(full.begin(), full.end(), 0.0);
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t ci = 0; ci < c_in; ++ci)
        for (std::size_t m = 0; m < c_mid; ++m) {
          const double wt = w[(si * k + j) * c_mid + m];
          for (std::size_t o = 0; o < c_out; ++o)
            full[(j * c_in + ci) * c_out + o] += wt * t[(ci * c_mid + m) * c_out + o];
        }
    // G = sum_j sum_c_in W(j, c_in, :) F(j, c_in)
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t ci = 0; ci < c_in; ++ci) {
        const double fv = f[(si * k + j) * c_in + ci];
        for (std::size_t o = 0; o < c_out; ++o) out[si * c_out + o] += full[(j * c_in + ci) * c_out + o] * fv;
      }
  }
  return Tensor({s, c_out}, std::move(out));
}

Tensor daconv_naive(const Tensor& features, const GeometricEncoding& enc, const DAConvParams& params) {
  NoGradGuard no_grad;
  return daconv_naive(features, adaptive_weights(enc, params), params.kernel);
}

CostReport count_cost(std::uint64_t k, std::uint64_t in_channels, std::uint64_t mid_channels,
                      std::uint64_t out_channels, DAConvVariant variant) {
  if (k == 0 || in_channels == 0 || mid_channels == 0 || out_channels == 0) {
    throw std::invalid_argument("count_cost: all counts must be at least 1");
  }
  CostReport r;
  r.static_weight_count = in_channels * mid_channels * out_channels;
  if (variant == DAConvVariant::Naive) {
    r.dynamic_weight_count = k * in_channels * out_channels;
    r.multiply_add_count = k * mid_channels * in_channels * out_channels + k * in_channels * out_channels;
  } else {
    r.dynamic_weight_count = k * mid_channels;
    r.multiply_add_count = k * in_channels * mid_channels * out_channels + k * mid_channels * out_channels;
  }
  return r;
}

}  // namespace danet
