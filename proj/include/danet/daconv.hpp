#pragma once

// Density adaptive convolution.
//
// For a center i with neighbors j = 1..K, per-neighbor geometry
// L = [p_i, p_j - p_i, d_j - d_i, |p_j - p_i|] drives a small MLP phi whose
// outputs, softmax-normalized over the K neighbors, form the dynamic kernel
// W~ [K, C_mid]. A static kernel T [C_in, C_mid, C_out] completes the weight:
//
//   W(j, c_in, :) = sum_m W~(j, m) T(c_in, m, :)
//   G = sum_j sum_c_in W(j, c_in, :) F(j, c_in)                   (naive)
//     = Agg_j sum_m W~(j, m) sum_c_in T(c_in, m, :) F(j, c_in)    (reformulated)
//
// With Agg = sum the two forms agree exactly; the network uses Agg = max.

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "danet/geometry.hpp"
#include "danet/nn.hpp"

namespace danet {

constexpr std::size_t kGeometryChannels = 8;
constexpr std::size_t kPhiHidden = 16;
constexpr std::size_t kDefaultMidChannels = 16;

enum class Aggregation { Max, Sum };

/// Fusion vectors, one per (center, neighbor): a [centers, K, 8] tensor.
struct GeometricEncoding {
  Tensor vectors;

  std::size_t centers() const { return vectors.dim(0); }
  std::size_t neighbors() const { return vectors.dim(1); }
};

enum class AbsolutePosition { Include, Zero };

/// Builds L for every neighborhood row. `densities` is indexed by point.
/// AbsolutePosition::Zero blanks the p_i block (translation-invariant form).
GeometricEncoding fuse_geometry(std::span<const Point3> positions, std::span<const double> densities,
                                const NeighborhoodIndex& nbr,
                                AbsolutePosition absolute = AbsolutePosition::Include);

struct DAConvParams {
  std::size_t in_channels = 0;
  std::size_t mid_channels = 0;
  std::size_t out_channels = 0;
  Tensor kernel;     // T: [C_in, C_mid, C_out]
  nn::Linear phi1;   // 8 -> 16
  nn::Linear phi2;   // 16 -> C_mid
  Aggregation aggregation = Aggregation::Max;
  std::optional<double> sigma;  // nullopt: bandwidth derived from the group

  static DAConvParams create(std::size_t in_channels, std::size_t mid_channels,
                             std::size_t out_channels, nn::Rng& rng);

  void collect_parameters(const std::string& prefix, NamedTensors& out) const;
  std::size_t parameter_count() const;
};

/// W~ = softmax over the neighbor axis of phi(L): [centers, K, C_mid].
Tensor adaptive_weights(const GeometricEncoding& enc, const DAConvParams& params);

/// Per-neighbor part of the reformulated operator (both 1x1 convolutions):
/// out[s, j, :] = sum_m weights[s, j, m] * sum_c features[s, j, c] * kernel[c, m, :].
/// features [S, K, C_in], weights [S, K, C_mid], kernel [C_in, C_mid, C_out].
Tensor daconv_mix(const Tensor& features, const Tensor& weights, const Tensor& kernel);

// [S, K, C] -> [S, C] by max or sum over the neighbor axis.
Tensor aggregate_neighbors(const Tensor& x, Aggregation aggregation);

Tensor daconv_reformulated(const Tensor& features, const GeometricEncoding& enc,
                           const DAConvParams& params);

/// Literal reference: materializes the full K x C_in x C_out weight and sums
/// over neighbors and input channels. Always sum-aggregated, never recorded.
Tensor daconv_naive(const Tensor& features, const Tensor& weights, const Tensor& kernel);
Tensor daconv_naive(const Tensor& features, const GeometricEncoding& enc, const DAConvParams& params);

enum class DAConvVariant { Naive, Reformulated };

struct CostReport {
  std::uint64_t dynamic_weight_count = 0;
  std::uint64_t static_weight_count = 0;
  std::uint64_t multiply_add_count = 0;
};

/// Weight and multiply-add counts for one neighborhood.
///
/// Naive: dynamic K*C_in*C_out, static C_in*C_mid*C_out, multiply-adds
/// K*C_mid*C_in*C_out to build W plus K*C_in*C_out to apply it.
/// Reformulated: dynamic K*C_mid, static C_in*C_mid*C_out, multiply-adds
/// K*C_in*C_mid*C_out (first 1x1) plus K*C_mid*C_out (second 1x1).
/// The weight function phi is identical in both and not counted.
CostReport count_cost(std::uint64_t k, std::uint64_t in_channels, std::uint64_t mid_channels,
                      std::uint64_t out_channels, DAConvVariant variant);

}  // namespace danet
