#pragma once

// Interactive attention over grouped features F [B, C, N, K]: N runs across
// neighborhood centers (group direction), K across the points of one
// neighborhood (local direction).

#include <cstdint>
#include <string>
#include <utility>

#include "danet/nn.hpp"

namespace danet {

struct IAMParams {
  std::size_t channels = 0;
  std::size_t reduction = 16;
  std::size_t reduced_channels = 0;  // ceil(C / r)
  nn::Linear shared_mlp;             // C -> C/r
  nn::Linear attn_n_mlp;             // C/r -> C
  nn::Linear attn_k_mlp;             // C/r -> C

  /// r must be one of 4, 8, 16, 32.
  static IAMParams create(std::size_t channels, std::size_t reduction, nn::Rng& rng);

  // Zeroes both attention MLPs, which makes the attention maps uniform.
  void zero_attention();
  void collect_parameters(const std::string& prefix, NamedTensors& out) const;
  std::size_t parameter_count() const;
};

bool iam_reduction_supported(std::size_t reduction);
std::size_t iam_reduced_channels(std::size_t channels, std::size_t reduction);

// 1x1 convolution over the channel axis of [B, C, A, D].
Tensor channel_linear(const Tensor& x, const nn::Linear& layer);

/// Average-pools F along K and along N, runs both through the shared MLP
/// as one [B, C, N+K, 1] map and splits the result into
/// ([B, C/r, N, 1], [B, C/r, 1, K]).
std::pair<Tensor, Tensor> encode_spatial(const Tensor& features, const IAMParams& params);

/// (A_N [B, C, N, 1], A_K [B, C, 1, K]), softmax over N and K respectively.
std::pair<Tensor, Tensor> attention_maps(const Tensor& encoded_n, const Tensor& encoded_k,
                                         const IAMParams& params);

// F * A_N * A_K + F with the maps broadcast along their missing axis.
Tensor apply_iam(const Tensor& features, const IAMParams& params);

/// Floating point operations of one IAM block (multiply-adds count once):
/// pooling, the three MLPs, both softmaxes and the residual product.
std::uint64_t iam_flops(std::uint64_t batch, std::uint64_t channels, std::uint64_t n,
                        std::uint64_t k, std::uint64_t reduction);

}  // namespace danet
