#pragma once

// Differentiable operations. Shapes are never broadcast implicitly: operands
// must match exactly, and expand() makes repetition explicit.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "danet/tensor.hpp"

namespace danet {

constexpr double kLeakySlope = 0.2;

// [M,K] x [K,N] -> [M,N]
Tensor matmul(const Tensor& a, const Tensor& b);
// x [M,K] * w [K,N] + bias [N]; `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start,
             std::size_t length);
// Repeats size-1 axes of `x` up to `shape` (same rank).
Tensor expand(const Tensor& x, const Shape& shape);

// Treats x as [N, ...] and returns rows x[index[i]]. Backward scatter-adds.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index);
// out[m, :] = sum_t weight[m*taps + t] * x[index[m*taps + t], :] for x [N, C].
Tensor weighted_gather_rows(const Tensor& x, std::span<const std::size_t> index,
                            std::span<const double> weight, std::size_t taps);

Tensor softmax(const Tensor& x, std::size_t axis);
// Pooling keeps the reduced axis with length 1. Max ties resolve to the
// lowest index along the axis.
Tensor max_pool(const Tensor& x, std::size_t axis);
Tensor avg_pool(const Tensor& x, std::size_t axis);

Tensor leaky_relu(const Tensor& x, double slope = kLeakySlope);

struct BatchNormConfig {
  double eps = 1e-5;
  double momentum = 0.1;
};

/// Per-channel batch normalization of x [M, C].
///
/// In training mode normalizes with batch statistics (biased variance) and
/// updates the running buffers in place with the unbiased variance; in
/// evaluation mode uses the running buffers.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  const BatchNormConfig& config = {});

// Inverted dropout: survivors are scaled by 1/(1-p). Identity when !training.
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng, bool training);

// Mean cross-entropy of logits [M, C] against class indices.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Largest |analytic - numeric| / max(1, |numeric|) over every entry of
/// `params`, using central differences of `loss_fn` with step `epsilon`.
double gradient_check(const std::function<Tensor()>& loss_fn,
                      const std::vector<Tensor>& params, double epsilon = 1e-5);

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// "DACK1" container: magic, u32 count, then per entry u32 name length, name,
// u32 rank, u64 dims, raw f64 values. All little-endian.
void save_checkpoint(const std::string& path, const NamedTensors& entries);
NamedTensors load_checkpoint(const std::string& path);

}  // namespace danet
