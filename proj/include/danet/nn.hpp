#pragma once

#include <cstddef>
#include <random>
#include <string>

#include "danet/ops.hpp"

namespace danet::nn {

using Rng = std::mt19937_64;

// Uniform(-bound, bound) leaf tensor.
Tensor uniform(Shape shape, double bound, Rng& rng, bool requires_grad = true);

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out], undefined when disabled
  std::size_t in = 0;
  std::size_t out = 0;

  Linear() = default;
  // Weights and bias ~ U(-1/sqrt(in), 1/sqrt(in)).
  Linear(std::size_t in_features, std::size_t out_features, Rng& rng, bool with_bias = true);

  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  void zero();
  void collect_parameters(const std::string& prefix, NamedTensors& out) const;
  std::size_t parameter_count() const;
};

struct BatchNorm {
  Tensor gamma, beta;                  // learnable
  Tensor running_mean, running_var;    // buffers
  std::size_t channels = 0;

  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels);

  Tensor operator()(const Tensor& x, bool training);
  void collect_parameters(const std::string& prefix, NamedTensors& out) const;
  void collect_buffers(const std::string& prefix, NamedTensors& out) const;
};

// Copies values of `src` entries into same-named, same-shaped `dst` entries.
// Throws std::runtime_error on any missing name or shape mismatch.
void assign_named(const NamedTensors& src, const NamedTensors& dst);

}  // namespace danet::nn
