#include "danet/nn.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace danet::nn {

Tensor uniform(Shape shape, double bound, Rng& rng, bool requires_grad) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = dist(rng);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

Linear::Linear(std::size_t in_features, std::size_t out_features, Rng& rng, bool with_bias)
    : in(in_features), out(out_features) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
  weight = uniform({in_features, out_features}, bound, rng);
  if (with_bias) bias = uniform({out_features}, bound, rng);
}

void Linear::zero() {
  auto w = weight.mutable_data();
  std::fill(w.begin(), w.end(), 0.0);
  if (bias.defined()) {
    auto b = bias.mutable_data();
    std::fill(b.begin(), b.end(), 0.0);
  }
}

void Linear::collect_parameters(const std::string& prefix, NamedTensors& out_list) const {
  out_list.emplace_back(prefix + ".weight", weight);
  if (bias.defined()) out_list.emplace_back(prefix + ".bias", bias);
}

std::size_t Linear::parameter_count() const {
  return weight.numel() + (bias.defined() ? bias.numel() : 0);
}

BatchNorm::BatchNorm(std::size_t c)
    : gamma(Tensor::full({c}, 1.0)),
      beta(Tensor({c})),
      running_mean(Tensor({c})),
      running_var(Tensor::full({c}, 1.0)),
      channels(c) {
  gamma.set_requires_grad(true);
  beta.set_requires_grad(true);
}

Tensor BatchNorm::operator()(const Tensor& x, bool training) {
  return batch_norm(x, gamma, beta, running_mean, running_var, training);
}

void BatchNorm::collect_parameters(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
}

void BatchNorm::collect_buffers(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".running_mean", running_mean);
  out.emplace_back(prefix + ".running_var", running_var);
}

void assign_named(const NamedTensors& src, const NamedTensors& dst) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : src) by_name[name] = &t;
  for (const auto& [name, t] : dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("missing tensor '" + name + "'");
    if (it->second->shape() != t.shape()) {
      throw std::runtime_error("tensor '" + name + "' has shape " + shape_str(it->second->shape()) +
                               ", expected " + shape_str(t.shape()));
    }
    Tensor target = t;
    auto d = target.mutable_data();
    std::copy(it->second->data().begin(), it->second->data().end(), d.begin());
  }
}

}  // namespace danet::nn
