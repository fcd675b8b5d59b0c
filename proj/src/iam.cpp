#include "danet/iam.hpp"

#include <stdexcept>

namespace danet {

bool iam_reduction_supported(std::size_t reduction) {
  return reduction == 4 || reduction == 8 || reduction == 16 || reduction == 32;
}

std::size_t iam_reduced_channels(std::size_t channels, std::size_t reduction) {
  if (!iam_reduction_supported(reduction)) {
    throw std::invalid_argument("IAM: reduction ratio " + std::to_string(reduction) +
                                " not in {4, 8, 16, 32}");
  }
  if (channels == 0) throw std::invalid_argument("IAM: channel count must be positive");
  return (channels + reduction - 1) / reduction;
}

IAMParams IAMParams::create(std::size_t channels, std::size_t reduction, nn::Rng& rng) {
  IAMParams p;
  p.channels = channels;
  p.reduction = reduction;
  p.reduced_channels = iam_reduced_channels(channels, reduction);
  p.shared_mlp = nn::Linear(channels, p.reduced_channels, rng);
  p.attn_n_mlp = nn::Linear(p.reduced_channels, channels, rng);
  p.attn_k_mlp = nn::Linear(p.reduced_channels, channels, rng);
  return p;
}

void IAMParams::zero_attention() {
  attn_n_mlp.zero();
  attn_k_mlp.zero();
}

void IAMParams::collect_parameters(const std::string& prefix, NamedTensors& out) const {
  shared_mlp.collect_parameters(prefix + ".shared", out);
  attn_n_mlp.collect_parameters(prefix + ".attn_n", out);
  attn_k_mlp.collect_parameters(prefix + ".attn_k", out);
}

std::size_t IAMParams::parameter_count() const {
  return shared_mlp.parameter_count() + attn_n_mlp.parameter_count() + attn_k_mlp.parameter_count();
}

Tensor channel_linear(const Tensor& x, const nn::Linear& layer) {
  if (x.rank() != 4 || x.dim(1) != layer.in) {
    throw ShapeError("channel_linear: input " + shape_str(x.shape()) + " does not have " +
                     std::to_string(layer.in) + " channels on axis 1");
  }
  const std::size_t b = x.dim(0), a = x.dim(2), d = x.dim(3);
  Tensor rows = reshape(permute(x, {0, 2, 3, 1}), {b * a * d, layer.in});
  return permute(reshape(layer(rows), {b, a, d, layer.out}), {0, 3, 1, 2});
}

namespace {

void check_input(const Tensor& f, const IAMParams& params) {
  if (f.rank() != 4) throw ShapeError("iam: expected [B, C, N, K], got " + shape_str(f.shape()));
  if (f.dim(1) != params.channels) {
    throw ShapeError("iam: input " + shape_str(f.shape()) + " has " + std::to_string(f.dim(1)) +
                     " channels, module expects " + std::to_string(params.channels));
  }
  if (f.dim(0) == 0 || f.dim(2) == 0 || f.dim(3) == 0) {
    throw ShapeError("iam: empty axis in " + shape_str(f.shape()));
  }
}

}  // namespace

std::pair<Tensor, Tensor> encode_spatial(const Tensor& features, const IAMParams& params) {
  check_input(features, params);
  iam_reduced_channels(params.channels, params.reduction);
  const std::size_t n = features.dim(2), k = features.dim(3);
  Tensor mid_n = avg_pool(features, 3);                           // [B,C,N,1]
  Tensor mid_k = permute(avg_pool(features, 2), {0, 1, 3, 2});    // [B,C,K,1]
  Tensor encoded = leaky_relu(channel_linear(concat({mid_n, mid_k}, 2), params.shared_mlp));
  Tensor out_n = slice(encoded, 2, 0, n);
  Tensor out_k = permute(slice(encoded, 2, n, k), {0, 1, 3, 2});
  return {out_n, out_k};
}

std::pair<Tensor, Tensor> attention_maps(const Tensor& encoded_n, const Tensor& encoded_k,
                                         const IAMParams& params) {
  Tensor a_n = softmax(channel_linear(encoded_n, params.attn_n_mlp), 2);
  Tensor a_k = softmax(channel_linear(encoded_k, params.attn_k_mlp), 3);
  return {a_n, a_k};
}

Tensor apply_iam(const Tensor& features, const IAMParams& params) {
  auto [enc_n, enc_k] = encode_spatial(features, params);
  auto [a_n, a_k] = attention_maps(enc_n, enc_k, params);
  const Shape& s = features.shape();
  Tensor out = mul(mul(features, expand(a_n, s)), expand(a_k, s));
  return add(out, features);
}

std::uint64_t iam_flops(std::uint64_t batch, std::uint64_t channels, std::uint64_t n,
                        std::uint64_t k, std::uint64_t reduction) {
  const std::uint64_t cr = iam_reduced_channels(channels, reduction);
  const std::uint64_t volume = channels * n * k;
  std::uint64_t f = 2 * volume;                   // both average pools
  f += (n + k) * (channels * cr + cr);            // shared MLP with bias and activation
  f += n * (cr * channels + channels);            // group attention MLP
  f += k * (cr * channels + channels);            // local attention MLP
  f += 3 * channels * (n + k);                    // exp, sum and divide of both softmaxes
  f += 3 * volume;                                // two products and the residual
  return batch * f;
}

}  // namespace danet
