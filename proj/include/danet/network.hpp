#pragma once

// Hierarchical point networks built from encoding layers (sampling, grouping,
// optional attention, DAConv blocks), decoding layers (interpolation, MLPs,
// one DAConv) and a fully connected head.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "danet/daconv.hpp"
#include "danet/geometry.hpp"
#include "danet/iam.hpp"
#include "danet/nn.hpp"

namespace danet {

enum class LayerKind { Encode, Decode, FC };
enum class Task { Classification, SemanticSegmentation, PartSegmentation };

std::string task_name(Task task);

struct LayerSpec {
  LayerKind kind = LayerKind::Encode;
  std::optional<std::size_t> n_samples;  // nullopt: one global group
  std::optional<std::size_t> k;          // nullopt: every point
  std::vector<std::size_t> widths;
  std::optional<double> sigma;           // nullopt: derived from the point spacing
  bool use_iam = false;
  std::size_t reduction = 16;
  std::size_t mid_channels = kDefaultMidChannels;
  double dropout = 0.0;                  // FC only
};

struct NetworkSpec {
  Task task = Task::Classification;
  std::size_t in_features = 3;  // xyz plus per-point attributes
  std::vector<LayerSpec> layers;

  std::size_t num_classes() const;
  std::size_t encoder_count() const;
  std::size_t decoder_count() const;
  // Throws std::invalid_argument describing the first broken rule.
  void validate() const;
};

NetworkSpec build_classifier();
NetworkSpec build_semantic_segmenter();
NetworkSpec build_part_segmenter();

/// Line-oriented architecture description, e.g.
///
///   task classification
///   in_features 3
///   E 256 32 64,64,64 sigma=0.1 iam=0
///   E none all 256,512,1024 sigma=none
///   D 256,256 k=16
///   FC 1024,512,256,40 dropout=0.4
///
/// Encoder keys: sigma, iam, r, cmid. Decoder keys: k, cmid. FC keys: dropout.
/// Blank lines and '#' comments are ignored; anything else is an error.
NetworkSpec parse_network_spec(std::istream& in);
NetworkSpec parse_network_spec_string(const std::string& text);
NetworkSpec load_network_spec(const std::string& path);
std::string format_network_spec(const NetworkSpec& spec);

/// Per-sample output shape of one layer.
struct LayerShape {
  std::string name;
  std::size_t points = 0;
  std::size_t neighbors = 0;  // 0 for layers without grouping
  std::size_t channels = 0;

  bool operator==(const LayerShape&) const = default;
};

struct ForwardOptions {
  // Clamp encoder sample counts to the points available instead of failing.
  bool clamp_samples = false;
  // Receives the shape of every layer output when set.
  std::vector<LayerShape>* trace = nullptr;
};

/// Symbolic per-layer shapes for clouds of `n_points` points.
std::vector<LayerShape> walk_shapes(const NetworkSpec& spec, std::size_t n_points,
                                    bool clamp_samples = false);

struct LayerCost {
  std::string name;
  std::size_t centers = 0;
  std::size_t k = 0;
  std::size_t in_channels = 0;
  std::size_t mid_channels = 0;
  std::size_t out_channels = 0;
  CostReport naive;
  CostReport reformulated;
};

struct NetworkCost {
  std::uint64_t parameters = 0;
  std::uint64_t flops = 0;  // per sample, a multiply-add counts once
  std::vector<LayerCost> daconv_layers;
};

std::uint64_t count_parameters(const NetworkSpec& spec);
// `reduction` overrides the IAM reduction ratio of every encoder when given.
NetworkCost count_flops(const NetworkSpec& spec, std::size_t n_points,
                        std::optional<std::size_t> reduction = std::nullopt);

class Network {
 public:
  Network(NetworkSpec spec, std::uint64_t seed);

  /// Classification: logits [B, classes]. Segmentation: [B, N, classes].
  /// Every cloud in the batch must have the same number of points and
  /// in_features - 3 attributes.
  Tensor forward(const std::vector<PointCloud>& batch, bool training,
                 const ForwardOptions& options = {});

  const NetworkSpec& spec() const { return spec_; }
  NamedTensors parameters() const;
  NamedTensors buffers() const;
  NamedTensors state() const;  // parameters then buffers
  std::size_t parameter_count() const;

  void save(const std::string& path) const;
  void load(const std::string& path);

  nn::Rng& dropout_rng() { return dropout_rng_; }

 private:
  struct Block {
    DAConvParams conv;
    nn::BatchNorm norm;
  };
  struct Encoder {
    LayerSpec spec;
    std::optional<IAMParams> iam;
    std::vector<Block> blocks;
  };
  struct Decoder {
    LayerSpec spec;
    std::optional<double> sigma;
    std::vector<nn::Linear> mlps;
    std::vector<nn::BatchNorm> mlp_norms;
    Block block;
  };
  struct Head {
    std::vector<nn::Linear> linears;
    std::vector<nn::BatchNorm> norms;
    double dropout = 0.0;
  };
  struct Level;

  Level run_encoder(Encoder& enc, const Level& in, std::size_t index, bool training,
                    const ForwardOptions& options);
  Level run_decoder(Decoder& dec, const Level& coarse, const Level& fine, std::size_t index,
                    bool training, const ForwardOptions& options);
  Tensor run_daconv(Block& block, const Tensor& grouped, const GeometricEncoding& enc,
                    bool aggregate, bool training);
  Tensor run_head(const Tensor& x, bool training);

  NetworkSpec spec_;
  std::vector<Encoder> encoders_;
  std::vector<Decoder> decoders_;
  Head head_;
  nn::Rng dropout_rng_;
};

}  // namespace danet
