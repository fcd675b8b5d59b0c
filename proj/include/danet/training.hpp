#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "danet/dataio.hpp"
#include "danet/network.hpp"

namespace danet {

/// SGD with momentum: v <- mu * v + g; w <- w - lr * v.
struct OptimizerState {
  double learning_rate = 0.1;
  double momentum = 0.9;
  std::vector<std::vector<double>> velocity;  // one buffer per parameter
};

// Throws std::runtime_error when a parameter has no gradient.
void sgd_step(const std::vector<Tensor>& params, OptimizerState& state);

struct Schedule {
  enum class Kind { Cosine, Step };
  Kind kind = Kind::Cosine;
  double lr_init = 0.1;
  double lr_floor = 0.001;
  std::size_t total_epochs = 1;
  std::size_t step_epochs = 10;
  double step_factor = 0.7;

  void validate() const;
};

// Cosine: floor + (init - floor) (1 + cos(pi e / total)) / 2.
// Step: max(floor, init * factor^(e div step_epochs)).
double lr_at(const Schedule& schedule, double epoch);

struct AugmentationConfig {
  double scale_min = 1.0;
  double scale_max = 1.0;
  double translate = 0.0;         // uniform in [-t, t] per axis
  double jitter_sigma = 0.0;
  double jitter_clip = 0.0;
  double rotation_max_deg = 0.0;  // uniform about the vertical (y) axis
  bool shuffle = false;

  static AugmentationConfig identity() { return {}; }
  // Isotropic scale in [0.67, 1.5], translation in [-0.2, 0.2], shuffled.
  static AugmentationConfig training_default();
  void validate() const;
};

PointCloud augment(const PointCloud& cloud, const AugmentationConfig& config, std::uint64_t seed);

struct EvalOptions {
  std::size_t batch_size = 16;
  ForwardOptions forward;
};

/// Fraction of correct predictions (per sample, or per point for
/// segmentation networks).
double evaluate(Network& net, const Dataset& data, const EvalOptions& options = {});

/// Averages the logits of `votes` copies of every sample, each scaled
/// isotropically by a factor in [scale_min, scale_max], then takes the argmax.
/// Copy v of every sample uses the same factor, so equal samples always
/// receive equal votes.
double evaluate_with_voting(Network& net, const Dataset& data, std::size_t votes, std::uint64_t seed,
                            double scale_min = 0.67, double scale_max = 1.5,
                            const EvalOptions& options = {});

// Row-major logits of every sample ([classes] or [points, classes]).
std::vector<std::vector<double>> predict_logits(Network& net, const std::vector<PointCloud>& clouds,
                                                const EvalOptions& options = {});

// Deterministic 64-bit seed from a run seed and a list of indices.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> parts);

struct TrainingConfig {
  std::string arch_path;
  std::string manifest_path;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  Schedule schedule;
  double momentum = 0.9;
  AugmentationConfig augmentation = AugmentationConfig::training_default();
  std::uint64_t seed = 1;
  std::string checkpoint_path = "model.dack";
  std::string metrics_path = "metrics.csv";

  void validate() const;
};

/// key=value lines; relative paths resolve against the file's directory.
/// Keys: arch, manifest, epochs, batch_size, schedule (cosine|step), lr_init,
/// lr_floor, step_epochs, step_factor, momentum, scale_min, scale_max,
/// translate, jitter_sigma, jitter_clip, rotation_deg, shuffle, seed,
/// checkpoint, metrics.
TrainingConfig load_training_config(const std::string& path);
TrainingConfig parse_training_config(const std::string& text, const std::string& base_dir);

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double train_acc = 0;
  double val_acc = 0;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Trains in place. Every random choice derives from config.seed.
std::vector<EpochMetrics> train(Network& net, const Dataset& train_set, const Dataset& val_set,
                                const TrainingConfig& config, const EpochCallback& on_epoch = {});

// CSV with a `# seed=N` line, a header and one row per epoch (%.17g).
void write_metrics_csv(const std::string& path, std::uint64_t seed,
                       const std::vector<EpochMetrics>& metrics);

}  // namespace danet
