#pragma once

// Robustness sweeps over a trained network: point density and test-time
// perturbations.

#include <cstdint>
#include <string>
#include <vector>

#include "danet/training.hpp"

namespace danet {

/// The ladder 1024, 768, 512, 384, 256, 128, 64 scaled by
/// training_points / 1024 (training at 256 gives 256, 192, ..., 16).
std::vector<std::size_t> default_density_levels(std::size_t training_points);

struct DensityRow {
  std::size_t n_points = 0;
  double accuracy = 0;
};

/// Downsamples every test cloud to each level and evaluates. Encoder sample
/// counts are clamped to the available points.
std::vector<DensityRow> density_sweep(Network& net, const Dataset& test, const std::vector<std::size_t>& levels,
                                      DownsampleMode mode, std::uint64_t seed);

struct Perturbation {
  std::string name;
  AugmentationConfig config;
  bool permute = false;
  double rotation_deg = 0;  // fixed rotation about y
  Point3 offset{0, 0, 0};   // fixed translation
};

// none, permutation, rotations -90/90/180 about y, translations +-0.2 along
// z, scalings 0.5-1.5 ... 0.9-1.1, jitter (sigma 0.01, clip 0.05).
std::vector<Perturbation> standard_perturbations();

PointCloud apply_perturbation(const PointCloud& cloud, const Perturbation& p, std::uint64_t seed);

struct PerturbRow {
  std::string condition;
  double accuracy = 0;
};

std::vector<PerturbRow> perturb_sweep(Network& net, const Dataset& test, std::uint64_t seed);

void write_density_csv(const std::string& path, std::uint64_t seed, const std::vector<DensityRow>& rows);
void write_perturb_csv(const std::string& path, std::uint64_t seed, const std::vector<PerturbRow>& rows);

}  // namespace danet
