#include "danet/sweeps.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

namespace danet {

std::vector<std::size_t> default_density_levels(std::size_t training_points) {
  if (training_points == 0) throw std::invalid_argument("density levels: training resolution must be positive");
  std::vector<std::size_t> levels;
  for (std::size_t base : {1024, 768, 512, 384, 256, 128, 64}) {
    levels.push_back(std::max<std::size_t>(1, base * training_points / 1024));
  }
  return levels;
}

std::vector<DensityRow> density_sweep(Network& net, const Dataset& test, const std::vector<std::size_t>& levels,
                                      DownsampleMode mode, std::uint64_t seed) {
  std::vector<DensityRow> rows;
  EvalOptions options;
  options.forward.clamp_samples = true;
  for (std::size_t level : levels) {
    Dataset reduced;
    reduced.reserve(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
      Sample s = test[i];
      if (level != s.cloud.size()) s.cloud = downsample(s.cloud, level, mode, derive_seed(seed, {level, i}));
      reduced.push_back(std::move(s));
    }
    rows.push_back({level, evaluate(net, reduced, options)});
  }
  return rows;
}

std::vector<Perturbation> standard_perturbations() {
  std::vector<Perturbation> out;
  out.push_back({"none", {}, false, 0});
  out.push_back({"permutation", {}, true, 0});
  for (double deg : {-90.0, 90.0, 180.0}) {
    char name[48];
    std::snprintf(name, sizeof name, "rotation_%+g", deg);
    out.push_back({name, {}, false, deg});
  }
  for (double t : {0.2, -0.2}) {
    char name[48];
    std::snprintf(name, sizeof name, "translation_z_%+g", t);
    out.push_back({name, {}, false, 0, {0, 0, t}});
  }
  for (double lo : {0.5, 0.6, 0.7, 0.8, 0.9}) {
    char name[48];
    std::snprintf(name, sizeof name, "scaling_%g-%g", lo, 2.0 - lo);
    Perturbation p{name, {}, false, 0};
    p.config.scale_min = lo;
    p.config.scale_max = 2.0 - lo;
    out.push_back(p);
  }
  Perturbation jitter{"jitter", {}, false, 0};
  jitter.config.jitter_sigma = 0.01;
  jitter.config.jitter_clip = 0.05;
  out.push_back(jitter);
  return out;
}

PointCloud apply_perturbation(const PointCloud& cloud, const Perturbation& p, std::uint64_t seed) {
  PointCloud out = augment(cloud, p.config, seed);
  if (p.rotation_deg != 0) {
    const double a = p.rotation_deg * std::numbers::pi / 180.0, c = std::cos(a), s = std::sin(a);
    for (Point3& q : out.positions) {
      const double x = q[0], z = q[2];
      q[0] = c * x + s * z;
      q[2] = -s * x + c * z;
    }
  }
  if (p.offset != Point3{0, 0, 0}) {
    for (Point3& q : out.positions)
      for (int a = 0; a < 3; ++a) q[a] += p.offset[a];
  }
  if (p.permute) {
    std::vector<std::size_t> perm(out.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(derive_seed(seed, {1}));
    std::shuffle(perm.begin(), perm.end(), rng);
    PointCloud shuffled;
    shuffled.attribute_dim = out.attribute_dim;
    for (std::size_t i : perm) {
      shuffled.positions.push_back(out.positions[i]);
      shuffled.attributes.insert(shuffled.attributes.end(), out.attributes.begin() + i * out.attribute_dim,
                                 out.attributes.begin() + (i + 1) * out.attribute_dim);
      if (!out.labels.empty()) shuffled.labels.push_back(out.labels[i]);
    }
    out = std::move(shuffled);
  }
  return out;
}

std::vector<PerturbRow> perturb_sweep(Network& net, const Dataset& test, std::uint64_t seed) {
  std::vector<PerturbRow> rows;
  const auto conditions = standard_perturbations();
  for (std::size_t c = 0; c < conditions.size(); ++c) {
    Dataset changed;
    changed.reserve(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
      changed.push_back({apply_perturbation(test[i].cloud, conditions[c], derive_seed(seed, {c, i})),
                         test[i].label});
    }
    rows.push_back({conditions[c].name, evaluate(net, changed)});
  }
  return rows;
}

namespace {

std::ofstream open_csv(const std::string& path, std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << "# seed=" << seed << "\n";
  return out;
}

}  // namespace

void write_density_csv(const std::string& path, std::uint64_t seed, const std::vector<DensityRow>& rows) {
  std::ofstream out = open_csv(path, seed);
  out << "n_points,accuracy\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", r.n_points, r.accuracy);
    out << buf;
  }
}

void write_perturb_csv(const std::string& path, std::uint64_t seed, const std::vector<PerturbRow>& rows) {
  std::ofstream out = open_csv(path, seed);
  out << "condition,accuracy\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.17g\n", r.condition.c_str(), r.accuracy);
    out << buf;
  }
}

}  // namespace danet
