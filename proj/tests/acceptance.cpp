// Acceptance checks, one criterion per invocation:
//
//   danet_acceptance <1..10> --workdir DIR
//
// Prints a single "criterion N PASS|FAIL: ..." line (plus indented detail
// lines) and exits 0 on pass, 1 on fail. Criteria 5, 6, 7 and 10 reuse the
// model trained by criterion 4 in the same working directory.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "danet/daconv.hpp"
#include "danet/iam.hpp"
#include "danet/network.hpp"
#include "danet/sweeps.hpp"
#include "danet/training.hpp"
#include "op_gradient_cases.hpp"

using namespace danet;
namespace fs = std::filesystem;

namespace {

// Desk-scale setup: 8 classes, 20 train / 10 test samples each, 256 points.
constexpr std::size_t kTrainPerClass = 20;
constexpr std::size_t kTestPerClass = 10;
constexpr std::size_t kPoints = 256;
constexpr std::uint64_t kDataSeed = 2024;
constexpr std::uint64_t kSeeds[3] = {1, 2, 3};
constexpr double kMaxEpochs = 50;
constexpr double kMaxMinutes = 20;

fs::path g_work;

struct Verdict {
  bool pass = false;
  std::string summary;
  std::vector<std::string> details;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path data_dir() { return g_work / "data"; }
fs::path run_dir(std::uint64_t seed, const std::string& tag = "") {
  return g_work / ("seed" + std::to_string(seed) + tag);
}

DatasetManifest ensure_dataset() {
  const fs::path manifest = data_dir() / "manifest.txt";
  if (!fs::exists(manifest)) {
    std::vector<SyntheticShapeSpec> specs;
    for (ShapeFamily f : all_families()) specs.push_back({f});
    generate_synthetic_dataset(specs, kTrainPerClass, kTestPerClass, kPoints, kDataSeed, data_dir().string());
  }
  return load_manifest(manifest.string());
}

TrainingConfig desk_config(std::uint64_t seed, const fs::path& dir) {
  TrainingConfig c = load_training_config(DANET_CONFIG_DIR "/desk_train.cfg");
  c.seed = seed;
  c.manifest_path = (data_dir() / "manifest.txt").string();
  c.checkpoint_path = (dir / "model.dack").string();
  c.metrics_path = (dir / "metrics.csv").string();
  return c;
}

struct TrainResult {
  double seconds = 0;
  std::vector<EpochMetrics> metrics;
};

TrainResult train_desk(std::uint64_t seed, const fs::path& dir) {
  fs::create_directories(dir);
  const TrainingConfig c = desk_config(seed, dir);
  const DatasetManifest m = ensure_dataset();
  const Dataset train_set = load_split(m, Split::Train), test_set = load_split(m, Split::Test);
  TrainResult r;
  const auto start = std::chrono::steady_clock::now();
  Network net(load_network_spec(c.arch_path), c.seed);
  r.metrics = train(net, train_set, test_set, c, [](const EpochMetrics& e) {
    std::printf("    epoch %zu loss %.4f train %.4f test %.4f\n", e.epoch, e.train_loss, e.train_acc, e.val_acc);
    std::fflush(stdout);
  });
  net.save(c.checkpoint_path);
  write_metrics_csv(c.metrics_path, c.seed, r.metrics);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

// The trained network for `seed`, training it first when no checkpoint exists.
Network desk_network(std::uint64_t seed) {
  const fs::path dir = run_dir(seed);
  const TrainingConfig c = desk_config(seed, dir);
  if (!fs::exists(c.checkpoint_path)) train_desk(seed, dir);
  Network net(load_network_spec(c.arch_path), seed);
  net.load(c.checkpoint_path);
  return net;
}

Dataset test_split() { return load_split(ensure_dataset(), Split::Test); }

// ---- criteria ----

Verdict reformulation_equivalence() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> kd(1, 32), cd(1, 64), md(1, 16), sd(1, 4);
  double worst = 0;
  std::string worst_cfg;
  const int configs = 1000;
  for (int i = 0; i < configs; ++i) {
    const std::size_t k = kd(rng), ci = cd(rng), co = cd(rng), cm = md(rng), s = sd(rng);
    nn::Rng prng(rng());
    DAConvParams p = DAConvParams::create(ci, cm, co, prng);
    p.aggregation = Aggregation::Sum;
    Tensor f = testutil::random_tensor({s, k, ci}, rng, -1, 1, false);
    GeometricEncoding enc{testutil::random_tensor({s, k, kGeometryChannels}, rng, -1, 1, false)};
    const Tensor a = daconv_reformulated(f, enc, p), b = daconv_naive(f, enc, p);
    for (std::size_t e = 0; e < a.numel(); ++e) {
      const double rel = std::abs(a.data()[e] - b.data()[e]) / (std::abs(b.data()[e]) + 1e-12);
      if (rel > worst) {
        worst = rel;
        worst_cfg = fmt("K=%zu C_in=%zu C_mid=%zu C_out=%zu", k, ci, cm, co);
      }
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  Verdict v;
  v.pass = worst < 1e-9 && secs < 60;
  v.summary = fmt("%d configurations, max relative error %.3e (< 1e-9), %.1f s (< 60 s)", configs, worst, secs);
  v.details.push_back("worst case " + worst_cfg);
  return v;
}

Verdict gradient_correctness() {
  const auto start = std::chrono::steady_clock::now();
  Verdict v;
  double worst = 0;
  auto record = [&](const std::string& name, double err) {
    worst = std::max(worst, err);
    v.details.push_back(fmt("%-28s %.3e", name.c_str(), err));
  };
  for (const auto& c : testutil::op_gradient_cases()) record(std::string("op ") + c.name, c.run());
  {
    for (Aggregation agg : {Aggregation::Max, Aggregation::Sum}) {
      nn::Rng prng(5);
      DAConvParams p = DAConvParams::create(5, 4, 6, prng);
      p.aggregation = agg;
      std::mt19937_64 rng(5);
      Tensor f = testutil::random_tensor({3, 7, 5}, rng);
      GeometricEncoding enc{testutil::random_tensor({3, 7, kGeometryChannels}, rng)};
      record(agg == Aggregation::Max ? "daconv block (max)" : "daconv block (sum)",
             gradient_check([&] { return testutil::probe(daconv_reformulated(f, enc, p)); },
                            {f, p.kernel, p.phi1.weight, p.phi1.bias, p.phi2.weight, p.phi2.bias}));
    }
  }
  {
    nn::Rng prng(6);
    IAMParams p = IAMParams::create(8, 4, prng);
    std::mt19937_64 rng(6);
    Tensor f = testutil::random_tensor({2, 8, 5, 4}, rng);
    record("iam block",
           gradient_check([&] { return testutil::probe(apply_iam(f, p)); },
                          {f, p.shared_mlp.weight, p.shared_mlp.bias, p.attn_n_mlp.weight, p.attn_n_mlp.bias,
                           p.attn_k_mlp.weight, p.attn_k_mlp.bias}));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  v.pass = worst < 1e-4 && secs < 120;
  v.summary = fmt("%zu checks, max relative error %.3e (< 1e-4), %.1f s (< 120 s)", v.details.size(), worst, secs);
  return v;
}

Verdict cost_accounting() {
  Verdict v;
  const CostReport naive = count_cost(30, 64, 16, 64, DAConvVariant::Naive);
  const CostReport reform = count_cost(30, 64, 16, 64, DAConvVariant::Reformulated);
  const bool counts = naive.dynamic_weight_count == 122880 && reform.dynamic_weight_count == 480;
  bool decreasing = true;
  std::string flops_line = "IAM FLOPs (C=64, N=256, K=32) r=4,8,16,32:";
  std::uint64_t prev = ~0ull;
  for (std::size_t r : {4, 8, 16, 32}) {
    const std::uint64_t f = iam_flops(1, 64, 256, 32, r);
    decreasing = decreasing && f < prev;
    prev = f;
    flops_line += " " + std::to_string(f);
  }
  std::string net_line = "semantic segmenter FLOPs at 4096 points r=4,8,16,32:";
  prev = ~0ull;
  for (std::size_t r : {4, 8, 16, 32}) {
    const std::uint64_t f = count_flops(build_semantic_segmenter(), 4096, r).flops;
    decreasing = decreasing && f < prev;
    prev = f;
    net_line += " " + std::to_string(f);
  }
  v.pass = counts && decreasing;
  v.summary = fmt("dynamic weights naive %llu (== 122880), reformulated %llu (== 480); IAM FLOPs strictly decreasing: %s",
                  static_cast<unsigned long long>(naive.dynamic_weight_count),
                  static_cast<unsigned long long>(reform.dynamic_weight_count), decreasing ? "yes" : "no");
  v.details.push_back(flops_line);
  v.details.push_back(net_line);
  const double total_naive = static_cast<double>(naive.dynamic_weight_count);
  const double total_reform = static_cast<double>(reform.dynamic_weight_count + reform.static_weight_count);
  v.details.push_back(fmt("reported only: reformulated dynamic+static weights %llu = %.1f%% of naive dynamic %llu "
                          "(%.1f%% less); multiply-adds %llu vs %llu (%.1f%% less)",
                          static_cast<unsigned long long>(reform.dynamic_weight_count + reform.static_weight_count),
                          100 * total_reform / total_naive, static_cast<unsigned long long>(naive.dynamic_weight_count),
                          100 * (1 - total_reform / total_naive),
                          static_cast<unsigned long long>(reform.multiply_add_count),
                          static_cast<unsigned long long>(naive.multiply_add_count),
                          100 * (1 - double(reform.multiply_add_count) / double(naive.multiply_add_count))));
  return v;
}

Verdict desk_classification() {
  const TrainResult r = train_desk(kSeeds[0], run_dir(kSeeds[0]));
  const double acc = r.metrics.back().val_acc;
  const double minutes = r.seconds / 60;
  Verdict v;
  v.pass = acc >= 0.90 && minutes < kMaxMinutes && r.metrics.size() <= kMaxEpochs;
  v.summary = fmt("%zu epochs (<= 50), test accuracy %.4f (>= 0.90), wall-clock %.2f min (< 20)", r.metrics.size(),
                  acc, minutes);
  return v;
}

Verdict density_robustness() {
  Verdict v;
  const Dataset test = test_split();
  const auto levels = default_density_levels(kPoints);
  int ok = 0;
  for (std::uint64_t seed : kSeeds) {
    Network net = desk_network(seed);
    const auto rows = density_sweep(net, test, levels, DownsampleMode::Random, seed);
    double at_full = 0, at_64 = 0;
    std::string line = fmt("seed %llu:", static_cast<unsigned long long>(seed));
    for (const DensityRow& row : rows) {
      if (row.n_points == kPoints) at_full = row.accuracy;
      if (row.n_points == 64) at_64 = row.accuracy;
      line += fmt(" %zu:%.4f", row.n_points, row.accuracy);
    }
    const double drop = 100 * (at_full - at_64);
    ok += drop <= 15.0;
    v.details.push_back(line + fmt("  drop 256->64 = %.2f points", drop));
    write_density_csv((run_dir(seed) / "density.csv").string(), seed, rows);
  }
  v.pass = ok == 3;
  v.summary = fmt("%d of 3 seeds drop <= 15 points from 256 to 64 points", ok);
  return v;
}

Verdict permutation_invariance() {
  Network net = desk_network(kSeeds[0]);
  const DatasetManifest m = ensure_dataset();
  Dataset all = load_split(m, Split::Test);
  for (Sample& s : load_split(m, Split::Train)) all.push_back(std::move(s));
  std::mt19937_64 rng(606);
  std::size_t identical = 0, checked = 0;
  for (std::size_t start = 0; start < all.size(); start += 16) {
    std::vector<PointCloud> a, b;
    for (std::size_t i = start; i < std::min(all.size(), start + 16); ++i) {
      a.push_back(all[i].cloud);
      std::vector<std::size_t> perm(all[i].cloud.size());
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      b.push_back(testutil::permuted(all[i].cloud, perm));
    }
    NoGradGuard no_grad;
    const Tensor la = net.forward(a, false), lb = net.forward(b, false);
    const std::size_t classes = la.dim(1);
    for (std::size_t r = 0; r < a.size(); ++r) {
      identical += std::memcmp(la.data().data() + r * classes, lb.data().data() + r * classes,
                               classes * sizeof(double)) == 0;
      ++checked;
    }
  }
  Verdict v;
  v.pass = checked >= 100 && identical == checked;
  v.summary = fmt("%zu of %zu samples give bit-identical eval logits after a random permutation (need all, >= 100)",
                  identical, checked);
  return v;
}

Verdict transform_ordering() {
  Network net = desk_network(kSeeds[0]);
  const auto rows = perturb_sweep(net, test_split(), kSeeds[0]);
  write_perturb_csv((run_dir(kSeeds[0]) / "perturb.csv").string(), kSeeds[0], rows);
  auto acc = [&](const std::string& name) {
    for (const PerturbRow& r : rows) {
      if (r.condition == name) return r.accuracy;
    }
    throw std::runtime_error("missing condition " + name);
  };
  Verdict v;
  const bool scaling = acc("scaling_0.9-1.1") >= acc("scaling_0.5-1.5");
  const bool rotation = acc("rotation_+180") <= acc("none");
  v.pass = scaling && rotation;
  v.summary = fmt("scaling 0.9-1.1 %.4f >= scaling 0.5-1.5 %.4f: %s; rotation 180 %.4f <= none %.4f: %s",
                  acc("scaling_0.9-1.1"), acc("scaling_0.5-1.5"), scaling ? "yes" : "no", acc("rotation_+180"),
                  acc("none"), rotation ? "yes" : "no");
  for (const PerturbRow& r : rows) v.details.push_back(fmt("%-20s %.4f", r.condition.c_str(), r.accuracy));
  return v;
}

Verdict iam_closed_form() {
  std::mt19937_64 rng(808);
  std::uniform_int_distribution<std::size_t> bd(1, 3), cd(1, 64), nd(1, 64), kd(1, 32);
  const std::size_t ratios[4] = {4, 8, 16, 32};
  double worst = 0;
  for (int i = 0; i < 20; ++i) {
    const std::size_t b = bd(rng), c = cd(rng), n = nd(rng), k = kd(rng);
    nn::Rng prng(rng());
    IAMParams p = IAMParams::create(c, ratios[i % 4], prng);
    p.zero_attention();
    const Tensor f = testutil::random_tensor({b, c, n, k}, rng, -5, 5, false);
    const Tensor out = apply_iam(f, p);
    const double factor = 1.0 + 1.0 / static_cast<double>(n * k);
    for (std::size_t e = 0; e < f.numel(); ++e) {
      worst = std::max(worst, std::abs(out.data()[e] - f.data()[e] * factor));
    }
  }
  Verdict v;
  v.pass = worst <= 1e-12;
  v.summary = fmt("20 random shapes, max |out - F(1 + 1/(N K))| = %.3e (<= 1e-12)", worst);
  return v;
}

Verdict parameter_count() {
  const NetworkSpec spec = build_classifier();
  const std::uint64_t count = count_parameters(spec);
  const double target = 1.37e6;
  const double rel = (static_cast<double>(count) - target) / target;
  Verdict v;
  v.pass = std::abs(rel) <= 0.20;
  v.summary = fmt("classification network has %llu parameters, %+.1f%% from 1.37M (tolerance 20%%)",
                  static_cast<unsigned long long>(count), 100 * rel);
  NamedTensors named;
  Network net(spec, 1);
  std::uint64_t daconv_kernels = 0;
  for (const auto& [name, t] : net.parameters()) {
    if (name.size() > 7 && name.compare(name.size() - 7, 7, ".kernel") == 0) {
      daconv_kernels += t.numel();
      v.details.push_back(fmt("%-20s %10zu", name.c_str(), t.numel()));
    }
  }
  v.details.push_back(fmt("static DAConv kernels total %llu of %llu", static_cast<unsigned long long>(daconv_kernels),
                          static_cast<unsigned long long>(count)));
  return v;
}

Verdict determinism() {
  // Criterion 4's run is the first; this repeats it in a separate directory.
  const fs::path first = run_dir(kSeeds[0]) / "metrics.csv";
  if (!fs::exists(first)) train_desk(kSeeds[0], run_dir(kSeeds[0]));
  train_desk(kSeeds[0], run_dir(kSeeds[0], "_repeat"));
  const std::string a = slurp(first), b = slurp(run_dir(kSeeds[0], "_repeat") / "metrics.csv");
  Verdict v;
  v.pass = !a.empty() && a == b;
  v.summary = fmt("metrics CSVs of two seed-%llu runs are %s (%zu bytes)", static_cast<unsigned long long>(kSeeds[0]),
                  a == b ? "bit-identical" : "different", a.size());
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  int criterion = 0;
  std::string work = "acceptance_work";
  app.add_option("criterion", criterion, "Criterion number (1-10)")->required()->check(CLI::Range(1, 10));
  app.add_option("--workdir", work, "Directory for generated data, checkpoints and CSVs");
  CLI11_PARSE(app, argc, argv);
  g_work = fs::absolute(work);
  fs::create_directories(g_work);

  Verdict v;
  try {
    switch (criterion) {
      case 1: v = reformulation_equivalence(); break;
      case 2: v = gradient_correctness(); break;
      case 3: v = cost_accounting(); break;
      case 4: v = desk_classification(); break;
      case 5: v = density_robustness(); break;
      case 6: v = permutation_invariance(); break;
      case 7: v = transform_ordering(); break;
      case 8: v = iam_closed_form(); break;
      case 9: v = parameter_count(); break;
      case 10: v = determinism(); break;
    }
  } catch (const std::exception& e) {
    v.pass = false;
    v.summary = std::string("error: ") + e.what();
  }
  std::printf("criterion %d %s: %s\n", criterion, v.pass ? "PASS" : "FAIL", v.summary.c_str());
  for (const std::string& d : v.details) std::printf("    %s\n", d.c_str());
  return v.pass ? 0 : 1;
}
