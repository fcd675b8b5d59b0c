// danet: train, evaluate and inspect density adaptive point networks.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "danet/dataio.hpp"
#include "danet/network.hpp"
#include "danet/sweeps.hpp"
#include "danet/training.hpp"

namespace fs = std::filesystem;
using namespace danet;

namespace {

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string checkpoint;
  std::string out;
  std::string manifest;
};

struct Loaded {
  TrainingConfig config;
  NetworkSpec spec;
  DatasetManifest manifest;
};

Loaded load_run(const Common& c) {
  Loaded l;
  l.config = load_training_config(c.config);
  if (c.seed) l.config.seed = *c.seed;
  if (!c.checkpoint.empty()) l.config.checkpoint_path = c.checkpoint;
  if (!c.manifest.empty()) l.config.manifest_path = c.manifest;
  if (l.config.arch_path.empty()) throw std::runtime_error(c.config + ": no 'arch' entry");
  if (l.config.manifest_path.empty()) throw std::runtime_error(c.config + ": no 'manifest' entry");
  l.spec = load_network_spec(l.config.arch_path);
  l.manifest = load_manifest(l.config.manifest_path);
  if (l.manifest.num_classes() != l.spec.num_classes()) {
    throw std::runtime_error("manifest has " + std::to_string(l.manifest.num_classes()) +
                             " classes, architecture predicts " + std::to_string(l.spec.num_classes()));
  }
  return l;
}

Network load_network(const Loaded& l) {
  Network net(l.spec, l.config.seed);
  net.load(l.config.checkpoint_path);
  return net;
}

int cmd_train(const Common& c) {
  Loaded l = load_run(c);
  if (!c.out.empty()) l.config.metrics_path = c.out;
  Dataset train_set = load_split(l.manifest, Split::Train);
  Dataset test_set = load_split(l.manifest, Split::Test);
  Network net(l.spec, l.config.seed);
  std::printf("seed %llu, %zu parameters, %zu train / %zu test samples\n",
              static_cast<unsigned long long>(l.config.seed), net.parameter_count(), train_set.size(),
              test_set.size());
  auto metrics = train(net, train_set, test_set, l.config, [](const EpochMetrics& m) {
    std::printf("epoch %3zu  lr %.5f  loss %.4f  train %.4f  val %.4f\n", m.epoch, m.lr, m.train_loss,
                m.train_acc, m.val_acc);
    std::fflush(stdout);
  });
  net.save(l.config.checkpoint_path);
  write_metrics_csv(l.config.metrics_path, l.config.seed, metrics);
  std::printf("final train_acc %.4f val_acc %.4f\n", metrics.back().train_acc, metrics.back().val_acc);
  std::printf("wrote %s and %s\n", l.config.checkpoint_path.c_str(), l.config.metrics_path.c_str());
  return 0;
}

int cmd_eval(const Common& c, std::size_t votes) {
  Loaded l = load_run(c);
  Network net = load_network(l);
  Dataset test_set = load_split(l.manifest, Split::Test);
  std::printf("accuracy %.6f\n", evaluate(net, test_set));
  if (votes > 0) {
    std::printf("voting accuracy (%zu votes) %.6f\n", votes,
                evaluate_with_voting(net, test_set, votes, l.config.seed));
  }
  return 0;
}

void print_csv(const std::string& path) {
  std::ifstream in(path);
  std::cout << in.rdbuf();
}

int cmd_density(const Common& c, const std::vector<std::size_t>& levels_arg, const std::string& mode) {
  Loaded l = load_run(c);
  Network net = load_network(l);
  Dataset test_set = load_split(l.manifest, Split::Test);
  std::vector<std::size_t> levels = levels_arg;
  if (levels.empty()) levels = default_density_levels(l.manifest.points_per_sample ? l.manifest.points_per_sample
                                                                                   : test_set.front().cloud.size());
  const auto rows = density_sweep(net, test_set, levels, mode == "fps" ? DownsampleMode::Fps : DownsampleMode::Random,
                                  l.config.seed);
  const std::string out = c.out.empty() ? "density_sweep.csv" : c.out;
  write_density_csv(out, l.config.seed, rows);
  print_csv(out);
  return 0;
}

int cmd_perturb(const Common& c) {
  Loaded l = load_run(c);
  Network net = load_network(l);
  Dataset test_set = load_split(l.manifest, Split::Test);
  const auto rows = perturb_sweep(net, test_set, l.config.seed);
  const std::string out = c.out.empty() ? "perturb_sweep.csv" : c.out;
  write_perturb_csv(out, l.config.seed, rows);
  print_csv(out);
  return 0;
}

int cmd_cost(const Common& c, const std::string& builtin, std::size_t points, std::optional<std::size_t> r) {
  NetworkSpec spec;
  if (!builtin.empty()) {
    if (builtin == "classifier") spec = build_classifier();
    else if (builtin == "semantic_seg") spec = build_semantic_segmenter();
    else if (builtin == "part_seg") spec = build_part_segmenter();
    else throw CLI::ValidationError("--builtin", "expected classifier, semantic_seg or part_seg");
  } else {
    spec = load_network_spec(c.config);
  }
  if (r && !iam_reduction_supported(*r)) throw CLI::ValidationError("--r", "must be 4, 8, 16 or 32");
  if (r) {
    for (LayerSpec& layer : spec.layers) layer.reduction = *r;
  }
  const NetworkCost cost = count_flops(spec, points, r);
  std::printf("task %s, %zu points\n", task_name(spec.task).c_str(), points);
  std::printf("parameters %llu\n", static_cast<unsigned long long>(cost.parameters));
  std::printf("flops %llu (multiply-adds, per sample)\n", static_cast<unsigned long long>(cost.flops));
  std::printf("%-8s %8s %5s %6s %5s %6s %14s %14s %12s %16s %16s\n", "layer", "centers", "K", "C_in", "C_mid",
              "C_out", "dyn_naive", "dyn_reform", "static", "madd_naive", "madd_reform");
  for (const LayerCost& lc : cost.daconv_layers) {
    std::printf("%-8s %8zu %5zu %6zu %5zu %6zu %14llu %14llu %12llu %16llu %16llu\n", lc.name.c_str(), lc.centers,
                lc.k, lc.in_channels, lc.mid_channels, lc.out_channels,
                static_cast<unsigned long long>(lc.naive.dynamic_weight_count),
                static_cast<unsigned long long>(lc.reformulated.dynamic_weight_count),
                static_cast<unsigned long long>(lc.reformulated.static_weight_count),
                static_cast<unsigned long long>(lc.naive.multiply_add_count),
                static_cast<unsigned long long>(lc.reformulated.multiply_add_count));
  }
  return 0;
}

int cmd_gen(const Common& c, std::size_t n_train, std::size_t n_test, std::size_t points,
            const std::vector<std::string>& classes) {
  if (c.out.empty()) throw CLI::ValidationError("--out", "output directory required");
  std::vector<SyntheticShapeSpec> specs;
  if (classes.empty()) {
    for (ShapeFamily f : all_families()) specs.push_back({f});
  } else {
    for (const std::string& name : classes) specs.push_back({parse_family(name)});
  }
  const DatasetManifest m = generate_synthetic_dataset(specs, n_train, n_test, points, c.seed.value_or(1), c.out);
  std::printf("wrote %zu train and %zu test samples of %zu classes to %s\n", m.train.size(), m.test.size(),
              m.num_classes(), (fs::path(c.out) / "manifest.txt").c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Density adaptive point networks: training, evaluation and robustness sweeps"};
  app.require_subcommand(1);
  Common common;

  auto add_common = [&](CLI::App* sub, bool need_config) {
    sub->add_option("--seed", common.seed, "Run seed (overrides the config)");
    auto* cfg = sub->add_option("--config", common.config, "Training config file");
    if (need_config) cfg->required()->check(CLI::ExistingFile);
    sub->add_option("--checkpoint", common.checkpoint, "Checkpoint path (overrides the config)");
    sub->add_option("--out", common.out, "Output path");
    sub->add_option("--manifest", common.manifest, "Dataset manifest (overrides the config)");
  };

  auto* train_cmd = app.add_subcommand("train", "Train a network and write checkpoint + metrics CSV");
  add_common(train_cmd, true);

  std::size_t votes = 0;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  add_common(eval_cmd, true);
  eval_cmd->add_option("--votes", votes, "Also report voting accuracy with this many scaled copies");

  std::vector<std::size_t> levels;
  std::string mode = "random";
  auto* density_cmd = app.add_subcommand("density-sweep", "Accuracy versus points per test sample");
  add_common(density_cmd, true);
  density_cmd->add_option("--levels", levels, "Point counts (default: the scaled 1024..64 ladder)")->delimiter(',');
  density_cmd->add_option("--mode", mode, "Downsampling: random or fps")->check(CLI::IsMember({"random", "fps"}));

  auto* perturb_cmd = app.add_subcommand("perturb-sweep", "Accuracy under permutation and rigid transforms");
  add_common(perturb_cmd, true);

  std::string builtin;
  std::size_t points = 1024;
  std::optional<std::size_t> reduction;
  auto* cost_cmd = app.add_subcommand("cost", "Parameter, FLOP and DAConv weight counts of an architecture");
  add_common(cost_cmd, false);
  cost_cmd->add_option("--builtin", builtin, "classifier, semantic_seg or part_seg instead of --config");
  cost_cmd->add_option("--points", points, "Points per input cloud");
  cost_cmd->add_option("--r", reduction, "IAM reduction ratio override");

  std::size_t n_train = 20, n_test = 10, gen_points = 256;
  std::vector<std::string> classes;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic shape dataset");
  add_common(gen_cmd, false);
  gen_cmd->add_option("--train", n_train, "Training samples per class");
  gen_cmd->add_option("--test", n_test, "Test samples per class");
  gen_cmd->add_option("--points", gen_points, "Points per sample");
  gen_cmd->add_option("--classes", classes, "Shape families (default: all eight)")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train_cmd) return cmd_train(common);
    if (*eval_cmd) return cmd_eval(common, votes);
    if (*density_cmd) return cmd_density(common, levels, mode);
    if (*perturb_cmd) return cmd_perturb(common);
    if (*cost_cmd) {
      if (builtin.empty() && common.config.empty()) throw CLI::ValidationError("cost", "--config or --builtin required");
      return cmd_cost(common, builtin, points, reduction);
    }
    if (*gen_cmd) return cmd_gen(common, n_train, n_test, gen_points, classes);
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
