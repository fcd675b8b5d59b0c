#include "danet/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace danet {

namespace fs = std::filesystem;

void sgd_step(const std::vector<Tensor>& params, OptimizerState& state) {
  if (state.velocity.size() != params.size()) {
    state.velocity.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) state.velocity[i].assign(params[i].numel(), 0.0);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    if (!p.has_grad()) throw std::runtime_error("sgd_step: parameter " + std::to_string(i) + " has no gradient");
    if (state.velocity[i].size() != p.numel()) {
      throw std::runtime_error("sgd_step: momentum buffer " + std::to_string(i) + " does not match its parameter");
    }
    auto g = p.grad();
    auto w = p.mutable_data();
    auto& v = state.velocity[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = state.momentum * v[j] + g[j];
      w[j] -= state.learning_rate * v[j];
    }
  }
}

void Schedule::validate() const {
  if (!(lr_floor >= 0 && lr_floor <= lr_init)) throw std::invalid_argument("schedule: need 0 <= lr_floor <= lr_init");
  if (total_epochs == 0) throw std::invalid_argument("schedule: total epochs must be positive");
  if (kind == Kind::Step && (step_epochs == 0 || !(step_factor > 0 && step_factor <= 1))) {
    throw std::invalid_argument("schedule: step needs step_epochs > 0 and factor in (0, 1]");
  }
}

double lr_at(const Schedule& s, double epoch) {
  s.validate();
  if (epoch < 0 || epoch > static_cast<double>(s.total_epochs)) {
    throw std::invalid_argument("lr_at: epoch outside [0, total]");
  }
  if (s.kind == Schedule::Kind::Cosine) {
    return s.lr_floor + 0.5 * (s.lr_init - s.lr_floor) *
                            (1.0 + std::cos(std::numbers::pi * epoch / static_cast<double>(s.total_epochs)));
  }
  const double steps = std::floor(epoch / static_cast<double>(s.step_epochs));
  return std::max(s.lr_floor, s.lr_init * std::pow(s.step_factor, steps));
}

AugmentationConfig AugmentationConfig::training_default() {
  AugmentationConfig c;
  c.scale_min = 0.67;
  c.scale_max = 1.5;
  c.translate = 0.2;
  c.shuffle = true;
  return c;
}

void AugmentationConfig::validate() const {
  if (!(scale_min > 0 && scale_min <= scale_max)) throw std::invalid_argument("augmentation: need 0 < scale_min <= scale_max");
  if (translate < 0 || jitter_sigma < 0 || jitter_clip < 0 || rotation_max_deg < 0) {
    throw std::invalid_argument("augmentation: ranges must be nonnegative");
  }
}

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> parts) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(seed);
  for (std::uint64_t p : parts) h = mix(h ^ mix(p));
  return h;
}

PointCloud augment(const PointCloud& cloud, const AugmentationConfig& c, std::uint64_t seed) {
  c.validate();
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  PointCloud out = cloud;
  const double s = c.scale_min == c.scale_max ? c.scale_min : uniform(c.scale_min, c.scale_max);
  const double angle = c.rotation_max_deg > 0
                           ? uniform(-c.rotation_max_deg, c.rotation_max_deg) * std::numbers::pi / 180.0
                           : 0.0;
  Point3 shift{0, 0, 0};
  if (c.translate > 0) {
    for (double& t : shift) t = uniform(-c.translate, c.translate);
  }
  const double ca = std::cos(angle), sa = std::sin(angle);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Point3& p : out.positions) {
    if (angle != 0.0) {
      const double x = p[0], z = p[2];
      p[0] = ca * x + sa * z;
      p[2] = -sa * x + ca * z;
    }
    for (int a = 0; a < 3; ++a) {
      p[a] = p[a] * s + shift[a];
      if (c.jitter_sigma > 0) p[a] += std::clamp(c.jitter_sigma * gauss(rng), -c.jitter_clip, c.jitter_clip);
    }
  }
  if (c.shuffle) {
    std::vector<std::size_t> perm(out.size());
    std::iota(perm.begin(), perm.end(), 0);
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

namespace {

bool is_classifier(const Network& net) { return net.spec().task == Task::Classification; }

std::size_t argmax(const double* v, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

// Correct predictions and total targets for one sample's logits.
std::pair<std::size_t, std::size_t> score(const std::vector<double>& logits, const Sample& s,
                                          std::size_t classes, bool classifier) {
  if (classifier) return {argmax(logits.data(), classes) == static_cast<std::size_t>(s.label) ? 1 : 0, 1};
  const std::size_t n = logits.size() / classes;
  if (s.cloud.labels.size() != n) throw std::runtime_error("segmentation sample without per-point labels");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    correct += argmax(logits.data() + i * classes, classes) == static_cast<std::size_t>(s.cloud.labels[i]);
  }
  return {correct, n};
}

}  // namespace

std::vector<std::vector<double>> predict_logits(Network& net, const std::vector<PointCloud>& clouds,
                                                const EvalOptions& options) {
  NoGradGuard no_grad;
  std::vector<std::vector<double>> out;
  out.reserve(clouds.size());
  const std::size_t bs = std::max<std::size_t>(options.batch_size, 1);
  for (std::size_t start = 0; start < clouds.size(); start += bs) {
    const std::size_t end = std::min(clouds.size(), start + bs);
    std::vector<PointCloud> batch(clouds.begin() + start, clouds.begin() + end);
    Tensor logits = net.forward(batch, false, options.forward);
    const std::size_t per = logits.numel() / batch.size();
    for (std::size_t i = 0; i < batch.size(); ++i) {
      out.emplace_back(logits.data().begin() + i * per, logits.data().begin() + (i + 1) * per);
    }
  }
  return out;
}

double evaluate(Network& net, const Dataset& data, const EvalOptions& options) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  std::vector<PointCloud> clouds;
  for (const Sample& s : data) clouds.push_back(s.cloud);
  const auto logits = predict_logits(net, clouds, options);
  std::size_t correct = 0, total = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto [c, t] = score(logits[i], data[i], net.spec().num_classes(), is_classifier(net));
    correct += c;
    total += t;
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

double evaluate_with_voting(Network& net, const Dataset& data, std::size_t votes, std::uint64_t seed,
                            double scale_min, double scale_max, const EvalOptions& options) {
  if (data.empty()) throw std::invalid_argument("evaluate_with_voting: empty dataset");
  if (votes == 0) throw std::invalid_argument("evaluate_with_voting: need at least one vote");
  AugmentationConfig scaling;
  scaling.scale_min = scale_min;
  scaling.scale_max = scale_max;
  std::vector<std::vector<double>> total;
  for (std::size_t v = 0; v < votes; ++v) {
    const std::uint64_t vote_seed = derive_seed(seed, {v});
    std::vector<PointCloud> clouds;
    for (const Sample& s : data) clouds.push_back(augment(s.cloud, scaling, vote_seed));
    auto logits = predict_logits(net, clouds, options);
    if (v == 0) {
      total = std::move(logits);
      continue;
    }
    for (std::size_t i = 0; i < total.size(); ++i)
      for (std::size_t j = 0; j < total[i].size(); ++j) total[i][j] += logits[i][j];
  }
  std::size_t correct = 0, count = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto [c, t] = score(total[i], data[i], net.spec().num_classes(), is_classifier(net));
    correct += c;
    count += t;
  }
  return static_cast<double>(correct) / static_cast<double>(count);
}

void TrainingConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("training config: epochs must be positive");
  if (batch_size < 2) throw std::invalid_argument("training config: batch_size must be at least 2");
  if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("training config: momentum must be in [0, 1)");
  schedule.validate();
  augmentation.validate();
}

TrainingConfig parse_training_config(const std::string& text, const std::string& base_dir) {
  TrainingConfig c;
  std::istringstream in(text);
  std::string line;
  auto resolve = [&](const std::string& p) {
    fs::path path(p);
    return path.is_absolute() || base_dir.empty() ? path.string() : (fs::path(base_dir) / path).string();
  };
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const auto eq = line.find('=');
    const std::string where = "training config line " + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw std::invalid_argument(where + "expected key=value");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t"), b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
    auto real = [&]() {
      double v = 0;
      auto [p, ec] = std::from_chars(val.data(), val.data() + val.size(), v);
      if (ec != std::errc() || p != val.data() + val.size() || val.empty()) {
        throw std::invalid_argument(where + "bad number '" + val + "' for " + key);
      }
      return v;
    };
    auto count = [&]() {
      std::uint64_t v = 0;
      auto [p, ec] = std::from_chars(val.data(), val.data() + val.size(), v);
      if (ec != std::errc() || p != val.data() + val.size() || val.empty()) {
        throw std::invalid_argument(where + "bad integer '" + val + "' for " + key);
      }
      return v;
    };
    if (key == "arch") c.arch_path = resolve(val);
    else if (key == "manifest") c.manifest_path = resolve(val);
    else if (key == "checkpoint") c.checkpoint_path = resolve(val);
    else if (key == "metrics") c.metrics_path = resolve(val);
    else if (key == "epochs") c.epochs = count();
    else if (key == "batch_size") c.batch_size = count();
    else if (key == "seed") c.seed = count();
    else if (key == "lr_init") c.schedule.lr_init = real();
    else if (key == "lr_floor") c.schedule.lr_floor = real();
    else if (key == "step_epochs") c.schedule.step_epochs = count();
    else if (key == "step_factor") c.schedule.step_factor = real();
    else if (key == "momentum") c.momentum = real();
    else if (key == "scale_min") c.augmentation.scale_min = real();
    else if (key == "scale_max") c.augmentation.scale_max = real();
    else if (key == "translate") c.augmentation.translate = real();
    else if (key == "jitter_sigma") c.augmentation.jitter_sigma = real();
    else if (key == "jitter_clip") c.augmentation.jitter_clip = real();
    else if (key == "rotation_deg") c.augmentation.rotation_max_deg = real();
    else if (key == "shuffle") {
      if (val == "1" || val == "true") c.augmentation.shuffle = true;
      else if (val == "0" || val == "false") c.augmentation.shuffle = false;
      else throw std::invalid_argument(where + "bad flag '" + val + "'");
    } else if (key == "schedule") {
      if (val == "cosine") c.schedule.kind = Schedule::Kind::Cosine;
      else if (val == "step") c.schedule.kind = Schedule::Kind::Step;
      else throw std::invalid_argument(where + "unknown schedule '" + val + "'");
    } else {
      throw std::invalid_argument(where + "unknown key '" + key + "'");
    }
  }
  c.schedule.total_epochs = c.epochs;
  c.validate();
  return c;
}

TrainingConfig load_training_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open training config '" + path + "'");
  std::stringstream text;
  text << in.rdbuf();
  return parse_training_config(text.str(), fs::path(path).parent_path().string());
}

std::vector<EpochMetrics> train(Network& net, const Dataset& train_set, const Dataset& val_set,
                                const TrainingConfig& config, const EpochCallback& on_epoch) {
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  config.validate();
  Schedule schedule = config.schedule;
  schedule.total_epochs = config.epochs;
  const bool classifier = is_classifier(net);
  const std::size_t classes = net.spec().num_classes();

  std::vector<Tensor> params;
  for (const auto& [name, t] : net.parameters()) params.push_back(t);
  OptimizerState state;
  state.momentum = config.momentum;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 order_rng(derive_seed(config.seed, {0x6f72646572ULL}));
  net.dropout_rng().seed(derive_seed(config.seed, {0x64726f70ULL}));

  std::vector<EpochMetrics> log;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    state.learning_rate = lr_at(schedule, static_cast<double>(epoch));
    std::shuffle(order.begin(), order.end(), order_rng);
    double loss_sum = 0;
    std::size_t loss_count = 0, correct = 0, targets = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      if (end - start < 2) break;  // batch statistics need two samples
      std::vector<PointCloud> clouds;
      std::vector<int> labels;
      for (std::size_t i = start; i < end; ++i) {
        const Sample& s = train_set[order[i]];
        clouds.push_back(augment(s.cloud, config.augmentation, derive_seed(config.seed, {epoch, order[i]})));
        if (classifier) {
          labels.push_back(s.label);
        } else {
          if (clouds.back().labels.size() != clouds.back().size()) {
            throw std::runtime_error("train: segmentation sample without per-point labels");
          }
          labels.insert(labels.end(), clouds.back().labels.begin(), clouds.back().labels.end());
        }
      }
      for (Tensor& p : params) p.zero_grad();
      Tensor logits = net.forward(clouds, true);
      if (!classifier) logits = reshape(logits, {labels.size(), classes});
      Tensor loss = cross_entropy(logits, labels);
      loss.backward();
      sgd_step(params, state);

      loss_sum += loss.item() * static_cast<double>(end - start);
      loss_count += end - start;
      const auto ld = logits.data();
      for (std::size_t r = 0; r < labels.size(); ++r) {
        correct += argmax(ld.data() + r * classes, classes) == static_cast<std::size_t>(labels[r]);
      }
      targets += labels.size();
    }
    EpochMetrics m;
    m.epoch = epoch + 1;
    m.lr = state.learning_rate;
    m.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    m.train_acc = targets ? static_cast<double>(correct) / static_cast<double>(targets) : 0.0;
    m.val_acc = val_set.empty() ? 0.0 : evaluate(net, val_set);
    log.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return log;
}

void write_metrics_csv(const std::string& path, std::uint64_t seed, const std::vector<EpochMetrics>& metrics) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write metrics '" + path + "'");
  out << "# seed=" << seed << "\n";
  out << "epoch,lr,train_loss,train_acc,val_acc\n";
  char buf[160];
  for (const EpochMetrics& m : metrics) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", m.epoch, m.lr, m.train_loss, m.train_acc,
                  m.val_acc);
    out << buf;
  }
  if (!out) throw std::runtime_error("error writing '" + path + "'");
}

}  // namespace danet
