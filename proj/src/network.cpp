#include "danet/network.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace danet {

namespace {

constexpr std::size_t kDecoderNeighbors = 16;

std::string layer_name(LayerKind kind, std::size_t index) {
  switch (kind) {
    case LayerKind::Encode: return "E" + std::to_string(index + 1);
    case LayerKind::Decode: return "D" + std::to_string(index + 1);
    case LayerKind::FC: return "FC";
  }
  return "?";
}

LayerSpec encoder(std::optional<std::size_t> n_samples, std::optional<std::size_t> k,
                  std::vector<std::size_t> widths, std::optional<double> sigma, bool iam) {
  LayerSpec s;
  s.kind = LayerKind::Encode;
  s.n_samples = n_samples;
  s.k = k;
  s.widths = std::move(widths);
  s.sigma = sigma;
  s.use_iam = iam;
  return s;
}

LayerSpec decoder(std::vector<std::size_t> widths) {
  LayerSpec s;
  s.kind = LayerKind::Decode;
  s.k = kDecoderNeighbors;
  s.widths = std::move(widths);
  return s;
}

LayerSpec head(std::vector<std::size_t> widths, double dropout) {
  LayerSpec s;
  s.kind = LayerKind::FC;
  s.widths = std::move(widths);
  s.dropout = dropout;
  return s;
}

std::uint64_t phi_parameters(std::size_t mid) {
  return kGeometryChannels * kPhiHidden + kPhiHidden + kPhiHidden * mid + mid;
}

std::uint64_t linear_parameters(std::size_t in, std::size_t out) { return in * out + out; }

// Channels of every level: [input, E1 out, E2 out, ...].
std::vector<std::size_t> level_channels(const NetworkSpec& spec) {
  std::vector<std::size_t> c{spec.in_features};
  for (const LayerSpec& l : spec.layers) {
    if (l.kind == LayerKind::Encode) c.push_back(l.widths.back());
  }
  return c;
}

// Encoder sigma used for densities on level `fine` (0 is the input).
std::optional<double> decoder_sigma(const NetworkSpec& spec, std::size_t fine) {
  std::size_t e = fine == 0 ? 0 : fine - 1;
  for (const LayerSpec& l : spec.layers) {
    if (l.kind != LayerKind::Encode) continue;
    if (e-- == 0) return l.sigma;
  }
  return std::nullopt;
}

std::size_t resolve_samples(const LayerSpec& l, std::size_t available, bool clamp,
                            const std::string& name) {
  if (!l.n_samples) return 1;
  if (*l.n_samples > available) {
    if (clamp) return available;
    throw std::invalid_argument(name + ": needs " + std::to_string(*l.n_samples) +
                                " points, input has " + std::to_string(available));
  }
  return *l.n_samples;
}

}  // namespace

std::string task_name(Task task) {
  switch (task) {
    case Task::Classification: return "classification";
    case Task::SemanticSegmentation: return "semantic_seg";
    case Task::PartSegmentation: return "part_seg";
  }
  return "?";
}

std::size_t NetworkSpec::num_classes() const {
  if (layers.empty() || layers.back().kind != LayerKind::FC || layers.back().widths.empty()) return 0;
  return layers.back().widths.back();
}

std::size_t NetworkSpec::encoder_count() const {
  return std::count_if(layers.begin(), layers.end(),
                       [](const LayerSpec& l) { return l.kind == LayerKind::Encode; });
}

std::size_t NetworkSpec::decoder_count() const {
  return std::count_if(layers.begin(), layers.end(),
                       [](const LayerSpec& l) { return l.kind == LayerKind::Decode; });
}

void NetworkSpec::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("network spec: " + msg); };
  if (in_features < 3) fail("in_features must be at least 3 (xyz)");
  if (layers.empty() || layers.back().kind != LayerKind::FC) fail("must end with an FC layer");
  int stage = 0;  // 0 encoders, 1 decoders, 2 head
  std::size_t e = 0, d = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const int want = l.kind == LayerKind::Encode ? 0 : l.kind == LayerKind::Decode ? 1 : 2;
    if (want < stage) fail("layers must be ordered encoders, decoders, FC");
    if (want == 2 && i + 1 != layers.size()) fail("only one FC layer is allowed");
    stage = want;
    const std::string name = layer_name(l.kind, l.kind == LayerKind::Encode ? e : d);
    if (l.widths.empty()) fail(name + ": widths must not be empty");
    for (std::size_t w : l.widths) {
      if (w == 0) fail(name + ": widths must be positive");
    }
    if (l.sigma && !(*l.sigma > 0.0 && std::isfinite(*l.sigma))) fail(name + ": sigma must be positive");
    if (l.n_samples && *l.n_samples == 0) fail(name + ": sample count must be positive");
    if (l.k && *l.k == 0) fail(name + ": neighbor count must be positive");
    if (l.mid_channels == 0) fail(name + ": cmid must be positive");
    if (l.use_iam && !iam_reduction_supported(l.reduction)) fail(name + ": r must be 4, 8, 16 or 32");
    if (l.kind == LayerKind::Decode && !l.k) fail(name + ": decoder needs a numeric k");
    if (l.kind == LayerKind::FC) {
      if (l.widths.size() < 2) fail("FC needs an input width and at least one output width");
      if (!(l.dropout >= 0.0 && l.dropout < 1.0)) fail("FC dropout must be in [0, 1)");
    }
    if (l.kind == LayerKind::Encode) ++e;
    if (l.kind == LayerKind::Decode) ++d;
  }
  if (e == 0) fail("at least one encoder is required");
  if (task == Task::Classification && d != 0) fail("classification networks have no decoders");
  if (task != Task::Classification && d != e) {
    fail("segmentation needs as many decoders as encoders (" + std::to_string(e) + " vs " +
         std::to_string(d) + ")");
  }
  std::size_t current = level_channels(*this).back();
  if (task != Task::Classification) current = layers[layers.size() - 2].widths.back();
  if (layers.back().widths.front() != current) {
    fail("FC input width " + std::to_string(layers.back().widths.front()) +
         " does not match the preceding layer's " + std::to_string(current) + " channels");
  }
}

NetworkSpec build_classifier() {
  NetworkSpec s;
  s.task = Task::Classification;
  s.in_features = 3;
  s.layers = {encoder(256, 32, {64, 64, 64}, 0.1, false),
              encoder(64, 32, {64, 64, 128}, 0.2, false),
              encoder(std::nullopt, std::nullopt, {256, 512, 1024}, std::nullopt, false),
              head({1024, 512, 256, 40}, 0.4)};
  return s;
}

NetworkSpec build_semantic_segmenter() {
  NetworkSpec s;
  s.task = Task::SemanticSegmentation;
  s.in_features = 9;
  s.layers = {encoder(1024, 32, {32, 32, 64}, 0.1, true),
              encoder(256, 32, {64, 64, 128}, 0.2, true),
              encoder(64, 32, {128, 128, 256}, 0.4, true),
              encoder(16, 32, {256, 256, 512}, 0.8, true),
              decoder({256, 256}),
              decoder({256, 256}),
              decoder({256, 128}),
              decoder({128, 128, 128}),
              head({128, 128, 13}, 0.5)};
  return s;
}

NetworkSpec build_part_segmenter() {
  NetworkSpec s;
  s.task = Task::PartSegmentation;
  s.in_features = 3;
  s.layers = {encoder(512, 32, {64, 64, 128}, 0.1, true),
              encoder(128, 32, {128, 128, 256}, 0.2, true),
              encoder(std::nullopt, std::nullopt, {256, 512, 1024}, std::nullopt, true),
              decoder({256, 256}),
              decoder({256, 128}),
              decoder({128, 128, 128}),
              head({128, 128, 50}, 0.5)};
  return s;
}

// ---------------------------------------------------------------------------
// Config text

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::size_t parse_count(const std::string& s, const std::string& what) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    throw std::invalid_argument("bad " + what + " '" + s + "'");
  }
  return v;
}

double parse_real(const std::string& s, const std::string& what) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    throw std::invalid_argument("bad " + what + " '" + s + "'");
  }
  return v;
}

std::vector<std::size_t> parse_widths(const std::string& s) {
  std::vector<std::size_t> w;
  for (const std::string& part : split(s, ',')) w.push_back(parse_count(part, "width"));
  return w;
}

bool parse_flag(const std::string& s) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw std::invalid_argument("bad flag '" + s + "'");
}

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join_widths(const std::vector<std::size_t>& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + std::to_string(w[i]);
  return s;
}

}  // namespace

NetworkSpec parse_network_spec(std::istream& in) {
  NetworkSpec spec;
  spec.layers.clear();
  bool have_task = false;
  std::string raw;
  for (std::size_t line_no = 1; std::getline(in, raw); ++line_no) {
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    std::istringstream ls(raw);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    try {
      const std::string& head_tok = tok[0];
      if (head_tok == "task") {
        if (tok.size() != 2) throw std::invalid_argument("expected 'task <name>'");
        if (tok[1] == "classification") spec.task = Task::Classification;
        else if (tok[1] == "semantic_seg") spec.task = Task::SemanticSegmentation;
        else if (tok[1] == "part_seg") spec.task = Task::PartSegmentation;
        else throw std::invalid_argument("unknown task '" + tok[1] + "'");
        have_task = true;
        continue;
      }
      if (head_tok == "in_features") {
        if (tok.size() != 2) throw std::invalid_argument("expected 'in_features <n>'");
        spec.in_features = parse_count(tok[1], "in_features");
        continue;
      }
      LayerSpec l;
      std::size_t pos = 1;
      if (head_tok == "E") {
        if (tok.size() < 4) throw std::invalid_argument("expected 'E <samples|none> <k|all> <widths>'");
        l.kind = LayerKind::Encode;
        if (tok[1] != "none") l.n_samples = parse_count(tok[1], "sample count");
        if (tok[2] != "all") l.k = parse_count(tok[2], "neighbor count");
        l.widths = parse_widths(tok[3]);
        pos = 4;
      } else if (head_tok == "D") {
        if (tok.size() < 2) throw std::invalid_argument("expected 'D <widths>'");
        l.kind = LayerKind::Decode;
        l.k = kDecoderNeighbors;
        l.widths = parse_widths(tok[1]);
        pos = 2;
      } else if (head_tok == "FC") {
        if (tok.size() < 2) throw std::invalid_argument("expected 'FC <widths>'");
        l.kind = LayerKind::FC;
        l.widths = parse_widths(tok[1]);
        pos = 2;
      } else {
        throw std::invalid_argument("unknown directive '" + head_tok + "'");
      }
      for (; pos < tok.size(); ++pos) {
        const auto eq = tok[pos].find('=');
        if (eq == std::string::npos) throw std::invalid_argument("expected key=value, got '" + tok[pos] + "'");
        const std::string key = tok[pos].substr(0, eq), val = tok[pos].substr(eq + 1);
        if (l.kind == LayerKind::Encode && key == "sigma") {
          l.sigma = val == "none" ? std::nullopt : std::optional<double>(parse_real(val, "sigma"));
        } else if (l.kind == LayerKind::Encode && key == "iam") {
          l.use_iam = parse_flag(val);
        } else if (l.kind == LayerKind::Encode && key == "r") {
          l.reduction = parse_count(val, "r");
          if (!iam_reduction_supported(l.reduction)) throw std::invalid_argument("r must be 4, 8, 16 or 32");
        } else if (l.kind != LayerKind::FC && key == "cmid") {
          l.mid_channels = parse_count(val, "cmid");
        } else if (l.kind == LayerKind::Decode && key == "k") {
          l.k = parse_count(val, "k");
        } else if (l.kind == LayerKind::FC && key == "dropout") {
          l.dropout = parse_real(val, "dropout");
        } else {
          throw std::invalid_argument("unknown key '" + key + "' for " + head_tok);
        }
      }
      spec.layers.push_back(std::move(l));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("architecture line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_task) throw std::invalid_argument("architecture: missing 'task' line");
  spec.validate();
  return spec;
}

NetworkSpec parse_network_spec_string(const std::string& text) {
  std::istringstream in(text);
  return parse_network_spec(in);
}

NetworkSpec load_network_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open architecture file '" + path + "'");
  return parse_network_spec(in);
}

std::string format_network_spec(const NetworkSpec& spec) {
  std::ostringstream out;
  out << "task " << task_name(spec.task) << "\n";
  out << "in_features " << spec.in_features << "\n";
  for (const LayerSpec& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::Encode:
        out << "E " << (l.n_samples ? std::to_string(*l.n_samples) : "none") << " "
            << (l.k ? std::to_string(*l.k) : "all") << " " << join_widths(l.widths)
            << " sigma=" << (l.sigma ? format_real(*l.sigma) : "none") << " iam=" << (l.use_iam ? 1 : 0)
            << " r=" << l.reduction << " cmid=" << l.mid_channels << "\n";
        break;
      case LayerKind::Decode:
        out << "D " << join_widths(l.widths) << " k=" << *l.k << " cmid=" << l.mid_channels << "\n";
        break;
      case LayerKind::FC:
        out << "FC " << join_widths(l.widths) << " dropout=" << format_real(l.dropout) << "\n";
        break;
    }
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Symbolic walks

std::vector<LayerShape> walk_shapes(const NetworkSpec& spec, std::size_t n_points, bool clamp_samples) {
  spec.validate();
  std::vector<std::size_t> level_points{n_points};
  std::vector<LayerShape> shapes;
  std::size_t e = 0, d = 0;
  std::size_t points = n_points;
  const std::size_t encoders = spec.encoder_count();
  for (const LayerSpec& l : spec.layers) {
    if (l.kind == LayerKind::Encode) {
      const std::string name = layer_name(l.kind, e++);
      const std::size_t src = points;
      points = resolve_samples(l, src, clamp_samples, name);
      shapes.push_back({name, points, l.k ? *l.k : src, l.widths.back()});
      level_points.push_back(points);
    } else if (l.kind == LayerKind::Decode) {
      points = level_points[encoders - 1 - d];
      shapes.push_back({layer_name(l.kind, d++), points, *l.k, l.widths.back()});
    } else {
      if (spec.task == Task::Classification) points = 1;
      shapes.push_back({"FC", points, 0, l.widths.back()});
    }
  }
  return shapes;
}

std::uint64_t count_parameters(const NetworkSpec& spec) {
  spec.validate();
  const std::vector<std::size_t> levels = level_channels(spec);
  std::uint64_t total = 0;
  std::size_t e = 0, d = 0;
  std::size_t current = 0;
  for (const LayerSpec& l : spec.layers) {
    if (l.kind == LayerKind::Encode) {
      std::size_t in = levels[e] + 3;
      if (l.use_iam) {
        const std::size_t cr = iam_reduced_channels(in, l.reduction);
        total += linear_parameters(in, cr) + 2 * linear_parameters(cr, in);
      }
      for (std::size_t w : l.widths) {
        total += phi_parameters(l.mid_channels) + in * l.mid_channels * w + 2 * w;
        in = w;
      }
      current = in;
      ++e;
    } else if (l.kind == LayerKind::Decode) {
      std::size_t in = current + levels[levels.size() - 2 - d];
      for (std::size_t i = 0; i + 1 < l.widths.size(); ++i) {
        total += linear_parameters(in, l.widths[i]) + 2 * l.widths[i];
        in = l.widths[i];
      }
      const std::size_t w = l.widths.back();
      total += phi_parameters(l.mid_channels) + (in + 3) * l.mid_channels * w + 2 * w;
      current = w;
      ++d;
    } else {
      for (std::size_t i = 1; i < l.widths.size(); ++i) {
        total += linear_parameters(l.widths[i - 1], l.widths[i]);
        if (i + 1 < l.widths.size()) total += 2 * l.widths[i];
      }
    }
  }
  return total;
}

NetworkCost count_flops(const NetworkSpec& spec, std::size_t n_points,
                        std::optional<std::size_t> reduction) {
  NetworkCost cost;
  cost.parameters = count_parameters(spec);
  const std::vector<std::size_t> levels = level_channels(spec);
  const std::vector<LayerShape> shapes = walk_shapes(spec, n_points);
  std::vector<std::size_t> level_points{n_points};
  for (const LayerShape& s : shapes) {
    if (s.name[0] == 'E') level_points.push_back(s.points);
  }
  auto add_daconv = [&](const std::string& name, std::size_t centers, std::size_t k, std::size_t in,
                        std::size_t mid, std::size_t out) {
    LayerCost lc{name, centers, k, in, mid, out,
                 count_cost(k, in, mid, out, DAConvVariant::Naive),
                 count_cost(k, in, mid, out, DAConvVariant::Reformulated)};
    cost.flops += centers * (lc.reformulated.multiply_add_count +
                             k * (kGeometryChannels * kPhiHidden + kPhiHidden * mid));
    cost.daconv_layers.push_back(std::move(lc));
  };
  std::size_t e = 0, d = 0, idx = 0, current = 0;
  for (const LayerSpec& l : spec.layers) {
    const LayerShape& shape = shapes[idx++];
    if (l.kind == LayerKind::Encode) {
      std::size_t in = levels[e] + 3;
      if (l.use_iam) {
        cost.flops += iam_flops(1, in, shape.points, shape.neighbors, reduction.value_or(l.reduction));
      }
      for (std::size_t j = 0; j < l.widths.size(); ++j) {
        add_daconv(shape.name + "." + std::to_string(j + 1), shape.points, shape.neighbors, in,
                   l.mid_channels, l.widths[j]);
        in = l.widths[j];
      }
      current = in;
      ++e;
    } else if (l.kind == LayerKind::Decode) {
      std::size_t in = current + levels[levels.size() - 2 - d];
      for (std::size_t i = 0; i + 1 < l.widths.size(); ++i) {
        cost.flops += shape.points * in * l.widths[i];
        in = l.widths[i];
      }
      add_daconv(shape.name, shape.points, shape.neighbors, in + 3, l.mid_channels, l.widths.back());
      current = l.widths.back();
      ++d;
    } else {
      for (std::size_t i = 1; i < l.widths.size(); ++i) {
        cost.flops += shape.points * l.widths[i - 1] * l.widths[i];
      }
    }
  }
  return cost;
}

// ---------------------------------------------------------------------------
// Model

struct Network::Level {
  std::vector<std::vector<Point3>> positions;  // per sample
  Tensor features;                             // [B * points, C]

  std::size_t batch() const { return positions.size(); }
  std::size_t points() const { return positions.front().size(); }
};

Network::Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)), dropout_rng_(seed ^ 0x9e3779b97f4a7c15ULL) {
  spec_.validate();
  nn::Rng rng(seed);
  const std::vector<std::size_t> levels = level_channels(spec_);
  std::size_t e = 0, d = 0, current = 0;
  for (const LayerSpec& l : spec_.layers) {
    if (l.kind == LayerKind::Encode) {
      Encoder enc;
      enc.spec = l;
      std::size_t in = levels[e] + 3;
      if (l.use_iam) enc.iam = IAMParams::create(in, l.reduction, rng);
      for (std::size_t w : l.widths) {
        enc.blocks.push_back({DAConvParams::create(in, l.mid_channels, w, rng), nn::BatchNorm(w)});
        enc.blocks.back().conv.sigma = l.sigma;
        in = w;
      }
      current = in;
      encoders_.push_back(std::move(enc));
      ++e;
    } else if (l.kind == LayerKind::Decode) {
      Decoder dec;
      dec.spec = l;
      const std::size_t fine = levels.size() - 2 - d;
      dec.sigma = decoder_sigma(spec_, fine);
      std::size_t in = current + levels[fine];
      for (std::size_t i = 0; i + 1 < l.widths.size(); ++i) {
        dec.mlps.emplace_back(in, l.widths[i], rng);
        dec.mlp_norms.emplace_back(l.widths[i]);
        in = l.widths[i];
      }
      dec.block = {DAConvParams::create(in + 3, l.mid_channels, l.widths.back(), rng),
                   nn::BatchNorm(l.widths.back())};
      dec.block.conv.sigma = dec.sigma;
      current = l.widths.back();
      decoders_.push_back(std::move(dec));
      ++d;
    } else {
      head_.dropout = l.dropout;
      for (std::size_t i = 1; i < l.widths.size(); ++i) {
        head_.linears.emplace_back(l.widths[i - 1], l.widths[i], rng);
        if (i + 1 < l.widths.size()) head_.norms.emplace_back(l.widths[i]);
      }
    }
  }
}

NamedTensors Network::parameters() const {
  NamedTensors out;
  for (std::size_t e = 0; e < encoders_.size(); ++e) {
    const std::string p = "enc" + std::to_string(e + 1);
    if (encoders_[e].iam) encoders_[e].iam->collect_parameters(p + ".iam", out);
    for (std::size_t j = 0; j < encoders_[e].blocks.size(); ++j) {
      encoders_[e].blocks[j].conv.collect_parameters(p + ".conv" + std::to_string(j + 1), out);
      encoders_[e].blocks[j].norm.collect_parameters(p + ".bn" + std::to_string(j + 1), out);
    }
  }
  for (std::size_t d = 0; d < decoders_.size(); ++d) {
    const std::string p = "dec" + std::to_string(d + 1);
    for (std::size_t i = 0; i < decoders_[d].mlps.size(); ++i) {
      decoders_[d].mlps[i].collect_parameters(p + ".mlp" + std::to_string(i + 1), out);
      decoders_[d].mlp_norms[i].collect_parameters(p + ".mlp_bn" + std::to_string(i + 1), out);
    }
    decoders_[d].block.conv.collect_parameters(p + ".conv", out);
    decoders_[d].block.norm.collect_parameters(p + ".bn", out);
  }
  for (std::size_t i = 0; i < head_.linears.size(); ++i) {
    head_.linears[i].collect_parameters("fc.linear" + std::to_string(i + 1), out);
    if (i < head_.norms.size()) head_.norms[i].collect_parameters("fc.bn" + std::to_string(i + 1), out);
  }
  return out;
}

NamedTensors Network::buffers() const {
  NamedTensors out;
  for (std::size_t e = 0; e < encoders_.size(); ++e) {
    for (std::size_t j = 0; j < encoders_[e].blocks.size(); ++j) {
      encoders_[e].blocks[j].norm.collect_buffers(
          "enc" + std::to_string(e + 1) + ".bn" + std::to_string(j + 1), out);
    }
  }
  for (std::size_t d = 0; d < decoders_.size(); ++d) {
    const std::string p = "dec" + std::to_string(d + 1);
    for (std::size_t i = 0; i < decoders_[d].mlp_norms.size(); ++i) {
      decoders_[d].mlp_norms[i].collect_buffers(p + ".mlp_bn" + std::to_string(i + 1), out);
    }
    decoders_[d].block.norm.collect_buffers(p + ".bn", out);
  }
  for (std::size_t i = 0; i < head_.norms.size(); ++i) {
    head_.norms[i].collect_buffers("fc.bn" + std::to_string(i + 1), out);
  }
  return out;
}

NamedTensors Network::state() const {
  NamedTensors out = parameters();
  for (auto& entry : buffers()) out.push_back(std::move(entry));
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : parameters()) n += t.numel();
  return n;
}

void Network::save(const std::string& path) const { save_checkpoint(path, state()); }

void Network::load(const std::string& path) {
  NamedTensors loaded = load_checkpoint(path);
  NamedTensors mine = state();
  if (loaded.size() != mine.size()) {
    throw std::runtime_error("checkpoint '" + path + "' holds " + std::to_string(loaded.size()) +
                             " tensors, network expects " + std::to_string(mine.size()));
  }
  nn::assign_named(loaded, mine);
}

namespace {

// Neighborhoods and densities of one sample.
struct SampleGroup {
  std::vector<std::size_t> centers;
  NeighborhoodIndex nbr;   // one row per center
  std::vector<double> density;  // one per source point
};

SampleGroup group_sample(std::span<const Point3> pts, std::optional<std::vector<std::size_t>> centers,
                         std::size_t k, std::optional<double> sigma) {
  const std::size_t n = pts.size();
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  NeighborhoodIndex full = knn_search(pts, all, k);
  const double bw = sigma ? *sigma : mean_nearest_neighbor_distance(pts);
  SampleGroup g;
  g.density = kde_density(pts, full, bw).values;
  if (!centers) {
    g.centers = std::move(all);
    g.nbr = std::move(full);
    return g;
  }
  g.centers = std::move(*centers);
  g.nbr.k = k;
  g.nbr.centers = g.centers;
  g.nbr.neighbors.reserve(g.centers.size() * k);
  g.nbr.distances.reserve(g.centers.size() * k);
  for (std::size_t c : g.centers) {
    g.nbr.neighbors.insert(g.nbr.neighbors.end(), full.neighbors.begin() + c * k,
                           full.neighbors.begin() + (c + 1) * k);
    g.nbr.distances.insert(g.nbr.distances.end(), full.distances.begin() + c * k,
                           full.distances.begin() + (c + 1) * k);
  }
  return g;
}

// Batched grouping inputs: encodings, relative offsets and global gather rows.
struct BatchGroup {
  GeometricEncoding enc;
  Tensor relative;                  // [B * S * K, 3]
  std::vector<std::size_t> gather;  // B * S * K source rows
};

BatchGroup assemble(const std::vector<std::vector<Point3>>& positions,
                    const std::vector<SampleGroup>& groups) {
  const std::size_t b = positions.size(), n = positions.front().size();
  const std::size_t s = groups.front().centers.size(), k = groups.front().nbr.k;
  std::vector<double> enc(b * s * k * kGeometryChannels), rel(b * s * k * 3);
  std::vector<std::size_t> gather(b * s * k);
  for (std::size_t bi = 0; bi < b; ++bi) {
    const auto& pts = positions[bi];
    const SampleGroup& g = groups[bi];
    GeometricEncoding e = fuse_geometry(pts, g.density, g.nbr);
    std::copy(e.vectors.data().begin(), e.vectors.data().end(),
              enc.begin() + bi * s * k * kGeometryChannels);
    for (std::size_t r = 0; r < s; ++r) {
      const Point3& c = pts[g.centers[r]];
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t src = g.nbr.neighbor(r, j);
        const std::size_t row = (bi * s + r) * k + j;
        gather[row] = bi * n + src;
        for (int a = 0; a < 3; ++a) rel[row * 3 + a] = pts[src][a] - c[a];
      }
    }
  }
  return {{Tensor({b * s, k, kGeometryChannels}, std::move(enc))},
          Tensor({b * s * k, 3}, std::move(rel)),
          std::move(gather)};
}

Tensor grouped_features(const BatchGroup& bg, const Tensor& features) {
  const std::size_t rows = bg.enc.centers(), k = bg.enc.neighbors();
  Tensor g = concat({bg.relative, gather_rows(features, bg.gather)}, 1);
  return reshape(g, {rows, k, g.dim(1)});
}

}  // namespace

Tensor Network::run_daconv(Block& block, const Tensor& grouped, const GeometricEncoding& enc,
                           bool aggregate, bool training) {
  const std::size_t rows = grouped.dim(0), k = grouped.dim(1), out = block.conv.out_channels;
  Tensor x = daconv_mix(grouped, adaptive_weights(enc, block.conv), block.conv.kernel);
  x = leaky_relu(block.norm(reshape(x, {rows * k, out}), training));
  x = reshape(x, {rows, k, out});
  return aggregate ? aggregate_neighbors(x, block.conv.aggregation) : x;
}

Network::Level Network::run_encoder(Encoder& enc, const Level& in, std::size_t index, bool training,
                                    const ForwardOptions& options) {
  const std::string name = layer_name(LayerKind::Encode, index);
  const std::size_t b = in.batch(), n = in.points();
  const std::size_t s = resolve_samples(enc.spec, n, options.clamp_samples, name);
  const std::size_t k = enc.spec.k ? *enc.spec.k : n;

  std::vector<SampleGroup> groups(b);
#pragma omp parallel for schedule(static)
  for (std::size_t bi = 0; bi < b; ++bi) {
    const auto& pts = in.positions[bi];
    std::vector<std::size_t> centers = enc.spec.n_samples
                                           ? farthest_point_sample(pts, s)
                                           : std::vector<std::size_t>{centroid_nearest_index(pts)};
    groups[bi] = group_sample(pts, std::move(centers), k, enc.spec.sigma);
  }
  BatchGroup bg = assemble(in.positions, groups);
  Tensor x = grouped_features(bg, in.features);  // [B*S, K, C]
  const std::size_t c = x.dim(2);
  if (enc.iam) {
    Tensor f = permute(reshape(x, {b, s, k, c}), {0, 3, 1, 2});
    f = apply_iam(f, *enc.iam);
    x = reshape(permute(f, {0, 2, 3, 1}), {b * s, k, c});
  }
  for (std::size_t j = 0; j < enc.blocks.size(); ++j) {
    x = run_daconv(enc.blocks[j], x, bg.enc, j + 1 == enc.blocks.size(), training);
  }

  Level out;
  out.positions.resize(b);
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t ci : groups[bi].centers) out.positions[bi].push_back(in.positions[bi][ci]);
  }
  out.features = x;
  if (options.trace) options.trace->push_back({name, s, k, x.dim(1)});
  return out;
}

Network::Level Network::run_decoder(Decoder& dec, const Level& coarse, const Level& fine,
                                    std::size_t index, bool training, const ForwardOptions& options) {
  const std::size_t b = fine.batch(), nf = fine.points(), nc = coarse.points();
  const std::size_t k = *dec.spec.k;
  std::vector<std::size_t> idx(b * nf * 3);
  std::vector<double> w(b * nf * 3);
  std::vector<SampleGroup> groups(b);
#pragma omp parallel for schedule(static)
  for (std::size_t bi = 0; bi < b; ++bi) {
    InterpolationStencil st = interpolation_stencil(coarse.positions[bi], fine.positions[bi]);
    for (std::size_t i = 0; i < nf * 3; ++i) {
      idx[bi * nf * 3 + i] = bi * nc + st.index[i];
      w[bi * nf * 3 + i] = st.weight[i];
    }
    groups[bi] = group_sample(fine.positions[bi], std::nullopt, k, dec.sigma);
  }
  Tensor x = concat({weighted_gather_rows(coarse.features, idx, w, 3), fine.features}, 1);
  for (std::size_t i = 0; i < dec.mlps.size(); ++i) {
    x = leaky_relu(dec.mlp_norms[i](dec.mlps[i](x), training));
  }
  BatchGroup bg = assemble(fine.positions, groups);
  x = run_daconv(dec.block, grouped_features(bg, x), bg.enc, true, training);

  Level out;
  out.positions = fine.positions;
  out.features = x;
  if (options.trace) {
    options.trace->push_back({layer_name(LayerKind::Decode, index), nf, k, x.dim(1)});
  }
  return out;
}

Tensor Network::run_head(const Tensor& input, bool training) {
  Tensor x = input;
  for (std::size_t i = 0; i < head_.linears.size(); ++i) {
    x = head_.linears[i](x);
    if (i < head_.norms.size()) {
      x = leaky_relu(head_.norms[i](x, training));
      if (head_.dropout > 0.0) x = dropout(x, head_.dropout, dropout_rng_, training);
    }
  }
  return x;
}

Tensor Network::forward(const std::vector<PointCloud>& batch, bool training,
                        const ForwardOptions& options) {
  if (batch.empty()) throw std::invalid_argument("forward: empty batch");
  const std::size_t n = batch.front().size();
  const std::size_t attrs = spec_.in_features - 3;
  for (const PointCloud& c : batch) {
    c.validate();
    if (c.size() != n) {
      throw std::invalid_argument("forward: clouds in a batch must have equal sizes (" +
                                  std::to_string(n) + " vs " + std::to_string(c.size()) + ")");
    }
    if (c.attribute_dim != attrs) {
      throw std::invalid_argument("forward: network expects " + std::to_string(attrs) +
                                  " attributes per point, cloud has " + std::to_string(c.attribute_dim));
    }
  }
  const std::size_t b = batch.size();
  const std::size_t c_in = spec_.in_features;
  Level level;
  std::vector<double> feat(b * n * c_in);
  for (std::size_t bi = 0; bi < b; ++bi) {
    level.positions.push_back(batch[bi].positions);
    for (std::size_t i = 0; i < n; ++i) {
      double* row = feat.data() + (bi * n + i) * c_in;
      std::copy(batch[bi].positions[i].begin(), batch[bi].positions[i].end(), row);
      std::copy_n(batch[bi].attributes.begin() + i * attrs, attrs, row + 3);
    }
  }
  level.features = Tensor({b * n, c_in}, std::move(feat));

  std::vector<Level> levels{level};
  for (std::size_t e = 0; e < encoders_.size(); ++e) {
    levels.push_back(run_encoder(encoders_[e], levels.back(), e, training, options));
  }

  const std::size_t classes = spec_.num_classes();
  if (spec_.task == Task::Classification) {
    Tensor x = levels.back().features;
    const std::size_t s = levels.back().points(), c = x.dim(1);
    if (s > 1) x = reshape(max_pool(reshape(x, {b, s, c}), 1), {b, c});
    Tensor logits = run_head(x, training);
    if (options.trace) options.trace->push_back({"FC", 1, 0, classes});
    return logits;
  }
  Level current = levels.back();
  for (std::size_t d = 0; d < decoders_.size(); ++d) {
    current = run_decoder(decoders_[d], current, levels[levels.size() - 2 - d], d, training, options);
  }
  Tensor logits = run_head(current.features, training);
  if (options.trace) options.trace->push_back({"FC", n, 0, classes});
  return reshape(logits, {b, n, classes});
}

}  // namespace danet
