#include "danet/dataio.hpp"

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

PointCloud parse_pointcloud_text(std::istream& in, const std::string& name) {
  PointCloud cloud;
  std::size_t fields = 0;
  std::string line;
  std::vector<double> values;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::replace(line.begin(), line.end(), ',', ' ');
    values.clear();
    std::istringstream ls(line);
    for (std::string tok; ls >> tok;) {
      double v = 0;
      auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || p != tok.data() + tok.size()) {
        throw std::runtime_error(name + ":" + std::to_string(line_no) + ": bad number '" + tok + "'");
      }
      values.push_back(v);
    }
    if (values.empty()) continue;
    if (fields == 0) {
      if (values.size() != 3 && values.size() != 6 && values.size() != 9) {
        throw std::runtime_error(name + ":" + std::to_string(line_no) + ": expected 3, 6 or 9 values, got " +
                                 std::to_string(values.size()));
      }
      fields = values.size();
      cloud.attribute_dim = fields - 3;
    } else if (values.size() != fields) {
      throw std::runtime_error(name + ":" + std::to_string(line_no) + ": " + std::to_string(values.size()) +
                               " values where earlier lines have " + std::to_string(fields));
    }
    cloud.positions.push_back({values[0], values[1], values[2]});
    cloud.attributes.insert(cloud.attributes.end(), values.begin() + 3, values.end());
  }
  if (cloud.positions.empty()) throw std::runtime_error(name + ": no points");
  try {
    cloud.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(name + ": " + e.what());
  }
  return cloud;
}

PointCloud load_pointcloud_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open point file '" + path + "'");
  return parse_pointcloud_text(in, path);
}

void write_pointcloud_text(std::ostream& out, const PointCloud& cloud) {
  char buf[32];
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (std::size_t a = 0; a < 3 + cloud.attribute_dim; ++a) {
      const double v = a < 3 ? cloud.positions[i][a] : cloud.attributes[i * cloud.attribute_dim + a - 3];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      if (a) out << ' ';
      out << buf;
    }
    out << '\n';
  }
}

void save_pointcloud_text(const std::string& path, const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write point file '" + path + "'");
  write_pointcloud_text(out, cloud);
  if (!out) throw std::runtime_error("error writing '" + path + "'");
}

std::string schema_name(FeatureSchema schema) {
  switch (schema) {
    case FeatureSchema::Xyz: return "xyz";
    case FeatureSchema::XyzNormal: return "xyz+normal";
    case FeatureSchema::Full9: return "9";
  }
  return "?";
}

std::size_t schema_attributes(FeatureSchema schema) {
  switch (schema) {
    case FeatureSchema::Xyz: return 0;
    case FeatureSchema::XyzNormal: return 3;
    case FeatureSchema::Full9: return 6;
  }
  return 0;
}

void DatasetManifest::validate(bool check_files) const {
  if (class_names.empty()) throw std::runtime_error("manifest: no classes");
  for (const auto* split : {&train, &test}) {
    for (const ManifestEntry& e : *split) {
      if (e.label < 0 || static_cast<std::size_t>(e.label) >= class_names.size()) {
        throw std::runtime_error("manifest: label " + std::to_string(e.label) + " of '" + e.path +
                                 "' outside [0, " + std::to_string(class_names.size()) + ")");
      }
      if (check_files && !fs::exists(fs::path(root) / e.path)) {
        throw std::runtime_error("manifest: missing file '" + (fs::path(root) / e.path).string() + "'");
      }
    }
  }
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest '" + path + "'");
  DatasetManifest m;
  m.root = fs::path(path).parent_path().string();
  std::vector<ManifestEntry>* section = nullptr;
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string where = path + ":" + std::to_string(line_no) + ": ";
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(1, eq - 1), val = line.substr(eq + 1);
      if (key == "classes") {
        std::istringstream vs(val);
        m.class_names.clear();
        for (std::string c; std::getline(vs, c, ',');) m.class_names.push_back(c);
      } else if (key == "schema") {
        if (val == "xyz") m.schema = FeatureSchema::Xyz;
        else if (val == "xyz+normal") m.schema = FeatureSchema::XyzNormal;
        else if (val == "9") m.schema = FeatureSchema::Full9;
        else throw std::runtime_error(where + "unknown schema '" + val + "'");
      } else if (key == "points") {
        m.points_per_sample = std::stoul(val);
      } else {
        throw std::runtime_error(where + "unknown header '" + key + "'");
      }
      continue;
    }
    if (line == "@train") { section = &m.train; continue; }
    if (line == "@test") { section = &m.test; continue; }
    if (!section) throw std::runtime_error(where + "entry before any @train/@test section");
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error(where + "expected 'label<TAB>path'");
    ManifestEntry e;
    const std::string lab = line.substr(0, tab);
    auto [p, ec] = std::from_chars(lab.data(), lab.data() + lab.size(), e.label);
    if (ec != std::errc() || p != lab.data() + lab.size()) {
      throw std::runtime_error(where + "bad label '" + lab + "'");
    }
    e.path = line.substr(tab + 1);
    section->push_back(std::move(e));
  }
  m.validate(true);
  return m;
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest '" + path + "'");
  out << "#classes=";
  for (std::size_t i = 0; i < m.class_names.size(); ++i) out << (i ? "," : "") << m.class_names[i];
  out << "\n#schema=" << schema_name(m.schema) << "\n#points=" << m.points_per_sample << "\n";
  out << "@train\n";
  for (const auto& e : m.train) out << e.label << '\t' << e.path << '\n';
  out << "@test\n";
  for (const auto& e : m.test) out << e.label << '\t' << e.path << '\n';
}

Dataset load_split(const DatasetManifest& m, Split split) {
  const auto& entries = split == Split::Train ? m.train : m.test;
  Dataset data;
  data.reserve(entries.size());
  for (const ManifestEntry& e : entries) {
    const std::string file = (fs::path(m.root) / e.path).string();
    Sample s{load_pointcloud_text(file), e.label};
    if (s.cloud.attribute_dim != schema_attributes(m.schema)) {
      throw std::runtime_error(file + ": has " + std::to_string(s.cloud.attribute_dim + 3) +
                               " values per point, schema '" + schema_name(m.schema) + "' expects " +
                               std::to_string(schema_attributes(m.schema) + 3));
    }
    if (m.points_per_sample && s.cloud.size() != m.points_per_sample) {
      throw std::runtime_error(file + ": has " + std::to_string(s.cloud.size()) + " points, manifest says " +
                               std::to_string(m.points_per_sample));
    }
    data.push_back(std::move(s));
  }
  return data;
}

// ---------------------------------------------------------------------------
// Synthetic shapes

std::string family_name(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::Sphere: return "sphere";
    case ShapeFamily::Cube: return "cube";
    case ShapeFamily::Cylinder: return "cylinder";
    case ShapeFamily::Cone: return "cone";
    case ShapeFamily::Torus: return "torus";
    case ShapeFamily::Plane: return "plane";
    case ShapeFamily::Helix: return "helix";
    case ShapeFamily::Cross: return "cross";
  }
  return "?";
}

std::vector<ShapeFamily> all_families() {
  return {ShapeFamily::Sphere, ShapeFamily::Cube, ShapeFamily::Cylinder, ShapeFamily::Cone,
          ShapeFamily::Torus,  ShapeFamily::Plane, ShapeFamily::Helix,   ShapeFamily::Cross};
}

ShapeFamily parse_family(const std::string& name) {
  for (ShapeFamily f : all_families()) {
    if (family_name(f) == name) return f;
  }
  throw std::invalid_argument("unknown shape family '" + name + "'");
}

namespace {

using Rng = std::mt19937_64;
constexpr double kPi = std::numbers::pi;

double unit(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

// Uniform point on the surface of an axis-aligned box with half extents h.
Point3 box_surface(const Point3& h, Rng& rng) {
  const double areas[3] = {h[1] * h[2], h[0] * h[2], h[0] * h[1]};  // faces normal to x, y, z
  double pick = unit(rng) * (areas[0] + areas[1] + areas[2]);
  int axis = 0;
  while (axis < 2 && pick >= areas[axis]) pick -= areas[axis++];
  Point3 p;
  for (int a = 0; a < 3; ++a) p[a] = (2.0 * unit(rng) - 1.0) * h[a];
  p[axis] = unit(rng) < 0.5 ? -h[axis] : h[axis];
  return p;
}

Point3 sample_point(ShapeFamily family, const double* v, Rng& rng) {
  switch (family) {
    case ShapeFamily::Sphere: {
      const double z = 2.0 * unit(rng) - 1.0, t = 2.0 * kPi * unit(rng), s = std::sqrt(1.0 - z * z);
      return {s * std::cos(t), z, s * std::sin(t)};
    }
    case ShapeFamily::Cube:
      return box_surface({v[0], v[1], v[2]}, rng);
    case ShapeFamily::Cylinder: {
      const double r = 0.5 * v[0], h = 1.6 * v[1];
      const double side = 2 * kPi * r * h, caps = 2 * kPi * r * r;
      const double t = 2 * kPi * unit(rng);
      if (unit(rng) * (side + caps) < side) return {r * std::cos(t), (unit(rng) - 0.5) * h, r * std::sin(t)};
      const double rho = r * std::sqrt(unit(rng));
      return {rho * std::cos(t), unit(rng) < 0.5 ? -h / 2 : h / 2, rho * std::sin(t)};
    }
    case ShapeFamily::Cone: {
      const double r = 0.6 * v[0], h = 1.5 * v[1];
      const double side = kPi * r * std::hypot(r, h), base = kPi * r * r;
      const double t = 2 * kPi * unit(rng), s = std::sqrt(unit(rng));
      if (unit(rng) * (side + base) < side) return {r * s * std::cos(t), h / 2 - h * s, r * s * std::sin(t)};
      return {r * s * std::cos(t), -h / 2, r * s * std::sin(t)};
    }
    case ShapeFamily::Torus: {
      const double big = 0.7 * v[0], small = 0.22 * v[1];
      for (;;) {
        const double t = 2 * kPi * unit(rng), p = 2 * kPi * unit(rng);
        if (unit(rng) * (big + small) > big + small * std::cos(p)) continue;
        const double rho = big + small * std::cos(p);
        return {rho * std::cos(t), small * std::sin(p), rho * std::sin(t)};
      }
    }
    case ShapeFamily::Plane:
      return {(2 * unit(rng) - 1) * v[0], 0.0, (2 * unit(rng) - 1) * 0.8 * v[1]};
    case ShapeFamily::Helix: {
      const double radius = 0.5 * v[0], height = 2.0 * v[1], turns = 3.0, tube = 0.06;
      const double s = unit(rng), t = 2 * kPi * turns * s, a = 2 * kPi * unit(rng);
      // Offset in the plane spanned by the radial direction and the y axis.
      const double rho = radius + tube * std::cos(a);
      return {rho * std::cos(t), (s - 0.5) * height + tube * std::sin(a), rho * std::sin(t)};
    }
    case ShapeFamily::Cross: {
      const double len = v[0], w = 0.12 * v[1];
      return unit(rng) < 0.5 ? box_surface({len, w, w}, rng) : box_surface({w, len, w}, rng);
    }
  }
  return {0, 0, 0};
}

// Families are generated around the origin; only the scale changes here.
void normalize_unit_sphere(std::vector<Point3>& pts) {
  double r = 0;
  for (const Point3& p : pts) r = std::max(r, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
  if (r > 0) {
    for (Point3& p : pts)
      for (double& x : p) x /= r;
  }
}

}  // namespace

PointCloud sample_shape(const SyntheticShapeSpec& spec, std::size_t n_points, std::uint64_t seed) {
  if (n_points < 1) throw std::invalid_argument("sample_shape: need at least one point");
  if (spec.noise < 0 || spec.aspect_jitter < 0 || spec.aspect_jitter >= 1) {
    throw std::invalid_argument("sample_shape: noise must be >= 0 and aspect jitter in [0, 1)");
  }
  Rng rng(seed);
  double v[3];
  for (double& x : v) x = 1.0 + spec.aspect_jitter * (2.0 * unit(rng) - 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  PointCloud cloud;
  cloud.positions.resize(n_points);
  for (Point3& p : cloud.positions) {
    p = sample_point(spec.family, v, rng);
    for (double& x : p) x += spec.noise * std::clamp(gauss(rng), -3.0, 3.0);
  }
  normalize_unit_sphere(cloud.positions);
  return cloud;
}

DatasetManifest generate_synthetic_dataset(const std::vector<SyntheticShapeSpec>& specs,
                                           std::size_t n_train, std::size_t n_test,
                                           std::size_t points_per_sample, std::uint64_t seed,
                                           const std::string& out_dir) {
  if (points_per_sample < 64) throw std::invalid_argument("generate: at least 64 points per sample");
  if (specs.size() < 2) throw std::invalid_argument("generate: at least two classes");
  DatasetManifest m;
  m.root = out_dir;
  m.schema = FeatureSchema::Xyz;
  m.points_per_sample = points_per_sample;
  for (const auto& s : specs) m.class_names.push_back(family_name(s.family));
  fs::create_directories(fs::path(out_dir) / "train");
  fs::create_directories(fs::path(out_dir) / "test");
  for (int split = 0; split < 2; ++split) {
    const std::size_t count = split == 0 ? n_train : n_test;
    const std::string dir = split == 0 ? "train" : "test";
    auto& entries = split == 0 ? m.train : m.test;
    for (std::size_t i = 0; i < count; ++i) {
      for (std::size_t c = 0; c < specs.size(); ++c) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(split), static_cast<std::uint32_t>(c),
                          static_cast<std::uint32_t>(i)};
        std::uint32_t words[2];
        seq.generate(words, words + 2);
        const std::uint64_t sample_seed = (std::uint64_t{words[0]} << 32) | words[1];
        PointCloud cloud = sample_shape(specs[c], points_per_sample, sample_seed);
        char name[64];
        std::snprintf(name, sizeof name, "%s/%s_%04zu.txt", dir.c_str(), m.class_names[c].c_str(), i);
        save_pointcloud_text((fs::path(out_dir) / name).string(), cloud);
        entries.push_back({static_cast<int>(c), name});
      }
    }
  }
  save_manifest((fs::path(out_dir) / "manifest.txt").string(), m);
  return m;
}

PointCloud downsample(const PointCloud& cloud, std::size_t n, DownsampleMode mode, std::uint64_t seed) {
  if (n < 1 || n > cloud.size()) {
    throw std::invalid_argument("downsample: cannot take " + std::to_string(n) + " of " +
                                std::to_string(cloud.size()) + " points");
  }
  std::vector<std::size_t> keep;
  if (mode == DownsampleMode::Fps) {
    keep = farthest_point_sample(cloud.positions, n);
  } else {
    keep.resize(cloud.size());
    std::iota(keep.begin(), keep.end(), 0);
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, keep.size() - 1);
      std::swap(keep[i], keep[pick(rng)]);
    }
    keep.resize(n);
  }
  std::sort(keep.begin(), keep.end());
  PointCloud out;
  out.attribute_dim = cloud.attribute_dim;
  for (std::size_t i : keep) {
    out.positions.push_back(cloud.positions[i]);
    out.attributes.insert(out.attributes.end(), cloud.attributes.begin() + i * cloud.attribute_dim,
                          cloud.attributes.begin() + (i + 1) * cloud.attribute_dim);
    if (!cloud.labels.empty()) out.labels.push_back(cloud.labels[i]);
  }
  return out;
}

}  // namespace danet
