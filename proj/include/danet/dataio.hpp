#pragma once

// Point files, dataset manifests, the synthetic shape generator and
// downsampling.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "danet/geometry.hpp"

namespace danet {

/// Text point file: one point per line with 3 (xyz), 6 (xyz + normal) or
/// 9 reals, separated by whitespace or commas. Everything after xyz becomes
/// attributes. Blank lines and '#' comments are skipped.
PointCloud parse_pointcloud_text(std::istream& in, const std::string& name = "<stream>");
PointCloud load_pointcloud_text(const std::string& path);
void write_pointcloud_text(std::ostream& out, const PointCloud& cloud);
void save_pointcloud_text(const std::string& path, const PointCloud& cloud);

enum class FeatureSchema { Xyz, XyzNormal, Full9 };

std::string schema_name(FeatureSchema schema);
std::size_t schema_attributes(FeatureSchema schema);  // 0, 3 or 6

struct ManifestEntry {
  int label = 0;
  std::string path;  // relative to the manifest root
};

/// Header lines `#classes=a,b,c`, `#schema=xyz`, `#points=256`, then
/// `@train` / `@test` sections of `label<TAB>relative/path.txt` lines.
struct DatasetManifest {
  std::string root;
  std::vector<std::string> class_names;
  FeatureSchema schema = FeatureSchema::Xyz;
  std::size_t points_per_sample = 0;
  std::vector<ManifestEntry> train;
  std::vector<ManifestEntry> test;

  std::size_t num_classes() const { return class_names.size(); }
  // Labels dense in [0, classes); with check_files every listed file exists.
  void validate(bool check_files = true) const;
};

DatasetManifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const DatasetManifest& manifest);

struct Sample {
  PointCloud cloud;
  int label = 0;
};
using Dataset = std::vector<Sample>;

enum class Split { Train, Test };

/// Loads every sample of a split and checks it against the schema.
Dataset load_split(const DatasetManifest& manifest, Split split);

enum class ShapeFamily { Sphere, Cube, Cylinder, Cone, Torus, Plane, Helix, Cross };

std::string family_name(ShapeFamily family);
ShapeFamily parse_family(const std::string& name);
std::vector<ShapeFamily> all_families();

struct SyntheticShapeSpec {
  ShapeFamily family = ShapeFamily::Sphere;
  double aspect_jitter = 0.15;  // relative variation of the shape proportions
  double noise = 0.005;         // Gaussian surface noise, clipped at 3 stddev
};

/// Surface-sampled shape in its canonical orientation (symmetry axis along
/// y), centered on the origin by construction and scaled so the farthest
/// point lies on the unit sphere.
PointCloud sample_shape(const SyntheticShapeSpec& spec, std::size_t n_points, std::uint64_t seed);

/// Writes `n_train` and `n_test` samples per family under `out_dir`
/// (train/ and test/ subdirectories plus manifest.txt) and returns the
/// manifest. Output is identical for identical arguments.
DatasetManifest generate_synthetic_dataset(const std::vector<SyntheticShapeSpec>& specs,
                                           std::size_t n_train, std::size_t n_test,
                                           std::size_t points_per_sample, std::uint64_t seed,
                                           const std::string& out_dir);

enum class DownsampleMode { Random, Fps };

/// Subset of n points, kept in their original order.
PointCloud downsample(const PointCloud& cloud, std::size_t n, DownsampleMode mode, std::uint64_t seed);

}  // namespace danet
