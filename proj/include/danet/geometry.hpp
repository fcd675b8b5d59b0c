#pragma once

// Sampling, neighbor search, density estimation, grouping and interpolation.
//
// All ties are resolved by a total order on points that does not depend on
// input order: distance, then (x, y, z) lexicographically, then index. Two
// clouds that differ only by a permutation therefore select the same points
// in the same order.

#include <array>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "danet/tensor.hpp"

namespace danet {

using Point3 = std::array<double, 3>;

struct PointCloud {
  std::vector<Point3> positions;
  std::size_t attribute_dim = 0;
  std::vector<double> attributes;  // size() x attribute_dim, row-major
  std::vector<int> labels;         // empty, or one per point

  std::size_t size() const { return positions.size(); }
  // Throws std::invalid_argument when an invariant is broken.
  void validate() const;
};

/// K neighbors for each query point, nearest first.
struct NeighborhoodIndex {
  std::vector<std::size_t> centers;
  std::size_t k = 0;
  std::vector<std::size_t> neighbors;  // centers.size() x k
  std::vector<double> distances;       // Euclidean, nondecreasing per row up to any padding

  std::size_t rows() const { return centers.size(); }
  std::size_t neighbor(std::size_t row, std::size_t j) const { return neighbors[row * k + j]; }
};

struct DensityField {
  std::vector<double> values;  // one per row of the neighborhood
  double bandwidth = 0.0;
};

// Strict lexicographic (x, y, z) comparison.
bool lex_less(const Point3& a, const Point3& b);

/// Greedy farthest point sampling from the lexicographically smallest point.
///
/// When `selection_distances` is given it receives, per pick, the distance
/// from the picked point to the previously selected set (+inf for the first).
std::vector<std::size_t> farthest_point_sample(std::span<const Point3> points,
                                               std::size_t n_samples,
                                               std::vector<double>* selection_distances = nullptr);

/// Immutable kd-tree over a point set; queries are thread-safe.
class KdTree {
 public:
  explicit KdTree(std::span<const Point3> points);

  // k nearest points to `query` in canonical order. Fewer than k results only
  // when the tree holds fewer than k points.
  void nearest(const Point3& query, std::size_t k, std::vector<std::size_t>& index,
               std::vector<double>& dist2) const;

  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    std::size_t begin, end;  // range in order_
    std::size_t left = 0, right = 0;
    int axis = -1;  // -1 for leaves
    double split = 0.0;
  };
  struct Candidate {
    double d2;
    std::size_t index;
  };
  bool closer(const Candidate& a, const Candidate& b) const;
  std::size_t build(std::size_t begin, std::size_t end);
  void search(std::size_t node, const Point3& q, std::size_t k,
              std::vector<Candidate>& heap) const;

  std::vector<Point3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

/// k nearest neighbors (the query itself included) for each query index.
/// Rows of a cloud with fewer than k points are padded with the nearest.
NeighborhoodIndex knn_search(std::span<const Point3> points,
                             std::span<const std::size_t> query_indices,
                             std::size_t k);
NeighborhoodIndex knn_search(const PointCloud& cloud,
                             std::span<const std::size_t> query_indices,
                             std::size_t k);
// Exhaustive O(N^2 log N) reference with the same ordering rules.
NeighborhoodIndex knn_search_brute(std::span<const Point3> points,
                                   std::span<const std::size_t> query_indices,
                                   std::size_t k);
// Neighbors in `points` of arbitrary query locations; `centers` is left empty.
NeighborhoodIndex knn_search_points(std::span<const Point3> points,
                                    std::span<const Point3> queries, std::size_t k);

// Gaussian kernel normalizer (2*pi)^(-3/2).
double gaussian_normalizer();

/// Kernel density per neighborhood row:
/// d_i = 1/(K*sigma) * sum_j G((p_j - p_i)/sigma), G(u) = (2pi)^(-3/2) exp(-|u|^2/2).
DensityField kde_density(std::span<const Point3> points, const NeighborhoodIndex& nbr,
                         double sigma);
DensityField kde_density(const PointCloud& cloud, const NeighborhoodIndex& nbr, double sigma);

// Mean distance from each point to its nearest other point; 1.0 when every
// point coincides.
double mean_nearest_neighbor_distance(std::span<const Point3> points);

// Index of the point nearest the centroid (canonical ties, order-independent sum).
std::size_t centroid_nearest_index(std::span<const Point3> points);

/// features [N, C] -> [rows, K, C] with out[i, j] = features[neighbor(i, j)].
Tensor group_features(const Tensor& features, const NeighborhoodIndex& nbr);

/// Inverse-distance weighted average of the 3 nearest coarse features for
/// every fine point: w_j proportional to 1 / (d_j + 1e-8).
Tensor interpolate_features(std::span<const Point3> coarse_points, const Tensor& coarse_features,
                            std::span<const Point3> fine_points);

// Interpolation stencil shared by the network decoder.
struct InterpolationStencil {
  std::vector<std::size_t> index;  // fine x 3
  std::vector<double> weight;      // fine x 3, rows sum to 1
};
InterpolationStencil interpolation_stencil(std::span<const Point3> coarse_points,
                                           std::span<const Point3> fine_points);

}  // namespace danet
