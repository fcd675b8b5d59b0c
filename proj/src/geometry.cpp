#include "danet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "danet/ops.hpp"

namespace danet {

namespace {

constexpr std::size_t kLeafSize = 8;

inline double dist2(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

// Canonical "a precedes b" among candidates at squared distances da, db.
inline bool canonical_before(double da, const Point3& pa, std::size_t ia, double db,
                             const Point3& pb, std::size_t ib) {
  if (da != db) return da < db;
  if (pa != pb) return lex_less(pa, pb);
  return ia < ib;
}

void require_nonempty(std::span<const Point3> points, const char* op) {
  if (points.empty()) throw std::invalid_argument(std::string(op) + ": empty point cloud");
}

}  // namespace

bool lex_less(const Point3& a, const Point3& b) {
  if (a[0] != b[0]) return a[0] < b[0];
  if (a[1] != b[1]) return a[1] < b[1];
  return a[2] < b[2];
}

void PointCloud::validate() const {
  if (positions.empty()) throw std::invalid_argument("point cloud: no points");
  for (const Point3& p : positions) {
    for (double v : p) {
      if (!std::isfinite(v)) throw std::invalid_argument("point cloud: non-finite position");
    }
  }
  if (attributes.size() != positions.size() * attribute_dim) {
    throw std::invalid_argument("point cloud: attribute rows do not match point count");
  }
  if (!labels.empty() && labels.size() != positions.size()) {
    throw std::invalid_argument("point cloud: label count does not match point count");
  }
}

std::vector<std::size_t> farthest_point_sample(std::span<const Point3> points,
                                               std::size_t n_samples,
                                               std::vector<double>* selection_distances) {
  const std::size_t n = points.size();
  if (n_samples < 1 || n_samples > n) {
    throw std::invalid_argument("farthest_point_sample: requested " + std::to_string(n_samples) +
                                " samples from " + std::to_string(n) + " points");
  }
  std::size_t start = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (lex_less(points[i], points[start])) start = i;
  }
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::vector<char> taken(n, 0);
  std::vector<std::size_t> picked;
  picked.reserve(n_samples);
  if (selection_distances) {
    selection_distances->assign(1, std::numeric_limits<double>::infinity());
  }
  std::size_t current = start;
  for (std::size_t s = 0;; ++s) {
    picked.push_back(current);
    taken[current] = 1;
    if (s + 1 == n_samples) break;
    const Point3 c = points[current];
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < n; ++i) {
      const double d = dist2(points[i], c);
      if (d < min_d2[i]) min_d2[i] = d;
    }
    // Farthest remaining point; ties go to the lexicographically smallest.
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      if (best == n || min_d2[i] > min_d2[best] ||
          (min_d2[i] == min_d2[best] && canonical_before(0, points[i], i, 0, points[best], best))) {
        best = i;
      }
    }
    if (selection_distances) selection_distances->push_back(std::sqrt(min_d2[best]));
    current = best;
  }
  return picked;
}

KdTree::KdTree(std::span<const Point3> points) : points_(points.begin(), points.end()) {
  order_.resize(points_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  nodes_.reserve(2 * (points_.size() / kLeafSize + 1));
  if (!points_.empty()) build(0, points_.size());
}

std::size_t KdTree::build(std::size_t begin, std::size_t end) {
  const std::size_t id = nodes_.size();
  nodes_.push_back(Node{begin, end});
  if (end - begin <= kLeafSize) return id;

  Point3 lo = points_[order_[begin]], hi = lo;
  for (std::size_t i = begin; i < end; ++i) {
    const Point3& p = points_[order_[i]];
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  }
  int axis = 0;
  for (int a = 1; a < 3; ++a) {
    if (hi[a] - lo[a] > hi[axis] - lo[axis]) axis = a;
  }
  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                   order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end),
                   [&](std::size_t a, std::size_t b) { return points_[a][axis] < points_[b][axis]; });
  const double split = points_[order_[mid]][axis];
  const std::size_t left = build(begin, mid);
  const std::size_t right = build(mid, end);
  Node& node = nodes_[id];
  node.axis = axis;
  node.split = split;
  node.left = left;
  node.right = right;
  return id;
}

bool KdTree::closer(const Candidate& a, const Candidate& b) const {
  return canonical_before(a.d2, points_[a.index], a.index, b.d2, points_[b.index], b.index);
}

void KdTree::search(std::size_t node_id, const Point3& q, std::size_t k,
                    std::vector<Candidate>& heap) const {
  const Node& node = nodes_[node_id];
  const auto cmp = [this](const Candidate& a, const Candidate& b) { return closer(a, b); };
  if (node.axis < 0) {
    for (std::size_t i = node.begin; i < node.end; ++i) {
      const Candidate c{dist2(points_[order_[i]], q), order_[i]};
      if (heap.size() < k) {
        heap.push_back(c);
        std::push_heap(heap.begin(), heap.end(), cmp);
      } else if (closer(c, heap.front())) {
        std::pop_heap(heap.begin(), heap.end(), cmp);
        heap.back() = c;
        std::push_heap(heap.begin(), heap.end(), cmp);
      }
    }
    return;
  }
  const double diff = q[node.axis] - node.split;
  const std::size_t first = diff < 0 ? node.left : node.right;
  const std::size_t second = diff < 0 ? node.right : node.left;
  search(first, q, k, heap);
  // Equal bounds are still explored: a tie may win on coordinates.
  if (heap.size() < k || diff * diff <= heap.front().d2) search(second, q, k, heap);
}

void KdTree::nearest(const Point3& query, std::size_t k, std::vector<std::size_t>& index,
                     std::vector<double>& dist2_out) const {
  index.clear();
  dist2_out.clear();
  if (points_.empty() || k == 0) return;
  k = std::min(k, points_.size());
  std::vector<Candidate> heap;
  heap.reserve(k);
  search(0, query, k, heap);
  std::sort(heap.begin(), heap.end(), [this](const Candidate& a, const Candidate& b) { return closer(a, b); });
  for (const Candidate& c : heap) {
    index.push_back(c.index);
    dist2_out.push_back(c.d2);
  }
}

namespace {

void fill_row(NeighborhoodIndex& out, std::size_t row, std::size_t k,
              const std::vector<std::size_t>& idx, const std::vector<double>& d2) {
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t src = j < idx.size() ? j : 0;  // pad with the nearest
    out.neighbors[row * k + j] = idx[src];
    out.distances[row * k + j] = std::sqrt(d2[src]);
  }
}

NeighborhoodIndex knn_impl(const KdTree& tree, std::span<const Point3> queries, std::size_t k) {
  NeighborhoodIndex out;
  out.k = k;
  out.neighbors.resize(queries.size() * k);
  out.distances.resize(queries.size() * k);
#pragma omp parallel
  {
    std::vector<std::size_t> idx;
    std::vector<double> d2;
#pragma omp for schedule(static)
    for (std::size_t r = 0; r < queries.size(); ++r) {
      tree.nearest(queries[r], k, idx, d2);
      fill_row(out, r, k, idx, d2);
    }
  }
  return out;
}

}  // namespace

NeighborhoodIndex knn_search(std::span<const Point3> points,
                             std::span<const std::size_t> query_indices, std::size_t k) {
  require_nonempty(points, "knn_search");
  if (k < 1) throw std::invalid_argument("knn_search: k must be at least 1");
  std::vector<Point3> queries;
  queries.reserve(query_indices.size());
  for (std::size_t q : query_indices) {
    if (q >= points.size()) {
      throw std::out_of_range("knn_search: query index " + std::to_string(q) + " out of range");
    }
    queries.push_back(points[q]);
  }
  const KdTree tree(points);
  NeighborhoodIndex out = knn_impl(tree, queries, k);
  out.centers.assign(query_indices.begin(), query_indices.end());
  return out;
}

NeighborhoodIndex knn_search(const PointCloud& cloud, std::span<const std::size_t> query_indices,
                             std::size_t k) {
  return knn_search(std::span<const Point3>(cloud.positions), query_indices, k);
}

NeighborhoodIndex knn_search_points(std::span<const Point3> points, std::span<const Point3> queries,
                                    std::size_t k) {
  require_nonempty(points, "knn_search_points");
  if (k < 1) throw std::invalid_argument("knn_search_points: k must be at least 1");
  const KdTree tree(points);
  return knn_impl(tree, queries, k);
}

NeighborhoodIndex knn_search_brute(std::span<const Point3> points,
                                   std::span<const std::size_t> query_indices, std::size_t k) {
  require_nonempty(points, "knn_search_brute");
  if (k < 1) throw std::invalid_argument("knn_search_brute: k must be at least 1");
  NeighborhoodIndex out;
  out.k = k;
  out.centers.assign(query_indices.begin(), query_indices.end());
  out.neighbors.resize(query_indices.size() * k);
  out.distances.resize(query_indices.size() * k);
  std::vector<std::size_t> order(points.size());
  std::vector<double> d2(points.size());
  for (std::size_t r = 0; r < query_indices.size(); ++r) {
    if (query_indices[r] >= points.size()) throw std::out_of_range("knn_search_brute: query index out of range");
    const Point3& q = points[query_indices[r]];
    for (std::size_t i = 0; i < points.size(); ++i) {
      order[i] = i;
      d2[i] = dist2(points[i], q);
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return canonical_before(d2[a], points[a], a, d2[b], points[b], b);
    });
    std::vector<std::size_t> idx(order.begin(),
                                 order.begin() + static_cast<std::ptrdiff_t>(std::min(k, order.size())));
    std::vector<double> dd;
    for (std::size_t i : idx) dd.push_back(d2[i]);
    fill_row(out, r, k, idx, dd);
  }
  return out;
}

double gaussian_normalizer() { return std::pow(2.0 * std::numbers::pi, -1.5); }

DensityField kde_density(std::span<const Point3> points, const NeighborhoodIndex& nbr,
                         double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw std::invalid_argument("kde_density: bandwidth must be positive, got " + std::to_string(sigma));
  }
  DensityField field;
  field.bandwidth = sigma;
  field.values.resize(nbr.rows());
  const double norm = gaussian_normalizer();
  const double prefactor = 1.0 / (static_cast<double>(nbr.k) * sigma);
  const double inv_s2 = 1.0 / (sigma * sigma);
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < nbr.rows(); ++r) {
    const Point3& pi = points[nbr.centers[r]];
    double s = 0.0;
    for (std::size_t j = 0; j < nbr.k; ++j) {
      s += norm * std::exp(-0.5 * dist2(points[nbr.neighbor(r, j)], pi) * inv_s2);
    }
    field.values[r] = prefactor * s;
  }
  return field;
}

DensityField kde_density(const PointCloud& cloud, const NeighborhoodIndex& nbr, double sigma) {
  return kde_density(std::span<const Point3>(cloud.positions), nbr, sigma);
}

double mean_nearest_neighbor_distance(std::span<const Point3> points) {
  require_nonempty(points, "mean_nearest_neighbor_distance");
  if (points.size() == 1) return 1.0;
  std::vector<std::size_t> all(points.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const NeighborhoodIndex nbr = knn_search(points, all, 2);
  double total = 0.0;
  for (std::size_t r = 0; r < nbr.rows(); ++r) {
    // The query itself (distance 0) comes first unless a duplicate outranks it.
    total += nbr.distances[r * 2 + 1];
  }
  const double mean = total / static_cast<double>(points.size());
  return mean > 0.0 ? mean : 1.0;
}

std::size_t centroid_nearest_index(std::span<const Point3> points) {
  require_nonempty(points, "centroid_nearest_index");
  std::vector<Point3> sorted(points.begin(), points.end());
  std::sort(sorted.begin(), sorted.end(), lex_less);
  Point3 c{0.0, 0.0, 0.0};
  for (const Point3& p : sorted) {
    for (int a = 0; a < 3; ++a) c[a] += p[a];
  }
  for (double& v : c) v /= static_cast<double>(points.size());
  std::size_t best = 0;
  double best_d2 = dist2(points[0], c);
  for (std::size_t i = 1; i < points.size(); ++i) {
    const double d = dist2(points[i], c);
    if (canonical_before(d, points[i], i, best_d2, points[best], best)) {
      best = i;
      best_d2 = d;
    }
  }
  return best;
}

Tensor group_features(const Tensor& features, const NeighborhoodIndex& nbr) {
  if (features.rank() != 2) {
    throw ShapeError("group_features: expected [N, C] features, got " + shape_str(features.shape()));
  }
  const std::size_t c = features.dim(1);
  return reshape(gather_rows(features, nbr.neighbors), {nbr.rows(), nbr.k, c});
}

InterpolationStencil interpolation_stencil(std::span<const Point3> coarse_points,
                                           std::span<const Point3> fine_points) {
  constexpr std::size_t kTaps = 3;
  const NeighborhoodIndex nbr = knn_search_points(coarse_points, fine_points, kTaps);
  InterpolationStencil st;
  st.index = nbr.neighbors;
  st.weight.resize(st.index.size());
  for (std::size_t r = 0; r < fine_points.size(); ++r) {
    double total = 0.0;
    for (std::size_t t = 0; t < kTaps; ++t) {
      const double w = 1.0 / (nbr.distances[r * kTaps + t] + 1e-8);
      st.weight[r * kTaps + t] = w;
      total += w;
    }
    for (std::size_t t = 0; t < kTaps; ++t) st.weight[r * kTaps + t] /= total;
  }
  return st;
}

Tensor interpolate_features(std::span<const Point3> coarse_points, const Tensor& coarse_features,
                            std::span<const Point3> fine_points) {
  if (coarse_features.rank() != 2 || coarse_features.dim(0) != coarse_points.size()) {
    throw ShapeError("interpolate_features: features " + shape_str(coarse_features.shape()) +
                     " do not match " + std::to_string(coarse_points.size()) + " coarse points");
  }
  const InterpolationStencil st = interpolation_stencil(coarse_points, fine_points);
  return weighted_gather_rows(coarse_features, st.index, st.weight, 3);
}

}  // namespace danet
