#include "curvewalk/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace curvewalk {

PointCloud normalize_unit_sphere(PointCloud cloud) {
  const int P = cloud.points();
  CW_CHECK(P >= 1, "empty cloud");
  double c[3] = {0, 0, 0};
  for (int i = 0; i < P; ++i)
    for (int d = 0; d < 3; ++d) c[d] += cloud.coords.at(i, d);
  for (double& v : c) v /= P;
  double maxr = 0.0;
  for (int i = 0; i < P; ++i) {
    double r = 0.0;
    for (int d = 0; d < 3; ++d) {
      const double x = cloud.coords.at(i, d) - c[d];
      r += x * x;
    }
    maxr = std::max(maxr, std::sqrt(r));
  }
  const double scale = maxr > 0.0 ? 1.0 / maxr : 1.0;
  for (int i = 0; i < P; ++i)
    for (int d = 0; d < 3; ++d)
      cloud.coords.at(i, d) = (cloud.coords.at(i, d) - c[d]) * scale;
  return cloud;
}

AugmentParams sample_augment(Rng& rng) {
  AugmentParams p;
  for (double& s : p.scale) s = rng.uniform(0.66, 1.5);
  for (double& s : p.shift) s = rng.uniform(-0.2, 0.2);
  return p;
}

PointCloud apply_augment(PointCloud cloud, const AugmentParams& params) {
  const int P = cloud.points();
  for (int i = 0; i < P; ++i)
    for (int d = 0; d < 3; ++d)
      cloud.coords.at(i, d) =
          cloud.coords.at(i, d) * params.scale[d] + params.shift[d];
  if (cloud.has_normals()) {
    for (int i = 0; i < P; ++i) {
      double n[3], norm = 0.0;
      for (int d = 0; d < 3; ++d) {
        n[d] = cloud.normals.at(i, d) / params.scale[d];
        norm += n[d] * n[d];
      }
      norm = std::sqrt(norm);
      if (norm > 0.0)
        for (int d = 0; d < 3; ++d) cloud.normals.at(i, d) = n[d] / norm;
    }
  }
  return cloud;
}

std::vector<int> farthest_point_sample(const PointCloud& cloud, int m,
                                       int seed_index) {
  const int P = cloud.points();
  CW_CHECK(1 <= m && m <= P, "farthest_point_sample: need 1 <= m <= P");
  CW_CHECK(0 <= seed_index && seed_index < P, "bad seed index");
  std::vector<int> picked;
  picked.reserve(static_cast<size_t>(m));
  std::vector<double> min_d2(static_cast<size_t>(P),
                             std::numeric_limits<double>::infinity());
  int cur = seed_index;
  picked.push_back(cur);
  for (int step = 1; step < m; ++step) {
    int best = -1;
    double best_d = -1.0;
    for (int i = 0; i < P; ++i) {
      const double d = dist2(cloud.coords, i, cur);
      if (d < min_d2[static_cast<size_t>(i)]) min_d2[static_cast<size_t>(i)] = d;
      if (min_d2[static_cast<size_t>(i)] > best_d) {
        best_d = min_d2[static_cast<size_t>(i)];
        best = i;
      }
    }
    picked.push_back(best);
    cur = best;
  }
  return picked;
}

namespace {

struct Hit {
  double d2;
  int idx;
  bool operator<(const Hit& o) const {
    return d2 != o.d2 ? d2 < o.d2 : idx < o.idx;
  }
};

}  // namespace

NeighborGraph knn(const PointCloud& cloud, int k, bool exclude_self) {
  const int P = cloud.points();
  CW_CHECK(k >= 1 && k < P, "knn: need 1 <= k < P");
  NeighborGraph g;
  g.k = k;
  g.exclude_self = exclude_self;
  g.indices.resize(static_cast<size_t>(P) * k);
  std::vector<Hit> heap;  // max-heap of the current best k
  heap.reserve(static_cast<size_t>(k));
  for (int i = 0; i < P; ++i) {
    heap.clear();
    for (int j = 0; j < P; ++j) {
      if (exclude_self && j == i) continue;
      Hit h{dist2(cloud.coords, i, j), j};
      if (static_cast<int>(heap.size()) < k) {
        heap.push_back(h);
        std::push_heap(heap.begin(), heap.end());
      } else if (h < heap.front()) {
        std::pop_heap(heap.begin(), heap.end());
        heap.back() = h;
        std::push_heap(heap.begin(), heap.end());
      }
    }
    std::sort_heap(heap.begin(), heap.end());
    for (int j = 0; j < k; ++j)
      g.indices[static_cast<size_t>(i) * k + j] = heap[static_cast<size_t>(j)].idx;
  }
  return g;
}

NeighborGraph ball_query_knn(const PointCloud& cloud, double radius, int k_max,
                             bool exclude_self) {
  const int P = cloud.points();
  CW_CHECK(k_max >= 1, "ball_query_knn: k_max >= 1");
  CW_CHECK(radius >= 0.0, "negative radius");
  NeighborGraph g;
  g.k = k_max;
  g.exclude_self = exclude_self;
  g.indices.resize(static_cast<size_t>(P) * k_max);
  const double r2 = radius * radius;
  std::vector<Hit> hits;
  for (int i = 0; i < P; ++i) {
    hits.clear();
    Hit nearest{std::numeric_limits<double>::infinity(), -1};
    for (int j = 0; j < P; ++j) {
      if (exclude_self && j == i) continue;
      Hit h{dist2(cloud.coords, i, j), j};
      if (h < nearest) nearest = h;
      if (h.d2 <= r2) hits.push_back(h);
    }
    std::sort(hits.begin(), hits.end());
    if (static_cast<int>(hits.size()) > k_max) hits.resize(static_cast<size_t>(k_max));
    if (hits.empty()) hits.push_back(nearest);  // fall back to nearest point
    for (int j = 0; j < k_max; ++j)
      g.indices[static_cast<size_t>(i) * k_max + j] =
          hits[std::min<size_t>(static_cast<size_t>(j), hits.size() - 1)].idx;
    // pad by repeating the nearest hit
    for (int j = static_cast<int>(hits.size()); j < k_max; ++j)
      g.indices[static_cast<size_t>(i) * k_max + j] = hits[0].idx;
  }
  return g;
}

InterpWeights interpolate_weights(const Tensor& src_coords,
                                  const Tensor& dst_coords) {
  const int S = src_coords.rows(), D = dst_coords.rows();
  CW_CHECK(S >= 1, "no source points");
  InterpWeights out;
  out.nn = std::min(3, S);
  out.idx.resize(static_cast<size_t>(D) * out.nn);
  out.w.resize(static_cast<size_t>(D) * out.nn);
  std::vector<Hit> hits(static_cast<size_t>(S));
  for (int d = 0; d < D; ++d) {
    for (int s = 0; s < S; ++s) {
      double acc = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double diff = dst_coords.at(d, c) - src_coords.at(s, c);
        acc += diff * diff;
      }
      hits[static_cast<size_t>(s)] = {acc, s};
    }
    std::partial_sort(hits.begin(), hits.begin() + out.nn, hits.end());
    const size_t base = static_cast<size_t>(d) * out.nn;
    if (hits[0].d2 == 0.0) {
      // coincident point: copy that source exactly
      for (int j = 0; j < out.nn; ++j) {
        out.idx[base + j] = hits[0].idx;
        out.w[base + j] = j == 0 ? 1.0 : 0.0;
      }
      continue;
    }
    double wsum = 0.0;
    for (int j = 0; j < out.nn; ++j) {
      out.idx[base + j] = hits[static_cast<size_t>(j)].idx;
      out.w[base + j] = 1.0 / std::sqrt(hits[static_cast<size_t>(j)].d2);
      wsum += out.w[base + j];
    }
    for (int j = 0; j < out.nn; ++j) out.w[base + j] /= wsum;
  }
  return out;
}

Tensor interpolate_3nn(const Tensor& src_coords, const Tensor& src_feats,
                       const Tensor& dst_coords) {
  CW_CHECK(src_feats.cols() == src_coords.rows(),
           "feature/source count mismatch");
  const InterpWeights iw = interpolate_weights(src_coords, dst_coords);
  const int C = src_feats.rows(), D = dst_coords.rows();
  Tensor out({C, D});
  for (int d = 0; d < D; ++d)
    for (int j = 0; j < iw.nn; ++j) {
      const size_t p = static_cast<size_t>(d) * iw.nn + j;
      for (int i = 0; i < C; ++i)
        out.at(i, d) += iw.w[p] * src_feats.at(i, iw.idx[p]);
    }
  return out;
}

Tensor gather_rows(const Tensor& m, const std::vector<int>& idx) {
  CW_CHECK(m.rank() == 2, "gather_rows needs rank-2");
  Tensor out({static_cast<int>(idx.size()), m.cols()});
  for (size_t i = 0; i < idx.size(); ++i) {
    CW_CHECK(idx[i] >= 0 && idx[i] < m.rows(), "row index out of range");
    for (int c = 0; c < m.cols(); ++c)
      out.at(static_cast<int>(i), c) = m.at(idx[i], c);
  }
  return out;
}

}  // namespace curvewalk
