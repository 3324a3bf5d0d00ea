#ifndef CURVEWALK_GEOMETRY_HPP_
#define CURVEWALK_GEOMETRY_HPP_

#include "curvewalk/pointcloud.hpp"
#include "curvewalk/rng.hpp"

namespace curvewalk {

// Centers the cloud at the origin and scales by 1/max||p - centroid||.
// Degenerate clouds (all points identical) end at the origin with radius 0.
// Normals are unaffected (translation + uniform scale).
PointCloud normalize_unit_sphere(PointCloud cloud);

// Train-time augmentation: anisotropic per-axis scale in [0.66, 1.5], then
// per-axis translation in [-0.2, 0.2].
struct AugmentParams {
  double scale[3] = {1.0, 1.0, 1.0};
  double shift[3] = {0.0, 0.0, 0.0};
};
AugmentParams sample_augment(Rng& rng);
// Applies scale-then-shift; normals (when present) get the inverse-transpose
// scale and are renormalized.
PointCloud apply_augment(PointCloud cloud, const AugmentParams& params);
inline PointCloud augment(PointCloud cloud, Rng& rng) {
  return apply_augment(std::move(cloud), sample_augment(rng));
}

// Greedy max-min subset selection. First pick is seed_index; every next pick
// maximizes the distance to the chosen set, ties to lower index.
std::vector<int> farthest_point_sample(const PointCloud& cloud, int m,
                                       int seed_index = 0);

// Exact k nearest neighbors per point (ties to lower index).
NeighborGraph knn(const PointCloud& cloud, int k, bool exclude_self = true);

// Neighbors within `radius`, nearest first, capped at k_max. Rows with fewer
// hits repeat their nearest entry; rows with none fall back to the single
// nearest point.
NeighborGraph ball_query_knn(const PointCloud& cloud, double radius, int k_max,
                             bool exclude_self = true);

// Inverse-distance weights over the (up to) 3 nearest source points per
// destination; an exact coordinate match copies that source alone.
struct InterpWeights {
  int nn = 0;                  // sources per destination
  std::vector<int> idx;        // D * nn
  std::vector<double> w;       // D * nn, each group sums to 1
};
InterpWeights interpolate_weights(const Tensor& src_coords,
                                  const Tensor& dst_coords);
// Pure-value form: src_feats is C x S, result is C x D.
Tensor interpolate_3nn(const Tensor& src_coords, const Tensor& src_feats,
                       const Tensor& dst_coords);

Tensor gather_rows(const Tensor& m, const std::vector<int>& idx);

inline double dist2(const Tensor& coords, int a, int b) {
  const double dx = coords.at(a, 0) - coords.at(b, 0);
  const double dy = coords.at(a, 1) - coords.at(b, 1);
  const double dz = coords.at(a, 2) - coords.at(b, 2);
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace curvewalk

#endif  // CURVEWALK_GEOMETRY_HPP_
