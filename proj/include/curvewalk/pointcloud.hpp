#ifndef CURVEWALK_POINTCLOUD_HPP_
#define CURVEWALK_POINTCLOUD_HPP_

#include <span>
#include <vector>

#include "curvewalk/tensor.hpp"

namespace curvewalk {

struct PointCloud {
  Tensor coords;                 // P x 3
  Tensor normals;                // P x 3 unit vectors, empty when absent
  std::vector<int> point_labels; // per-point part ids, empty when absent
  int label = -1;                // per-cloud class id, -1 when absent

  int points() const { return coords.rows(); }
  bool has_normals() const { return normals.size() > 0; }
};

// Per-point neighbor lists: the edge set of the walk graph. Rows hold the k
// nearest points by Euclidean distance, nearest first, ties to lower index;
// a row never contains its own id when exclude_self is set.
struct NeighborGraph {
  int k = 0;
  bool exclude_self = true;
  std::vector<int> indices;  // P * k

  int points() const {
    return k == 0 ? 0 : static_cast<int>(indices.size()) / k;
  }
  std::span<const int> row(int i) const {
    return {indices.data() + static_cast<size_t>(i) * k,
            static_cast<size_t>(k)};
  }
};

}  // namespace curvewalk

#endif  // CURVEWALK_POINTCLOUD_HPP_
