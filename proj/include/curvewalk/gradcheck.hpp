#ifndef CURVEWALK_GRADCHECK_HPP_
#define CURVEWALK_GRADCHECK_HPP_

#include <functional>
#include <string>
#include <vector>

#include "curvewalk/mlp.hpp"

namespace curvewalk {

// A checkable scalar function of a set of leaf tensors. `build` reads the
// current leaf values via Graph::param / captured pointers and returns the
// scalar loss var. Straight-through selections run in soft mode so the
// forward is the function the tape differentiates.
struct GradCheckTarget {
  std::string name;
  std::vector<Tensor*> leaves;
  std::function<Var(Graph&)> build;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_leaf;
  int64_t worst_coord = -1;
};

// Central differences (f(x+eps) - f(x-eps)) / 2eps against the tape gradient;
// relative error |a-b| / max(1, |a|, |b|), maximized over sampled coordinates
// (up to max_coords_per_leaf per leaf, all when the leaf is small enough).
GradCheckReport grad_check(const GradCheckTarget& target, double eps = 1e-5,
                           int max_coords_per_leaf = 24, uint64_t seed = 17);

}  // namespace curvewalk

#endif  // CURVEWALK_GRADCHECK_HPP_
