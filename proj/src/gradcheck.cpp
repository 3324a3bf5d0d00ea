#include "curvewalk/gradcheck.hpp"

#include <cmath>

namespace curvewalk {

namespace {

double eval_loss(const GradCheckTarget& target) {
  Graph g;
  g.soft_selection = true;
  Var loss = target.build(g);
  CW_CHECK(g.tape.val(loss).size() == 1, "gradcheck target must be scalar");
  return g.tape.val(loss)[0];
}

}  // namespace

GradCheckReport grad_check(const GradCheckTarget& target, double eps,
                           int max_coords_per_leaf, uint64_t seed) {
  CW_CHECK(!target.leaves.empty(), "gradcheck needs at least one leaf");

  // Analytic pass.
  Graph g;
  g.soft_selection = true;
  Var loss = target.build(g);
  g.tape.backward(loss);
  std::vector<Tensor> analytic;
  analytic.reserve(target.leaves.size());
  for (Tensor* leaf : target.leaves) analytic.push_back(g.grad_of(*leaf));

  Rng rng(seed);
  GradCheckReport report;
  for (size_t li = 0; li < target.leaves.size(); ++li) {
    Tensor* leaf = target.leaves[li];
    const int64_t n = leaf->size();
    std::vector<int64_t> coords;
    if (n <= max_coords_per_leaf) {
      for (int64_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (int k = 0; k < max_coords_per_leaf; ++k)
        coords.push_back(rng.uniform_int(n));
    }
    for (int64_t c : coords) {
      const double saved = (*leaf)[c];
      (*leaf)[c] = saved + eps;
      const double up = eval_loss(target);
      (*leaf)[c] = saved - eps;
      const double down = eval_loss(target);
      (*leaf)[c] = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double an = analytic[li][c];
      const double rel =
          std::fabs(an - fd) / std::max({1.0, std::fabs(an), std::fabs(fd)});
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_leaf = target.name + "#" + std::to_string(li);
        report.worst_coord = c;
      }
    }
  }
  return report;
}

}  // namespace curvewalk
