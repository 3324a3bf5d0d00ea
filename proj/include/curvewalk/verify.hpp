#ifndef CURVEWALK_VERIFY_HPP_
#define CURVEWALK_VERIFY_HPP_

#include <string>
#include <vector>

namespace curvewalk {

// One verification target: either a finite-difference gradient check or a
// straight-through identity check. err is the measured maximum error.
struct VerifyResult {
  std::string name;
  double err = 0.0;
  double tol = 0.0;
  bool pass = false;
};

// Runs every target whose name contains `only` (all when empty). Composite
// graphs walk in soft-selection mode; the hard/soft straight-through gap is
// covered by the dedicated identity targets.
std::vector<VerifyResult> run_gradcheck_suite(const std::string& only = "");

// Forward of the straight-through walk step vs. the argmax-gather reference,
// compared bitwise over random instances; returns 0 when identical.
double st_forward_identity_check(int instances);
// Max absolute difference between the straight-through gradient and the
// softmax-path gradient over random weighted sums.
double st_backward_softmax_check(int instances);

}  // namespace curvewalk

#endif  // CURVEWALK_VERIFY_HPP_
