#ifndef CURVEWALK_WALK_HPP_
#define CURVEWALK_WALK_HPP_

#include <cmath>

#include "curvewalk/mlp.hpp"
#include "curvewalk/pointcloud.hpp"

namespace curvewalk {

// n guided walks of l states each, grouped in feature space over the point
// cloud's KNN graph. Feature columns are stored step-major: step i of curve c
// is column i*n + c; indices are stored curve-major.
struct CurveSet {
  int n = 0;
  int l = 0;
  std::vector<int> indices;      // n*l, [c*l + i]
  std::vector<int> start_indices;
  Var features;                  // C x (n*l), column i*n + c
  Var start_scores;              // 1 x P
  Var gated;                     // the score-gated feature matrix walks read

  int index_at(int c, int i) const {
    return indices[static_cast<size_t>(c) * l + i];
  }
  int feature_col(int c, int i) const { return i * n + c; }
};

struct WalkConfig {
  int n = 1;
  int l = 1;
  double theta_bar = M_PI / 2.0;  // crossover tolerance angle, radians
  bool momentum = true;
  bool suppression = true;
};

// Learnable walk policy: start-point selector, transition logit MLP on state
// descriptors [neighbor; curve descriptor], dynamic-momentum MLP for the
// curve descriptor.
struct WalkParams {
  MlpParams start_mlp;     // C -> ... -> 1
  MlpParams logit_mlp;     // 2C -> ... -> 1
  MlpParams momentum_mlp;  // 2C -> 2

  static WalkParams make(const std::string& name, int channels, int hidden,
                         Rng& rng);
  void register_params(ParamStore& store) const;
};

// Sigmoid-gated start selection: scores in (0,1) per point, features scaled
// by their score (gradient path into the selector), starts = top-n scores
// with ties to lower index.
struct StartSelection {
  Var gated;                // C x P
  Var scores;               // 1 x P
  std::vector<int> starts;  // n
};
StartSelection select_starts(Graph& g, Var feats, int n,
                             const MlpParams& start_mlp);

// Concatenation [neighbor; descriptor] fed to the logit MLP.
Var state_descriptor(Graph& g, Var neighbor_feats, Var descriptor);

// One logit per neighbor column; descriptors must already be stacked 2C x K.
Var policy_logits(Graph& g, Var descriptors, const MlpParams& logit_mlp);

// Per-candidate multiplier in [0,1] from the cosine between the curve's
// support vector (head - previous descriptor) and each candidate vector
// (neighbor - head): 1 at or above cos(theta_bar), clamp(cos+1, 0, 1) below.
// support: C x n (replicated internally), candidates: C x (n*k).
Var suppression_multiplier(Graph& g, Var support, Var candidates, int k,
                           double theta_bar);

// Dynamic momentum: two logits from [r_prev; s], softmax to (beta, 1-beta),
// r = beta*r_prev + (1-beta)*s. beta is scalar per column.
struct MomentumOut {
  Var beta;  // 1 x n
  Var r;     // C x n
};
MomentumOut momentum_update(Graph& g, Var r_prev, Var s,
                            const MlpParams& momentum_mlp);

// One transition for n curves in lockstep. Heads are point indices into the
// gated feature matrix; returns the selected next features (straight-through:
// numerically the argmax neighbor's feature) and next head indices.
struct WalkStep {
  Var next_feats;              // C x n
  std::vector<int> next_idx;   // n
};
WalkStep walk_transition(Graph& g, Var gated, const NeighborGraph& graph,
                         const std::vector<int>& heads, Var head_feats,
                         Var descriptor, Var prev_descriptor, bool first_step,
                         const MlpParams& logit_mlp, const WalkConfig& cfg);

// Single-curve convenience wrapper around walk_transition.
WalkStep walk_step(Graph& g, Var gated, const NeighborGraph& graph, int head,
                   Var head_feat, Var descriptor, const MlpParams& logit_mlp,
                   const WalkConfig& cfg);

// The full grouping operator: start selection, then l-1 straight-through
// transitions with dynamic momentum descriptors and crossover suppression.
CurveSet group_curves(Graph& g, Var feats, const NeighborGraph& graph,
                      const WalkParams& params, const WalkConfig& cfg);

// ---- instrumentation ---------------------------------------------------------

struct CurveTrace {
  std::vector<int> indices;
  std::vector<double> dist_to_start;  // l entries
  std::vector<double> dist_to_last;   // l entries
  std::vector<double> step_length;    // l-1 entries
  int revisits = 0;                   // l - distinct node count
  double mean_turn_deg = 0.0;
};

struct CurveStats {
  std::vector<CurveTrace> curves;
  std::vector<double> mean_dist_to_start;  // per step, over curves
  std::vector<double> mean_dist_to_last;
  double mean_revisits = 0.0;
  double mean_turn_deg = 0.0;
};

CurveStats curve_stats(const std::vector<int>& indices, int n, int l,
                       const Tensor& coords);
inline CurveStats curve_stats(const CurveSet& curves, const Tensor& coords) {
  return curve_stats(curves.indices, curves.n, curves.l, coords);
}

std::string curve_stats_json(const CurveStats& stats);

}  // namespace curvewalk

#endif  // CURVEWALK_WALK_HPP_
