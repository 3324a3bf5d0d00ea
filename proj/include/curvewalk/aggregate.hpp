#ifndef CURVEWALK_AGGREGATE_HPP_
#define CURVEWALK_AGGREGATE_HPP_

#include <optional>

#include "curvewalk/geometry.hpp"
#include "curvewalk/walk.hpp"

namespace curvewalk {

// Baseline local aggregation: per point, the shared MLP over the stacked
// differences to its k neighbors (f - f_j), pooled over the neighborhood.
Var local_aggregate(Graph& g, Var feats, const NeighborGraph& graph,
                    const MlpParams& mlp, PoolKind pool);

// Local point-feature aggregation: encodes [f_j - f_i, f_i] per neighbor,
// shared MLP, mean pool.
Var lpfa(Graph& g, Var feats, const NeighborGraph& graph,
         const MlpParams& mlp);

// Attentive pooling: per-channel softmax scores from a shared C->C score MLP,
// weighted sum along each contiguous group of `group` columns.
Var attentive_pool_groups(Graph& g, Var x, int group,
                          const MlpParams& score_mlp);
inline Var attentive_pool(Graph& g, Var x, const MlpParams& score_mlp) {
  return attentive_pool_groups(g, x, g.tape.val(x).cols(), score_mlp);
}

// Curve aggregation: inter-/intra-curve attentive pooling, bottleneck
// mappings against the point features, value lifts, and residual fusion.
struct CurveAggParams {
  MlpParams ap_intra, ap_inter;                    // C -> C score MLPs
  MlpParams bott_point, bott_intra, bott_inter;    // C -> C/rho
  MlpParams value_intra, value_inter;              // C/rho -> C
  MlpParams fuse;                                  // 2C -> C

  static CurveAggParams make(const std::string& name, int channels, int rho,
                             Rng& rng);
  void register_params(ParamStore& store) const;
};
Var curve_aggregate(Graph& g, Var feats, const CurveSet& curves,
                    const CurveAggParams& params);

// ---- CIC block ----------------------------------------------------------------

struct NeighborRule {
  enum Kind { kKnn, kBall } kind = kKnn;
  int k = 20;           // knn neighbors, or the ball cap
  double radius = 0.2;  // ball rule only
};

struct CicConfig {
  int in_channels = 0;
  int out_channels = 0;
  std::optional<int> downsample;  // FPS target, none = keep resolution
  NeighborRule neighbors;
  std::optional<WalkConfig> curves;
  int bottleneck_rho = 4;
  bool residual = true;
  bool lpfa_encoding = true;  // false = plain difference encoding (ablation)
  bool norm = true;           // off for gradient-check graphs
};

struct CicParams {
  CicConfig cfg;
  std::string name;
  MlpParams conv;               // 2C_in (or C_in) -> C_out
  std::optional<Tensor> shortcut_w;  // bias-free 1x1 when channels change
  std::optional<WalkParams> walk;
  std::optional<CurveAggParams> ca;

  static CicParams make(const std::string& name, const CicConfig& cfg,
                        Rng& rng);
  void register_params(ParamStore& store) const;
};

struct CicOutput {
  Tensor coords;                // resolution after optional FPS
  Var feats;                    // C_out x P'
  Var conv_feats;               // post-conv features the walk reads
  Var ca_feats;                 // curve-aggregation output, when curves ran
  std::vector<int> sample_idx;  // FPS picks, empty when no downsample
  std::optional<CurveSet> curves;
};

CicOutput cic_block(Graph& g, const Tensor& coords, Var feats,
                    const CicParams& params);

// Channel-diversity diagnostic: per-channel variance across points plus the
// per-point channel mean.
struct ChannelVariance {
  std::vector<double> per_channel_variance;  // C
  std::vector<double> per_point_mean;        // P
};
ChannelVariance channel_variance_map(const Tensor& feats);
std::string channel_variance_csv(const Tensor& coords, const Tensor& feats);

}  // namespace curvewalk

#endif  // CURVEWALK_AGGREGATE_HPP_
