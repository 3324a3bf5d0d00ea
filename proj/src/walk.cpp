#include "curvewalk/walk.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "json.hpp"

#include "curvewalk/geometry.hpp"

namespace curvewalk {

WalkParams WalkParams::make(const std::string& name, int channels, int hidden,
                            Rng& rng) {
  WalkParams p;
  p.start_mlp = MlpParams::make(name + ".start", {channels, hidden, 1},
                                Act::kLeakyRelu, Norm::kNone, rng);
  p.logit_mlp = MlpParams::make(name + ".logit", {2 * channels, hidden, 1},
                                Act::kLeakyRelu, Norm::kNone, rng);
  p.momentum_mlp = MlpParams::make(name + ".momentum", {2 * channels, 2},
                                   Act::kNone, Norm::kNone, rng);
  return p;
}

void WalkParams::register_params(ParamStore& store) const {
  start_mlp.register_params(store);
  logit_mlp.register_params(store);
  momentum_mlp.register_params(store);
}

StartSelection select_starts(Graph& g, Var feats, int n,
                             const MlpParams& start_mlp) {
  const int P = g.tape.val(feats).cols();
  CW_CHECK(1 <= n && n <= P, "select_starts: need 1 <= n <= P");
  StartSelection out;
  out.scores = sigmoid(shared_mlp(g, feats, start_mlp));  // 1 x P
  out.gated = mul_rowvec(feats, out.scores);
  const Tensor& s = g.tape.val(out.scores);
  std::vector<int> order(static_cast<size_t>(P));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return s[a] != s[b] ? s[a] > s[b] : a < b;
  });
  out.starts.assign(order.begin(), order.begin() + n);
  return out;
}

Var state_descriptor(Graph& g, Var neighbor_feats, Var descriptor) {
  (void)g;
  return concat_rows(neighbor_feats, descriptor);
}

Var policy_logits(Graph& g, Var descriptors, const MlpParams& logit_mlp) {
  CW_CHECK(g.tape.val(descriptors).cols() >= 1, "empty neighborhood");
  Var alpha = shared_mlp(g, descriptors, logit_mlp);
  CW_CHECK(g.tape.val(alpha).rows() == 1, "logit mlp must emit one scalar");
  return alpha;
}

namespace {

// column replication map: [0,..,0, 1,..,1, ...] with k copies each
std::vector<int> repeat_map(int n, int k) {
  std::vector<int> idx(static_cast<size_t>(n) * k);
  for (int c = 0; c < n; ++c)
    for (int j = 0; j < k; ++j) idx[static_cast<size_t>(c) * k + j] = c;
  return idx;
}

}  // namespace

Var suppression_multiplier(Graph& g, Var support, Var candidates, int k,
                           double theta_bar) {
  CW_CHECK(theta_bar > 0.0 && theta_bar <= M_PI, "theta_bar out of (0, pi]");
  const int n = g.tape.val(support).cols();
  CW_CHECK(g.tape.val(candidates).cols() == n * k,
           "candidates must be C x (n*k)");
  Var support_rep = n * k == n && k == 1
                        ? support
                        : gather_cols(support, repeat_map(n, k));
  Var cosv = colwise_cosine(support_rep, candidates);
  return suppression_from_cos(cosv, std::cos(theta_bar));
}

MomentumOut momentum_update(Graph& g, Var r_prev, Var s,
                            const MlpParams& momentum_mlp) {
  CW_CHECK(g.tape.val(r_prev).same_shape(g.tape.val(s)),
           "momentum_update shape mismatch");
  Var h = concat_rows(r_prev, s);                    // 2C x n
  Var logits = shared_mlp(g, h, momentum_mlp);       // 2 x n
  CW_CHECK(g.tape.val(logits).rows() == 2, "momentum mlp must emit 2 logits");
  Var gates = softmax_cols(logits);
  Var beta = slice_rows(gates, 0, 1);                // 1 x n
  Var one_minus = slice_rows(gates, 1, 2);
  MomentumOut out;
  out.beta = beta;
  out.r = add(mul_rowvec(r_prev, beta), mul_rowvec(s, one_minus));
  return out;
}

WalkStep walk_transition(Graph& g, Var gated, const NeighborGraph& graph,
                         const std::vector<int>& heads, Var head_feats,
                         Var descriptor, Var prev_descriptor, bool first_step,
                         const MlpParams& logit_mlp, const WalkConfig& cfg) {
  const int n = static_cast<int>(heads.size());
  const int k = graph.k;
  std::vector<int> nbr(static_cast<size_t>(n) * k);
  for (int c = 0; c < n; ++c) {
    auto row = graph.row(heads[static_cast<size_t>(c)]);
    std::copy(row.begin(), row.end(), nbr.begin() + static_cast<size_t>(c) * k);
  }
  Var neighbors = gather_cols(gated, nbr);  // C x (n*k)
  const auto rep = repeat_map(n, k);
  Var desc_rep = gather_cols(descriptor, rep);
  Var h = state_descriptor(g, neighbors, desc_rep);
  Var alpha = policy_logits(g, h, logit_mlp);  // 1 x (n*k)

  if (cfg.suppression && !first_step) {
    CW_CHECK(prev_descriptor.valid(), "suppression needs previous descriptor");
    Var support = sub(head_feats, prev_descriptor);      // C x n
    Var head_rep = gather_cols(head_feats, rep);
    Var candidates = sub(neighbors, head_rep);           // C x (n*k)
    Var d = suppression_multiplier(g, support, candidates, k, cfg.theta_bar);
    alpha = mul(alpha, d);
  }

  Var sel = g.soft_selection ? softmax_groups(alpha, k)
                             : hard_softmax_st_groups(alpha, k);
  WalkStep out;
  out.next_feats = pool_groups(mul_rowvec(neighbors, sel), k, PoolKind::kSum);

  const Tensor& a = g.tape.val(alpha);
  out.next_idx.resize(static_cast<size_t>(n));
  for (int c = 0; c < n; ++c) {
    int best = 0;
    const double* seg = a.data() + static_cast<size_t>(c) * k;
    for (int j = 1; j < k; ++j)
      if (seg[j] > seg[best]) best = j;
    out.next_idx[static_cast<size_t>(c)] = nbr[static_cast<size_t>(c) * k + best];
  }
  return out;
}

WalkStep walk_step(Graph& g, Var gated, const NeighborGraph& graph, int head,
                   Var head_feat, Var descriptor, const MlpParams& logit_mlp,
                   const WalkConfig& cfg) {
  return walk_transition(g, gated, graph, {head}, head_feat, descriptor, Var{},
                         true, logit_mlp, cfg);
}

CurveSet group_curves(Graph& g, Var feats, const NeighborGraph& graph,
                      const WalkParams& params, const WalkConfig& cfg) {
  CW_CHECK(cfg.l >= 1, "curve length must be >= 1");
  const int P = g.tape.val(feats).cols();
  CW_CHECK(graph.points() == P, "graph resolution != feature columns");

  StartSelection sel = select_starts(g, feats, cfg.n, params.start_mlp);
  CurveSet curves;
  curves.n = cfg.n;
  curves.l = cfg.l;
  curves.start_indices = sel.starts;
  curves.start_scores = sel.scores;
  curves.indices.assign(static_cast<size_t>(cfg.n) * cfg.l, -1);
  for (int c = 0; c < cfg.n; ++c)
    curves.indices[static_cast<size_t>(c) * cfg.l] = sel.starts[static_cast<size_t>(c)];

  std::vector<int> heads = sel.starts;
  Var state = gather_cols(sel.gated, heads);  // C x n
  Var descriptor = state;                     // r_1 = s_1
  Var prev_descriptor{};                      // r_0 does not exist
  std::vector<Var> steps{state};

  for (int i = 1; i < cfg.l; ++i) {
    WalkStep step = walk_transition(g, sel.gated, graph, heads, state,
                                    descriptor, prev_descriptor, i == 1,
                                    params.logit_mlp, cfg);
    heads = step.next_idx;
    for (int c = 0; c < cfg.n; ++c)
      curves.indices[static_cast<size_t>(c) * cfg.l + i] = heads[static_cast<size_t>(c)];
    prev_descriptor = descriptor;
    if (cfg.momentum) {
      descriptor = momentum_update(g, descriptor, step.next_feats,
                                   params.momentum_mlp).r;
    } else {
      descriptor = step.next_feats;  // naive: r == s_i
    }
    state = step.next_feats;
    steps.push_back(state);
  }

  curves.features = cfg.l == 1 ? steps[0] : concat_cols(steps);
  curves.gated = sel.gated;
  return curves;
}

CurveStats curve_stats(const std::vector<int>& indices, int n, int l,
                       const Tensor& coords) {
  CW_CHECK(static_cast<int>(indices.size()) == n * l, "index layout");
  CurveStats stats;
  stats.mean_dist_to_start.assign(static_cast<size_t>(l), 0.0);
  stats.mean_dist_to_last.assign(static_cast<size_t>(l), 0.0);
  int turn_curves = 0;
  for (int c = 0; c < n; ++c) {
    CurveTrace trace;
    trace.indices.assign(indices.begin() + static_cast<size_t>(c) * l,
                         indices.begin() + static_cast<size_t>(c + 1) * l);
    const int start = trace.indices.front();
    const int last = trace.indices.back();
    for (int i = 0; i < l; ++i) {
      const int node = trace.indices[static_cast<size_t>(i)];
      trace.dist_to_start.push_back(std::sqrt(dist2(coords, node, start)));
      trace.dist_to_last.push_back(std::sqrt(dist2(coords, node, last)));
      if (i > 0)
        trace.step_length.push_back(std::sqrt(
            dist2(coords, node, trace.indices[static_cast<size_t>(i - 1)])));
    }
    std::set<int> distinct(trace.indices.begin(), trace.indices.end());
    trace.revisits = l - static_cast<int>(distinct.size());

    double turn_sum = 0.0;
    int turn_count = 0;
    for (int i = 2; i < l; ++i) {
      const int a = trace.indices[static_cast<size_t>(i - 2)];
      const int b = trace.indices[static_cast<size_t>(i - 1)];
      const int cnode = trace.indices[static_cast<size_t>(i)];
      double u[3], v[3], nu = 0.0, nv = 0.0, dot = 0.0;
      for (int d = 0; d < 3; ++d) {
        u[d] = coords.at(b, d) - coords.at(a, d);
        v[d] = coords.at(cnode, d) - coords.at(b, d);
        nu += u[d] * u[d];
        nv += v[d] * v[d];
        dot += u[d] * v[d];
      }
      if (nu <= 0.0 || nv <= 0.0) continue;
      const double cosang =
          std::clamp(dot / std::sqrt(nu * nv), -1.0, 1.0);
      turn_sum += std::acos(cosang) * 180.0 / M_PI;
      ++turn_count;
    }
    trace.mean_turn_deg = turn_count > 0 ? turn_sum / turn_count : 0.0;
    if (turn_count > 0) {
      stats.mean_turn_deg += trace.mean_turn_deg;
      ++turn_curves;
    }
    for (int i = 0; i < l; ++i) {
      stats.mean_dist_to_start[static_cast<size_t>(i)] +=
          trace.dist_to_start[static_cast<size_t>(i)] / n;
      stats.mean_dist_to_last[static_cast<size_t>(i)] +=
          trace.dist_to_last[static_cast<size_t>(i)] / n;
    }
    stats.mean_revisits += static_cast<double>(trace.revisits) / n;
    stats.curves.push_back(std::move(trace));
  }
  if (turn_curves > 0) stats.mean_turn_deg /= turn_curves;
  return stats;
}

std::string curve_stats_json(const CurveStats& stats) {
  nlohmann::json j;
  j["curves"] = nlohmann::json::array();
  for (const CurveTrace& c : stats.curves) {
    j["curves"].push_back({{"indices", c.indices},
                           {"dist_to_start", c.dist_to_start},
                           {"dist_to_last", c.dist_to_last},
                           {"revisits", c.revisits},
                           {"mean_turn_deg", c.mean_turn_deg}});
  }
  j["aggregate"] = {{"mean_dist_to_start", stats.mean_dist_to_start},
                    {"mean_dist_to_last", stats.mean_dist_to_last},
                    {"mean_revisits", stats.mean_revisits},
                    {"mean_turn_deg", stats.mean_turn_deg}};
  return j.dump(2);
}

}  // namespace curvewalk
