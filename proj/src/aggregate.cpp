#include "curvewalk/aggregate.hpp"

#include <cmath>
#include <sstream>

namespace curvewalk {

namespace {

// flattened neighbor indices and the matching center replication
struct NeighborLayout {
  std::vector<int> neighbor;  // P*k
  std::vector<int> center;    // P*k
};

NeighborLayout neighbor_layout(const NeighborGraph& graph) {
  const int P = graph.points(), k = graph.k;
  NeighborLayout out;
  out.neighbor.resize(static_cast<size_t>(P) * k);
  out.center.resize(static_cast<size_t>(P) * k);
  for (int i = 0; i < P; ++i) {
    auto row = graph.row(i);
    for (int j = 0; j < k; ++j) {
      out.neighbor[static_cast<size_t>(i) * k + j] = row[static_cast<size_t>(j)];
      out.center[static_cast<size_t>(i) * k + j] = i;
    }
  }
  return out;
}

}  // namespace

Var local_aggregate(Graph& g, Var feats, const NeighborGraph& graph,
                    const MlpParams& mlp, PoolKind pool) {
  CW_CHECK(graph.points() == g.tape.val(feats).cols(),
           "graph/feature size mismatch");
  const NeighborLayout lay = neighbor_layout(graph);
  Var nbr = gather_cols(feats, lay.neighbor);
  Var ctr = gather_cols(feats, lay.center);
  Var diff = sub(ctr, nbr);  // f - f_j
  Var h = shared_mlp(g, diff, mlp);
  return pool_groups(h, graph.k, pool);
}

Var lpfa(Graph& g, Var feats, const NeighborGraph& graph,
         const MlpParams& mlp) {
  CW_CHECK(graph.points() == g.tape.val(feats).cols(),
           "graph/feature size mismatch");
  const NeighborLayout lay = neighbor_layout(graph);
  Var nbr = gather_cols(feats, lay.neighbor);
  Var ctr = gather_cols(feats, lay.center);
  Var enc = concat_rows(sub(nbr, ctr), ctr);  // [f_j - f_i, f_i]
  Var h = shared_mlp(g, enc, mlp);
  return pool_groups(h, graph.k, PoolKind::kAvg);
}

Var attentive_pool_groups(Graph& g, Var x, int group,
                          const MlpParams& score_mlp) {
  const Tensor& xv = g.tape.val(x);
  CW_CHECK(group >= 1 && xv.cols() % group == 0, "attentive_pool group layout");
  Var scores = softmax_groups(shared_mlp(g, x, score_mlp), group);
  return pool_groups(mul(x, scores), group, PoolKind::kSum);
}

CurveAggParams CurveAggParams::make(const std::string& name, int channels,
                                    int rho, Rng& rng) {
  const int reduced = std::max(1, channels / rho);
  CurveAggParams p;
  p.ap_intra = MlpParams::make(name + ".ap_intra", {channels, channels},
                               Act::kNone, Norm::kNone, rng);
  p.ap_inter = MlpParams::make(name + ".ap_inter", {channels, channels},
                               Act::kNone, Norm::kNone, rng);
  p.bott_point = MlpParams::make(name + ".bott_point", {channels, reduced},
                                 Act::kNone, Norm::kNone, rng);
  p.bott_intra = MlpParams::make(name + ".bott_intra", {channels, reduced},
                                 Act::kNone, Norm::kNone, rng);
  p.bott_inter = MlpParams::make(name + ".bott_inter", {channels, reduced},
                                 Act::kNone, Norm::kNone, rng);
  p.value_intra = MlpParams::make(name + ".value_intra", {reduced, channels},
                                  Act::kNone, Norm::kNone, rng);
  p.value_inter = MlpParams::make(name + ".value_inter", {reduced, channels},
                                  Act::kNone, Norm::kNone, rng);
  p.fuse = MlpParams::make(name + ".fuse", {2 * channels, channels},
                           Act::kNone, Norm::kNone, rng);
  return p;
}

void CurveAggParams::register_params(ParamStore& store) const {
  for (const MlpParams* m : {&ap_intra, &ap_inter, &bott_point, &bott_intra,
                             &bott_inter, &value_intra, &value_inter, &fuse})
    m->register_params(store);
}

Var curve_aggregate(Graph& g, Var feats, const CurveSet& curves,
                    const CurveAggParams& params) {
  const int n = curves.n, l = curves.l;
  const Tensor& cf = g.tape.val(curves.features);
  CW_CHECK(cf.cols() == n * l, "curve feature layout");
  CW_CHECK(cf.rows() == g.tape.val(feats).rows(),
           "curve/point channel mismatch");

  // inter: pool across the n curves at each step (columns are step-major)
  Var f_inter = attentive_pool_groups(g, curves.features, n, params.ap_inter);
  // intra: pool along each curve; permute to curve-major first
  std::vector<int> to_curve_major(static_cast<size_t>(n) * l);
  for (int c = 0; c < n; ++c)
    for (int i = 0; i < l; ++i)
      to_curve_major[static_cast<size_t>(c) * l + i] = curves.feature_col(c, i);
  Var curve_major = gather_cols(curves.features, to_curve_major);
  Var f_intra = attentive_pool_groups(g, curve_major, l, params.ap_intra);

  Var point_red = shared_mlp(g, feats, params.bott_point);   // C/rho x P
  Var intra_red = shared_mlp(g, f_intra, params.bott_intra); // C/rho x n
  Var inter_red = shared_mlp(g, f_inter, params.bott_inter); // C/rho x l

  // mapping scores: P x n and P x l, softmax over the curve axis
  Var score_intra = softmax_groups(matmul_tn(point_red, intra_red), n);
  Var score_inter = softmax_groups(matmul_tn(point_red, inter_red), l);

  Var v_intra = shared_mlp(g, intra_red, params.value_intra);  // C x n
  Var v_inter = shared_mlp(g, inter_red, params.value_inter);  // C x l

  Var fine_intra = matmul_nt(v_intra, score_intra);  // C x P
  Var fine_inter = matmul_nt(v_inter, score_inter);  // C x P
  Var fused = shared_mlp(g, concat_rows(fine_intra, fine_inter), params.fuse);
  return add(feats, fused);
}

CicParams CicParams::make(const std::string& name, const CicConfig& cfg,
                          Rng& rng) {
  CW_CHECK(cfg.in_channels >= 1 && cfg.out_channels >= 1, "cic channels");
  if (cfg.curves) {
    CW_CHECK(cfg.curves->n >= 1 && cfg.curves->l >= 1, "cic curve spec");
  }
  CicParams p;
  p.cfg = cfg;
  p.name = name;
  const int enc_in = cfg.lpfa_encoding ? 2 * cfg.in_channels : cfg.in_channels;
  p.conv = MlpParams::make(name + ".conv", {enc_in, cfg.out_channels},
                           Act::kNone, Norm::kNone, rng, Act::kNone,
                           cfg.norm ? Norm::kBatch : Norm::kNone);
  if (cfg.residual && cfg.in_channels != cfg.out_channels) {
    Tensor w({cfg.out_channels, cfg.in_channels});
    const double std = std::sqrt(2.0 / cfg.in_channels);
    for (int64_t i = 0; i < w.size(); ++i)
      w[i] = quantize_f32(rng.normal() * std);
    p.shortcut_w = std::move(w);
  }
  if (cfg.curves) {
    const int hidden = std::max(8, cfg.out_channels / 2);
    p.walk = WalkParams::make(name + ".walk", cfg.out_channels, hidden, rng);
    p.ca = CurveAggParams::make(name + ".ca", cfg.out_channels,
                                cfg.bottleneck_rho, rng);
  }
  return p;
}

void CicParams::register_params(ParamStore& store) const {
  conv.register_params(store);
  if (shortcut_w)
    store.add(name + ".shortcut.w", const_cast<Tensor*>(&*shortcut_w));
  if (walk) walk->register_params(store);
  if (ca) ca->register_params(store);
}

CicOutput cic_block(Graph& g, const Tensor& coords, Var feats,
                    const CicParams& params) {
  const CicConfig& cfg = params.cfg;
  CW_CHECK(g.tape.val(feats).rows() == cfg.in_channels,
           "cic input channels mismatch");
  CicOutput out;
  Var f = feats;
  if (cfg.downsample) {
    PointCloud tmp;
    tmp.coords = coords;
    out.sample_idx = farthest_point_sample(tmp, *cfg.downsample);
    out.coords = gather_rows(coords, out.sample_idx);
    f = gather_cols(f, out.sample_idx);
  } else {
    out.coords = coords;
  }

  PointCloud at_res;
  at_res.coords = out.coords;
  const NeighborGraph graph =
      cfg.neighbors.kind == NeighborRule::kKnn
          ? knn(at_res, cfg.neighbors.k)
          : ball_query_knn(at_res, cfg.neighbors.radius, cfg.neighbors.k);

  Var mid = cfg.lpfa_encoding
                ? lpfa(g, f, graph, params.conv)
                : local_aggregate(g, f, graph, params.conv, PoolKind::kMax);
  out.conv_feats = mid;

  if (cfg.curves) {
    CurveSet curves = group_curves(g, mid, graph, *params.walk, *cfg.curves);
    mid = curve_aggregate(g, mid, curves, *params.ca);
    out.ca_feats = mid;
    out.curves = std::move(curves);
  }

  if (cfg.residual) {
    Var shortcut = f;
    if (params.shortcut_w) {
      shortcut = matmul(g.param(const_cast<Tensor&>(*params.shortcut_w)), f);
    }
    mid = add(mid, shortcut);
  }
  out.feats = leaky_relu(mid, kLeakySlope);
  return out;
}

ChannelVariance channel_variance_map(const Tensor& feats) {
  const int C = feats.rows(), P = feats.cols();
  ChannelVariance out;
  out.per_channel_variance.resize(static_cast<size_t>(C));
  out.per_point_mean.assign(static_cast<size_t>(P), 0.0);
  for (int i = 0; i < C; ++i) {
    double mean = 0.0;
    for (int j = 0; j < P; ++j) mean += feats.at(i, j);
    mean /= P;
    double var = 0.0;
    for (int j = 0; j < P; ++j) {
      const double d = feats.at(i, j) - mean;
      var += d * d;
      out.per_point_mean[static_cast<size_t>(j)] += feats.at(i, j) / C;
    }
    out.per_channel_variance[static_cast<size_t>(i)] = var / P;
  }
  return out;
}

std::string channel_variance_csv(const Tensor& coords, const Tensor& feats) {
  CW_CHECK(coords.rows() == feats.cols(), "coords/features point mismatch");
  const ChannelVariance cv = channel_variance_map(feats);
  std::ostringstream os;
  os << "point_id,x,y,z,channel_mean\n";
  char buf[64];
  for (int j = 0; j < coords.rows(); ++j) {
    os << j;
    for (int d = 0; d < 3; ++d) {
      std::snprintf(buf, sizeof buf, ",%.9g", coords.at(j, d));
      os << buf;
    }
    std::snprintf(buf, sizeof buf, ",%.9g",
                  cv.per_point_mean[static_cast<size_t>(j)]);
    os << buf << "\n";
  }
  return os.str();
}

}  // namespace curvewalk
