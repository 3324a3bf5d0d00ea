#include <cmath>
#include <memory>
#include <cstring>
#include <set>

#include "doctest.h"
#include "oracles.hpp"

#include "curvewalk/dataio.hpp"
#include "curvewalk/gradcheck.hpp"
#include "curvewalk/walk.hpp"

using namespace curvewalk;

namespace {

struct WalkFixture {
  PointCloud cloud;
  NeighborGraph graph;
  Tensor feats;
  WalkParams params;

  WalkFixture(int P, int C, int k, uint64_t seed) {
    Rng rng(seed);
    cloud.coords = oracle::random_tensor({P, 3}, rng);
    graph = knn(cloud, k);
    feats = oracle::random_tensor({C, P}, rng);
    params = WalkParams::make("w", C, 8, rng);
  }
};

// forces the start selector to emit a constant logit
void zero_mlp(MlpParams& mlp) {
  for (auto& layer : mlp.layers) {
    for (int64_t i = 0; i < layer.w.size(); ++i) layer.w[i] = 0.0;
    if (layer.b.size() > 0)
      for (int64_t i = 0; i < layer.b.size(); ++i) layer.b[i] = 0.0;
  }
}

}  // namespace

TEST_CASE("select_starts with constant scores") {
  WalkFixture f(10, 4, 3, 21);
  zero_mlp(f.params.start_mlp);
  Graph g;
  Var feats = g.input(f.feats, true);
  StartSelection sel = select_starts(g, feats, 4, f.params.start_mlp);
  const Tensor& scores = g.tape.val(sel.scores);
  for (int64_t i = 0; i < scores.size(); ++i) CHECK(scores[i] == doctest::Approx(0.5));
  CHECK(oracle::rel_diff(g.tape.val(sel.gated),
                         [&] {
                           Tensor h = f.feats;
                           for (int64_t i = 0; i < h.size(); ++i) h[i] *= 0.5;
                           return h;
                         }()) <= 1e-12);
  CHECK(sel.starts == std::vector<int>({0, 1, 2, 3}));
}

TEST_CASE("select_starts n = P selects every point") {
  WalkFixture f(7, 3, 2, 22);
  Graph g;
  StartSelection sel = select_starts(g, g.input(f.feats), 7, f.params.start_mlp);
  std::set<int> seen(sel.starts.begin(), sel.starts.end());
  CHECK(static_cast<int>(seen.size()) == 7);
  CHECK_THROWS_AS(
      (void)select_starts(g, g.input(f.feats), 8, f.params.start_mlp),
      std::invalid_argument);
}

TEST_CASE("select_starts top-n equals sort oracle") {
  WalkFixture f(32, 6, 4, 23);
  Graph g;
  StartSelection sel = select_starts(g, g.input(f.feats), 4, f.params.start_mlp);
  const Tensor& s = g.tape.val(sel.scores);
  std::vector<int> order(32);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (s[a] != s[b]) return s[a] > s[b];
    return a < b;
  });
  CHECK(sel.starts == std::vector<int>(order.begin(), order.begin() + 4));
}

TEST_CASE("state descriptor stacks neighbor over descriptor") {
  WalkFixture f(6, 3, 2, 24);
  Graph g;
  Var feats = g.input(f.feats);
  Var nbr = gather_cols(feats, {1, 2});
  Var zero = g.constant(Tensor::zeros({3, 2}));
  Var h = state_descriptor(g, nbr, zero);
  const Tensor& hv = g.tape.val(h);
  CHECK(hv.rows() == 6);
  for (int j = 0; j < 2; ++j) {
    for (int i = 0; i < 3; ++i) CHECK(hv.at(3 + i, j) == 0.0);
    for (int i = 0; i < 3; ++i) CHECK(hv.at(i, j) == f.feats.at(i, j + 1));
  }
}

TEST_CASE("policy logits: identical neighbors give identical logits") {
  WalkFixture f(9, 4, 3, 25);
  Graph g;
  Var feats = g.input(f.feats);
  Var nbr = gather_cols(feats, {5, 5, 5});
  Var r = gather_cols(feats, {0, 0, 0});
  Var alpha = policy_logits(g, state_descriptor(g, nbr, r), f.params.logit_mlp);
  const Tensor& a = g.tape.val(alpha);
  CHECK(a.cols() == 3);
  CHECK(a[0] == a[1]);
  CHECK(a[1] == a[2]);
}

TEST_CASE("policy logits match per-neighbor oracle evaluation") {
  WalkFixture f(12, 5, 4, 26);
  Graph g;
  Var feats = g.input(f.feats);
  const std::vector<int> nbr_idx{2, 7, 9, 11};
  Var nbr = gather_cols(feats, nbr_idx);
  Var r = gather_cols(feats, {3, 3, 3, 3});
  Var alpha = policy_logits(g, state_descriptor(g, nbr, r), f.params.logit_mlp);
  for (size_t j = 0; j < nbr_idx.size(); ++j) {
    std::vector<double> h(10);
    for (int i = 0; i < 5; ++i) {
      h[static_cast<size_t>(i)] = f.feats.at(i, nbr_idx[j]);
      h[static_cast<size_t>(5 + i)] = f.feats.at(i, 3);
    }
    const auto out = oracle::mlp_column(f.params.logit_mlp, h);
    CHECK(g.tape.val(alpha)[static_cast<int64_t>(j)] ==
          doctest::Approx(out[0]).epsilon(1e-12));
  }
}

TEST_CASE("suppression multiplier directional cases") {
  Graph g;
  Tensor support = Tensor::from({3, 1}, {1.0, 0.0, 0.0});
  Tensor cands = Tensor::from({3, 3}, {2.0, -0.7, 1.0,   // x components
                                       0.0, 0.0, 1.0,    // y
                                       0.0, 0.0, 0.0});  // z
  Var d = suppression_multiplier(g, g.input(support), g.input(cands), 3,
                                 M_PI / 2.0);
  const Tensor& dv = g.tape.val(d);
  CHECK(dv[0] == doctest::Approx(1.0));  // parallel: not suppressed
  CHECK(dv[1] == doctest::Approx(0.0).epsilon(1e-7));  // antiparallel: killed
  // 45 degrees <= 90: still 1
  CHECK(dv[2] == doctest::Approx(1.0));
}

TEST_CASE("suppression multiplier at 120 degrees with 90 degree threshold") {
  Graph g;
  Tensor support = Tensor::from({2, 1}, {1.0, 0.0});
  const double ang = 120.0 * M_PI / 180.0;
  Tensor cand = Tensor::from({2, 1}, {std::cos(ang), std::sin(ang)});
  Var d = suppression_multiplier(g, g.input(support), g.input(cand), 1,
                                 M_PI / 2.0);
  CHECK(g.tape.val(d)[0] == doctest::Approx(0.5).epsilon(1e-7));
}

TEST_CASE("suppression multiplier stays in [0,1]; zero support passes") {
  Rng rng(27);
  for (int t = 0; t < 100; ++t) {
    Graph g;
    Tensor support = oracle::random_tensor({4, 2}, rng);
    Tensor cands = oracle::random_tensor({4, 6}, rng);
    Var d = suppression_multiplier(g, g.input(support), g.input(cands), 3,
                                   rng.uniform(0.1, M_PI));
    const Tensor& dv = g.tape.val(d);
    for (int64_t i = 0; i < dv.size(); ++i) {
      CHECK(dv[i] >= 0.0);
      CHECK(dv[i] <= 1.0);
    }
  }
  Graph g;
  Var d = suppression_multiplier(g, g.input(Tensor::zeros({3, 1})),
                                 g.input(Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6})),
                                 2, M_PI / 2.0);
  CHECK(g.tape.val(d)[0] == 1.0);
  CHECK(g.tape.val(d)[1] == 1.0);
}

TEST_CASE("suppression equals 1 whenever the angle is within threshold") {
  Rng rng(28);
  const double theta_bar = 1.9;
  for (int t = 0; t < 200; ++t) {
    Graph g;
    Tensor support = oracle::random_tensor({3, 1}, rng);
    Tensor cand = oracle::random_tensor({3, 1}, rng);
    double dot = 0.0, ns = 0.0, nc = 0.0;
    for (int i = 0; i < 3; ++i) {
      dot += support[i] * cand[i];
      ns += support[i] * support[i];
      nc += cand[i] * cand[i];
    }
    const double angle = std::acos(std::clamp(dot / std::sqrt(ns * nc), -1.0, 1.0));
    Var d = suppression_multiplier(g, g.input(support), g.input(cand), 1, theta_bar);
    if (angle <= theta_bar - 1e-6) CHECK(g.tape.val(d)[0] == 1.0);
  }
}

TEST_CASE("momentum update blends and respects fixed points") {
  WalkFixture f(8, 4, 3, 29);
  zero_mlp(f.params.momentum_mlp);  // equal logits: beta = 0.5
  Graph g;
  Var feats = g.input(f.feats);
  Var r_prev = gather_cols(feats, {0, 1});
  Var s = gather_cols(feats, {2, 3});
  MomentumOut out = momentum_update(g, r_prev, s, f.params.momentum_mlp);
  CHECK(g.tape.val(out.beta)[0] == doctest::Approx(0.5));
  for (int i = 0; i < 4; ++i)
    for (int c = 0; c < 2; ++c)
      CHECK(g.tape.val(out.r).at(i, c) ==
            doctest::Approx(0.5 * f.feats.at(i, c) + 0.5 * f.feats.at(i, c + 2)));

  // r_prev == s is a fixed point regardless of beta
  WalkFixture f2(8, 4, 3, 30);
  Graph g2;
  Var feats2 = g2.input(f2.feats);
  Var same = gather_cols(feats2, {5, 6});
  MomentumOut out2 = momentum_update(g2, same, same, f2.params.momentum_mlp);
  for (int i = 0; i < 4; ++i)
    for (int c = 0; c < 2; ++c)
      CHECK(g2.tape.val(out2.r).at(i, c) ==
            doctest::Approx(f2.feats.at(i, c == 0 ? 5 : 6)));
}

TEST_CASE("momentum descriptor stays within componentwise bounds") {
  Rng rng(31);
  WalkFixture f(6, 5, 2, 32);
  Graph g;
  Var r = g.input(oracle::random_tensor({5, 1}, rng), true);
  Tensor lo = g.tape.val(r), hi = g.tape.val(r);
  for (int step = 0; step < 12; ++step) {
    Tensor snew = oracle::random_tensor({5, 1}, rng);
    for (int i = 0; i < 5; ++i) {
      lo[i] = std::min(lo[i], snew[i]);
      hi[i] = std::max(hi[i], snew[i]);
    }
    MomentumOut out = momentum_update(g, r, g.input(snew), f.params.momentum_mlp);
    r = out.r;
    const Tensor& rv = g.tape.val(r);
    for (int i = 0; i < 5; ++i) {
      CHECK(rv[i] >= lo[i] - 1e-12);
      CHECK(rv[i] <= hi[i] + 1e-12);
    }
  }
}

TEST_CASE("walk_step argmax identity") {
  // k=2 with a forced huge logit gap: output is neighbor 0's feature exactly
  Graph g;
  Tensor feats = Tensor::from({2, 3}, {10, 20, 30, 40, 50, 60});
  Var f = g.input(feats);
  Var nbr = gather_cols(f, {1, 2});
  Var alpha = g.input(Tensor::from({1, 2}, {5.0, -5.0}));
  Var sel = hard_softmax_st_groups(alpha, 2);
  Var out = pool_groups(mul_rowvec(nbr, sel), 2, PoolKind::kSum);
  CHECK(g.tape.val(out).at(0, 0) == 20.0);
  CHECK(g.tape.val(out).at(1, 0) == 50.0);
}

TEST_CASE("walk_step forward is bitwise equal to the argmax gather") {
  for (uint64_t seed = 0; seed < 30; ++seed) {
    WalkFixture f(14, 4, 3, 400 + seed);
    Graph g;
    Var feats = g.input(f.feats, true);
    const int head = static_cast<int>(seed % 14);
    Var head_feat = gather_cols(feats, {head});
    WalkStep step = walk_step(g, feats, f.graph, head, head_feat, head_feat,
                              f.params.logit_mlp, WalkConfig{1, 2, M_PI / 2, true, true});
    Var ref = gather_cols(feats, {step.next_idx[0]});
    const Tensor& a = g.tape.val(step.next_feats);
    const Tensor& b = g.tape.val(ref);
    CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<size_t>(a.size())) == 0);
  }
}

TEST_CASE("suppressed antiparallel candidate's logit is scaled to zero") {
  // support along +x, candidate exactly antiparallel: alpha' = alpha * 0
  Graph g;
  Tensor support = Tensor::from({2, 1}, {1.0, 0.0});
  Tensor cand = Tensor::from({2, 2}, {-3.0, 1.0, 0.0, 0.0});
  Tensor alpha = Tensor::from({1, 2}, {4.0, 1.0});
  Var d = suppression_multiplier(g, g.input(support), g.input(cand), 2, M_PI / 2);
  Var scaled = mul(g.input(alpha), d);
  CHECK(g.tape.val(scaled)[0] == doctest::Approx(0.0).epsilon(1e-7));
  CHECK(g.tape.val(scaled)[1] == doctest::Approx(1.0));
}

TEST_CASE("group_curves l=1 returns only the starts") {
  WalkFixture f(10, 4, 3, 33);
  Graph g;
  CurveSet cs = group_curves(g, g.input(f.feats, true), f.graph, f.params,
                             WalkConfig{3, 1, M_PI / 2, true, true});
  CHECK(cs.l == 1);
  CHECK(cs.indices.size() == 3);
  CHECK(cs.indices == cs.start_indices);
  CHECK(g.tape.val(cs.features).cols() == 3);
}

TEST_CASE("naive walk on a symmetric square revisits within 4 steps") {
  // square corners; k=2 connects each corner to its two edge neighbors
  PointCloud square;
  square.coords = Tensor::from({4, 3}, {0, 0, 0, 1, 0, 0, 1, 1, 0, 0, 1, 0});
  const NeighborGraph graph = knn(square, 2);
  Rng rng(34);
  Tensor feats({3, 4});
  for (int i = 0; i < 4; ++i)
    for (int d = 0; d < 3; ++d) feats.at(d, i) = square.coords.at(i, d);
  WalkParams params = WalkParams::make("w", 3, 8, rng);
  const WalkConfig cfg{1, 5, M_PI / 2, false, false};  // naive: r == s_i

  // successor map: the naive policy is a fixed function of the head alone
  std::vector<int> successor(4);
  for (int v = 0; v < 4; ++v) {
    Graph g;
    Var f = g.input(feats);
    Var head = gather_cols(f, {v});
    successor[static_cast<size_t>(v)] =
        walk_step(g, f, graph, v, head, head, params.logit_mlp, cfg).next_idx[0];
  }

  Graph g;
  StartSelection sel = select_starts(g, g.input(feats), 1, params.start_mlp);
  CurveSet cs = group_curves(g, g.input(feats), graph, params, cfg);
  // the walk follows the successor map exactly, hence enters a loop
  for (int i = 1; i < 5; ++i)
    CHECK(cs.index_at(0, i) ==
          successor[static_cast<size_t>(cs.index_at(0, i - 1))]);
  std::set<int> distinct(cs.indices.begin(), cs.indices.end());
  CHECK(static_cast<int>(distinct.size()) < 5);  // a node repeats
  (void)sel;
}

TEST_CASE("group_curves indices are valid and features match gated columns") {
  WalkFixture f(32, 6, 4, 35);
  Graph g;
  CurveSet cs = group_curves(g, g.input(f.feats, true), f.graph, f.params,
                             WalkConfig{2, 5, M_PI / 2, true, true});
  const Tensor& gated = g.tape.val(cs.gated);
  const Tensor& features = g.tape.val(cs.features);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 5; ++i) {
      const int node = cs.index_at(c, i);
      CHECK(node >= 0);
      CHECK(node < 32);
      for (int r = 0; r < 6; ++r)
        CHECK(features.at(r, cs.feature_col(c, i)) == gated.at(r, node));
    }
  // consecutive indices are graph neighbors
  for (int c = 0; c < 2; ++c)
    for (int i = 1; i < 5; ++i) {
      const auto row = f.graph.row(cs.index_at(c, i - 1));
      CHECK(std::find(row.begin(), row.end(), cs.index_at(c, i)) != row.end());
    }
}

TEST_CASE("group_curves full graph gradient vs finite differences") {
  auto s = std::make_shared<WalkFixture>(20, 5, 4, 36);
  std::vector<Tensor*> leaves{&s->feats};
  for (auto* mlp : {&s->params.start_mlp, &s->params.logit_mlp, &s->params.momentum_mlp})
    for (auto& layer : mlp->layers) {
      leaves.push_back(&layer.w);
      leaves.push_back(&layer.b);
    }
  GradCheckTarget target{"group_curves_test", leaves, [s](Graph& g) {
                           CurveSet cs = group_curves(
                               g, g.param(s->feats), s->graph, s->params,
                               WalkConfig{2, 4, M_PI / 2, true, true});
                           return mean_all(cs.features);
                         }};
  CHECK(grad_check(target, 1e-5, 10).max_rel_err < 1e-4);
}

TEST_CASE("curve_stats") {
  // l=1: all distances zero
  Tensor coords = Tensor::from({4, 3}, {0, 0, 0, 1, 0, 0, 2, 0, 0, 3, 0, 0});
  CurveStats one = curve_stats({2}, 1, 1, coords);
  CHECK(one.curves[0].dist_to_start[0] == 0.0);
  CHECK(one.curves[0].dist_to_last[0] == 0.0);
  CHECK(one.curves[0].revisits == 0);

  // straight-line walk: distance to start strictly increases
  CurveStats line = curve_stats({0, 1, 2, 3}, 1, 4, coords);
  for (int i = 1; i < 4; ++i)
    CHECK(line.curves[0].dist_to_start[static_cast<size_t>(i)] >
          line.curves[0].dist_to_start[static_cast<size_t>(i - 1)]);
  CHECK(line.curves[0].revisits == 0);
  CHECK(line.curves[0].mean_turn_deg == doctest::Approx(0.0));
  CHECK(line.curves[0].dist_to_last[3] == 0.0);

  // revisits = occurrences beyond the first
  CurveStats rev = curve_stats({0, 1, 0, 1}, 1, 4, coords);
  CHECK(rev.curves[0].revisits == 2);

  // random curves against a direct recomputation
  Rng rng(37);
  Tensor cloud = oracle::random_tensor({20, 3}, rng);
  std::vector<int> idx;
  const int n = 3, l = 6;
  for (int i = 0; i < n * l; ++i)
    idx.push_back(static_cast<int>(rng.uniform_int(20)));
  CurveStats st = curve_stats(idx, n, l, cloud);
  for (int c = 0; c < n; ++c)
    for (int i = 0; i < l; ++i) {
      const int a = idx[static_cast<size_t>(c) * l + i];
      const int s0 = idx[static_cast<size_t>(c) * l];
      const int sl = idx[static_cast<size_t>(c) * l + l - 1];
      CHECK(st.curves[static_cast<size_t>(c)].dist_to_start[static_cast<size_t>(i)] ==
            doctest::Approx(std::sqrt(dist2(cloud, a, s0))));
      CHECK(st.curves[static_cast<size_t>(c)].dist_to_last[static_cast<size_t>(i)] ==
            doctest::Approx(std::sqrt(dist2(cloud, a, sl))));
    }

  // json shape
  const std::string json_text = curve_stats_json(st);
  CHECK(json_text.find("\"curves\"") != std::string::npos);
  CHECK(json_text.find("\"aggregate\"") != std::string::npos);
  CHECK(json_text.find("\"mean_turn_deg\"") != std::string::npos);
}

TEST_CASE("loop statistics: momentum and suppression reduce revisits") {
  // scaled-down restatement of the acceptance ordering (fewer seeds)
  Rng cloud_rng(38);
  PointCloud cloud = synth_cloud(ShapeKind::kTorus, 128, cloud_rng);
  const NeighborGraph graph = knn(cloud, 8);
  Tensor feats({3, 128});
  for (int i = 0; i < 128; ++i)
    for (int d = 0; d < 3; ++d) feats.at(d, i) = cloud.coords.at(i, d);

  auto mean_revisits = [&](bool momentum, bool suppression) {
    double total = 0.0;
    const int seeds = 24;
    for (int s = 0; s < seeds; ++s) {
      Rng rng(derive_seed(500, 0, static_cast<uint64_t>(s)));
      WalkParams params = WalkParams::make("w", 3, 16, rng);
      Graph g;
      CurveSet cs = group_curves(g, g.input(feats), graph, params,
                                 WalkConfig{4, 20, M_PI / 2, momentum, suppression});
      total += curve_stats(cs, cloud.coords).mean_revisits / seeds;
    }
    return total;
  };
  const double naive = mean_revisits(false, false);
  const double dm = mean_revisits(true, false);
  const double dm_cs = mean_revisits(true, true);
  CHECK(dm_cs <= dm + 1e-9);
  CHECK(dm <= naive + 1e-9);
}
