#include <cmath>
#include <memory>

#include "doctest.h"
#include "oracles.hpp"

#include "curvewalk/gradcheck.hpp"

using namespace curvewalk;

namespace {

PointCloud random_cloud(int P, uint64_t seed) {
  Rng rng(seed);
  PointCloud c;
  c.coords = oracle::random_tensor({P, 3}, rng);
  return c;
}

}  // namespace

TEST_CASE("local_aggregate on a constant field collapses to identical columns") {
  PointCloud cloud = random_cloud(20, 50);
  const NeighborGraph graph = knn(cloud, 5);
  Rng rng(51);
  MlpParams mlp = MlpParams::make("m", {4, 6}, Act::kLeakyRelu, Norm::kNone, rng);
  Tensor constant = Tensor::full({4, 20}, 3.25);
  Graph g;
  Var out = local_aggregate(g, g.input(constant), graph, mlp, PoolKind::kMax);
  const Tensor& o = g.tape.val(out);
  for (int i = 0; i < o.rows(); ++i)
    for (int j = 1; j < o.cols(); ++j) CHECK(o.at(i, j) == o.at(i, 0));
}

TEST_CASE("local_aggregate matches the per-point loop oracle") {
  PointCloud cloud = random_cloud(16, 52);
  const NeighborGraph graph = knn(cloud, 4);
  Rng rng(53);
  MlpParams mlp = MlpParams::make("m", {3, 5}, Act::kLeakyRelu, Norm::kNone, rng);
  Tensor feats = oracle::random_tensor({3, 16}, rng);
  Graph g;
  for (PoolKind kind : {PoolKind::kMax, PoolKind::kAvg}) {
    Var out = local_aggregate(g, g.input(feats), graph, mlp, kind);
    const Tensor& o = g.tape.val(out);
    for (int p = 0; p < 16; ++p) {
      std::vector<std::vector<double>> cols;
      for (int j : graph.row(p)) {
        std::vector<double> diff(3);
        for (int i = 0; i < 3; ++i) diff[static_cast<size_t>(i)] = feats.at(i, p) - feats.at(i, j);
        cols.push_back(oracle::mlp_column(mlp, diff));
      }
      for (int i = 0; i < 5; ++i) {
        double expect = kind == PoolKind::kMax ? -1e300 : 0.0;
        for (const auto& c : cols)
          expect = kind == PoolKind::kMax
                       ? std::max(expect, c[static_cast<size_t>(i)])
                       : expect + c[static_cast<size_t>(i)] / cols.size();
        CHECK(o.at(i, p) == doctest::Approx(expect).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("lpfa k=1 self-like neighborhood encodes [0, f]") {
  // two coincident points: each one's nearest neighbor has its own feature
  PointCloud cloud;
  cloud.coords = Tensor::from({2, 3}, {0, 0, 0, 0, 0, 0});
  const NeighborGraph graph = knn(cloud, 1);
  Tensor feats = Tensor::from({2, 2}, {1.0, 1.0, -2.0, -2.0});  // equal columns
  Rng rng(54);
  MlpParams mlp = MlpParams::make("m", {4, 3}, Act::kNone, Norm::kNone, rng);
  Graph g;
  Var out = lpfa(g, g.input(feats), graph, mlp);
  std::vector<double> enc{0.0, 0.0, 1.0, -2.0};  // [f_j - f_i, f_i]
  const auto expect = oracle::mlp_column(mlp, enc);
  for (int i = 0; i < 3; ++i)
    CHECK(g.tape.val(out).at(i, 0) == doctest::Approx(expect[static_cast<size_t>(i)]));
}

TEST_CASE("lpfa matches the per-point loop oracle") {
  PointCloud cloud = random_cloud(14, 55);
  const NeighborGraph graph = knn(cloud, 3);
  Rng rng(56);
  MlpParams mlp = MlpParams::make("m", {6, 4}, Act::kLeakyRelu, Norm::kNone, rng);
  Tensor feats = oracle::random_tensor({3, 14}, rng);
  Graph g;
  Var out = lpfa(g, g.input(feats), graph, mlp);
  const Tensor& o = g.tape.val(out);
  for (int p = 0; p < 14; ++p) {
    std::vector<double> acc(4, 0.0);
    for (int j : graph.row(p)) {
      std::vector<double> enc(6);
      for (int i = 0; i < 3; ++i) {
        enc[static_cast<size_t>(i)] = feats.at(i, j) - feats.at(i, p);
        enc[static_cast<size_t>(3 + i)] = feats.at(i, p);
      }
      const auto h = oracle::mlp_column(mlp, enc);
      for (int i = 0; i < 4; ++i) acc[static_cast<size_t>(i)] += h[static_cast<size_t>(i)] / 3;
    }
    for (int i = 0; i < 4; ++i)
      CHECK(o.at(i, p) == doctest::Approx(acc[static_cast<size_t>(i)]).epsilon(1e-10));
  }
}

TEST_CASE("attentive pool: single column is the identity") {
  Rng rng(57);
  Tensor x = oracle::random_tensor({5, 1}, rng);
  MlpParams score = MlpParams::make("s", {5, 5}, Act::kNone, Norm::kNone, rng);
  Graph g;
  Var out = attentive_pool(g, g.input(x), score);
  CHECK(oracle::rel_diff(g.tape.val(out), x) <= 1e-12);
}

TEST_CASE("attentive pool: constant scores average") {
  Rng rng(58);
  Tensor x = oracle::random_tensor({4, 6}, rng);
  MlpParams score = MlpParams::make("s", {4, 4}, Act::kNone, Norm::kNone, rng);
  for (auto& layer : score.layers)
    for (int64_t i = 0; i < layer.w.size(); ++i) layer.w[i] = 0.0;
  Graph g;
  Var out = attentive_pool(g, g.input(x), score);
  for (int i = 0; i < 4; ++i) {
    double mean = 0.0;
    for (int j = 0; j < 6; ++j) mean += x.at(i, j) / 6;
    CHECK(g.tape.val(out).at(i, 0) == doctest::Approx(mean));
  }
}

TEST_CASE("attentive pool matches the direct formula oracle") {
  Rng rng(59);
  Tensor x = oracle::random_tensor({6, 9}, rng);
  MlpParams score = MlpParams::make("s", {6, 6}, Act::kNone, Norm::kNone, rng);
  Graph g;
  Var out = attentive_pool(g, g.input(x), score);
  CHECK(oracle::rel_diff(g.tape.val(out),
                         oracle::attentive_pool_direct(x, score)) <= 1e-10);
}

TEST_CASE("curve aggregation: zero fuse weights is the exact identity") {
  Rng rng(60);
  const int C = 8, P = 12, n = 2, l = 3;
  Tensor feats = oracle::random_tensor({C, P}, rng);
  CurveAggParams params = CurveAggParams::make("ca", C, 4, rng);
  for (auto& layer : params.fuse.layers) {
    for (int64_t i = 0; i < layer.w.size(); ++i) layer.w[i] = 0.0;
    for (int64_t i = 0; i < layer.b.size(); ++i) layer.b[i] = 0.0;
  }
  Graph g;
  Var f = g.input(feats);
  CurveSet cs;
  cs.n = n;
  cs.l = l;
  cs.features = gather_cols(f, {0, 4, 1, 5, 2, 6});
  Var out = curve_aggregate(g, f, cs, params);
  CHECK(oracle::rel_diff(g.tape.val(out), feats) == 0.0);
}

TEST_CASE("curve aggregation degenerate n=1 l=1") {
  Rng rng(61);
  const int C = 4, P = 6;
  Tensor feats = oracle::random_tensor({C, P}, rng);
  CurveAggParams params = CurveAggParams::make("ca", C, 4, rng);
  Graph g;
  Var f = g.input(feats);
  CurveSet cs;
  cs.n = 1;
  cs.l = 1;
  cs.features = gather_cols(f, {3});
  Var out = curve_aggregate(g, f, cs, params);
  // inter and intra pooling of a single column both return that column
  const Tensor expect = oracle::curve_aggregate_direct(
      feats, g.tape.val(cs.features), 1, 1, params);
  CHECK(oracle::rel_diff(g.tape.val(out), expect) <= 1e-10);
}

TEST_CASE("curve aggregation matches the unbatched straight-line oracle") {
  Rng rng(62);
  const int C = 8, P = 16, n = 2, l = 3;
  Tensor feats = oracle::random_tensor({C, P}, rng);
  CurveAggParams params = CurveAggParams::make("ca", C, 4, rng);
  Graph g;
  Var f = g.input(feats);
  std::vector<int> cols;
  Rng pick(63);
  for (int i = 0; i < n * l; ++i)
    cols.push_back(static_cast<int>(pick.uniform_int(P)));
  CurveSet cs;
  cs.n = n;
  cs.l = l;
  cs.features = gather_cols(f, cols);
  Var out = curve_aggregate(g, f, cs, params);
  const Tensor expect = oracle::curve_aggregate_direct(
      feats, g.tape.val(cs.features), n, l, params);
  CHECK(oracle::rel_diff(g.tape.val(out), expect) <= 1e-10);
}

TEST_CASE("curve aggregation softmax scores row-sum to one") {
  // checked through the aggregate itself: with values forced to a constant 1
  // and zero fuse, any mismatch in score normalization would shift outputs
  Rng rng(64);
  const int C = 4, P = 5, n = 2, l = 2;
  Tensor feats = oracle::random_tensor({C, P}, rng);
  CurveAggParams params = CurveAggParams::make("ca", C, 4, rng);
  // value MLPs: zero weights, bias 1 -> every value column is all-ones
  for (auto* value : {&params.value_intra, &params.value_inter})
    for (auto& layer : value->layers) {
      for (int64_t i = 0; i < layer.w.size(); ++i) layer.w[i] = 0.0;
      for (int64_t i = 0; i < layer.b.size(); ++i) layer.b[i] = 1.0;
    }
  // fuse: identity on the intra half, so out - feats = score row sums = 1
  for (auto& layer : params.fuse.layers) {
    for (int64_t i = 0; i < layer.w.size(); ++i) layer.w[i] = 0.0;
    for (int64_t i = 0; i < layer.b.size(); ++i) layer.b[i] = 0.0;
    for (int i = 0; i < C; ++i) layer.w.at(i, i) = 1.0;
  }
  Graph g;
  Var f = g.input(feats);
  CurveSet cs;
  cs.n = n;
  cs.l = l;
  cs.features = gather_cols(f, {0, 1, 2, 3});
  Var out = curve_aggregate(g, f, cs, params);
  for (int pt = 0; pt < P; ++pt)
    for (int i = 0; i < C; ++i)
      CHECK(g.tape.val(out).at(i, pt) - feats.at(i, pt) ==
            doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("cic block: identity-like configuration reduces to the shortcut") {
  Rng rng(65);
  PointCloud cloud = random_cloud(18, 66);
  CicConfig cfg;
  cfg.in_channels = 4;
  cfg.out_channels = 4;
  cfg.neighbors = {NeighborRule::kKnn, 4, 0.0};
  cfg.norm = false;
  CicParams params = CicParams::make("b", cfg, rng);
  // zero conv: main path contributes nothing, residual remains
  for (auto& layer : params.conv.layers) {
    for (int64_t i = 0; i < layer.w.size(); ++i) layer.w[i] = 0.0;
    for (int64_t i = 0; i < layer.b.size(); ++i) layer.b[i] = 0.0;
  }
  Tensor feats = oracle::random_tensor({4, 18}, rng);
  Graph g;
  CicOutput out = cic_block(g, cloud.coords, g.input(feats), params);
  Tensor expect = feats;
  for (int64_t i = 0; i < expect.size(); ++i)
    if (expect[i] < 0.0) expect[i] *= kLeakySlope;  // post-residual activation
  CHECK(oracle::rel_diff(g.tape.val(out.feats), expect) <= 1e-12);
}

TEST_CASE("cic block output shapes across configurations") {
  Rng rng(67);
  PointCloud cloud = random_cloud(32, 68);
  struct Case {
    int in, out;
    std::optional<int> ds;
    bool curves;
  };
  for (const Case& c : {Case{4, 8, std::nullopt, false}, Case{4, 8, 16, false},
                        Case{8, 8, 16, true}, Case{4, 6, std::nullopt, true}}) {
    CicConfig cfg;
    cfg.in_channels = c.in;
    cfg.out_channels = c.out;
    cfg.downsample = c.ds;
    cfg.neighbors = {NeighborRule::kKnn, 4, 0.0};
    if (c.curves) cfg.curves = WalkConfig{2, 3, M_PI / 2, true, true};
    CicParams params = CicParams::make("b", cfg, rng);
    Tensor feats = oracle::random_tensor({c.in, 32}, rng);
    Graph g;
    CicOutput out = cic_block(g, cloud.coords, g.input(feats), params);
    const int expect_P = c.ds ? *c.ds : 32;
    CHECK(g.tape.val(out.feats).rows() == c.out);
    CHECK(g.tape.val(out.feats).cols() == expect_P);
    CHECK(out.coords.rows() == expect_P);
    if (c.ds) CHECK(static_cast<int>(out.sample_idx.size()) == *c.ds);
  }
}

TEST_CASE("cic block with ball-query neighbors runs") {
  Rng rng(69);
  PointCloud cloud = random_cloud(24, 70);
  CicConfig cfg;
  cfg.in_channels = 3;
  cfg.out_channels = 5;
  cfg.neighbors = {NeighborRule::kBall, 6, 0.9};
  CicParams params = CicParams::make("b", cfg, rng);
  Tensor feats = oracle::random_tensor({3, 24}, rng);
  Graph g;
  CicOutput out = cic_block(g, cloud.coords, g.input(feats), params);
  CHECK(g.tape.val(out.feats).rows() == 5);
}

TEST_CASE("channel variance map") {
  Tensor constant = Tensor::full({3, 10}, 4.0);
  ChannelVariance cv = channel_variance_map(constant);
  for (double v : cv.per_channel_variance) CHECK(v == 0.0);
  for (double m : cv.per_point_mean) CHECK(m == doctest::Approx(4.0));

  // one-hot channel: variance p(1-p) with p = 1/10
  Tensor onehot = Tensor::zeros({2, 10});
  onehot.at(0, 3) = 1.0;
  cv = channel_variance_map(onehot);
  CHECK(cv.per_channel_variance[0] == doctest::Approx(0.1 * 0.9));
  CHECK(cv.per_channel_variance[1] == 0.0);

  Rng rng(71);
  Tensor x = oracle::random_tensor({4, 25}, rng);
  cv = channel_variance_map(x);
  for (int i = 0; i < 4; ++i) {
    double mean = 0.0, var = 0.0;
    for (int j = 0; j < 25; ++j) mean += x.at(i, j) / 25;
    for (int j = 0; j < 25; ++j) var += (x.at(i, j) - mean) * (x.at(i, j) - mean) / 25;
    CHECK(cv.per_channel_variance[static_cast<size_t>(i)] == doctest::Approx(var));
  }

  const std::string csv = channel_variance_csv(oracle::random_tensor({25, 3}, rng), x);
  CHECK(csv.rfind("point_id,x,y,z,channel_mean", 0) == 0);
}

TEST_CASE("two-block cic stack end-to-end gradient") {
  struct S {
    PointCloud cloud;
    Tensor feats;
    CicParams b1, b2;
  };
  auto s = std::make_shared<S>();
  Rng rng(72);
  s->cloud = random_cloud(24, 73);
  s->feats = oracle::random_tensor({3, 24}, rng);
  CicConfig c1;
  c1.in_channels = 3;
  c1.out_channels = 6;
  c1.neighbors = {NeighborRule::kKnn, 4, 0.0};
  c1.curves = WalkConfig{2, 3, M_PI / 2, true, true};
  c1.norm = false;
  CicConfig c2;
  c2.in_channels = 6;
  c2.out_channels = 6;
  c2.downsample = 12;
  c2.neighbors = {NeighborRule::kKnn, 4, 0.0};
  c2.norm = false;
  s->b1 = CicParams::make("b1", c1, rng);
  s->b2 = CicParams::make("b2", c2, rng);
  GradCheckTarget target{"cic2", {&s->feats}, [s](Graph& g) {
                           CicOutput o1 = cic_block(g, s->cloud.coords,
                                                    g.param(s->feats), s->b1);
                           CicOutput o2 = cic_block(g, o1.coords, o1.feats, s->b2);
                           return mean_all(o2.feats);
                         }};
  CHECK(grad_check(target, 1e-5, 24).max_rel_err < 1e-4);
}
