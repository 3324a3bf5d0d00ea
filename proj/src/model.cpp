#include "curvewalk/model.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

namespace curvewalk {

CurveNetConfig CurveNetConfig::desk(TaskKind task, int out, int k, int points,
                                    bool with_curves) {
  CurveNetConfig c;
  c.stem_k = k;
  c.stem_channels = 32;
  CicConfig b1;
  b1.in_channels = 32;
  b1.out_channels = 64;
  b1.neighbors = {NeighborRule::kKnn, k, 0.0};
  if (with_curves) b1.curves = WalkConfig{16, 16, M_PI / 2.0, true, true};
  CicConfig b2;
  b2.in_channels = 64;
  b2.out_channels = 128;
  b2.downsample = std::max(8, points / 2);
  b2.neighbors = {NeighborRule::kKnn, k, 0.0};
  c.blocks = {b1, b2};
  c.head = {task, out, 128, 0.5};
  c.decoder_channels = 64;
  c.validate();
  return c;
}

CurveNetConfig CurveNetConfig::full(TaskKind task, int out, int k, int points) {
  CurveNetConfig c;
  c.stem_k = k;
  c.stem_channels = 64;
  const int widths[4] = {64, 128, 256, 512};
  int in = 64;
  for (int group = 0; group < 4; ++group) {
    for (int b = 0; b < 2; ++b) {
      CicConfig blk;
      blk.in_channels = in;
      blk.out_channels = widths[group];
      blk.neighbors = {NeighborRule::kKnn, k, 0.0};
      if (group >= 1 && b == 0)
        blk.downsample = std::max(8, points >> group);
      if (group < 2) blk.curves = WalkConfig{16, 16, M_PI / 2.0, true, true};
      c.blocks.push_back(blk);
      in = widths[group];
    }
  }
  c.head = {task, out, 256, 0.5};
  c.decoder_channels = 128;
  c.validate();
  return c;
}

void CurveNetConfig::validate() const {
  CW_CHECK(!blocks.empty(), "need at least one block");
  CW_CHECK(blocks.front().in_channels == stem_channels,
           "first block must take the stem width");
  for (size_t i = 0; i + 1 < blocks.size(); ++i)
    CW_CHECK(blocks[i].out_channels == blocks[i + 1].in_channels,
             "block " << i << " output does not chain into block " << i + 1);
  CW_CHECK(head.out >= 1, "head output dims");
}

CurveNet::CurveNet(CurveNetConfig config, uint64_t seed)
    : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  stem_ = MlpParams::make("stem", {6, config_.stem_channels}, Act::kNone,
                          Norm::kNone, rng, Act::kLeakyRelu, Norm::kBatch);
  blocks_.reserve(config_.blocks.size());
  for (size_t i = 0; i < config_.blocks.size(); ++i)
    blocks_.push_back(CicParams::make("cic" + std::to_string(i),
                                      config_.blocks[i], rng));
  // register only once every owner has its final address
  stem_.register_params(store_);
  for (const CicParams& b : blocks_) b.register_params(store_);
  const int c_last = config_.blocks.back().out_channels;
  if (config_.head.task == TaskKind::kClassify) {
    head_fc1_ = MlpParams::make("head.fc1", {2 * c_last, config_.head.hidden},
                                Act::kNone, Norm::kNone, rng, Act::kRelu,
                                Norm::kNone);
    head_fc2_ = MlpParams::make("head.fc2", {config_.head.hidden,
                                             config_.head.out},
                                Act::kNone, Norm::kNone, rng);
    // damp initial logits so the first epochs stay in a trainable regime
    for (int64_t i = 0; i < head_fc2_.layers[0].w.size(); ++i)
      head_fc2_.layers[0].w[i] = quantize_f32(head_fc2_.layers[0].w[i] * 0.1);
    head_fc1_.register_params(store_);
    head_fc2_.register_params(store_);
  } else {
    const int skip = config_.blocks.size() >= 2
                         ? config_.blocks[config_.blocks.size() - 2].out_channels
                         : config_.stem_channels;
    decoder_ = MlpParams::make("decoder",
                               {skip + c_last, config_.decoder_channels},
                               Act::kNone, Norm::kNone, rng, Act::kRelu,
                               Norm::kBatch);
    point_head_ = MlpParams::make(
        "head.point", {config_.decoder_channels, config_.decoder_channels / 2,
                       config_.head.out},
        Act::kRelu, Norm::kNone, rng);
    decoder_->register_params(store_);
    point_head_->register_params(store_);
  }
}

Var CurveNet::run_backbone(Graph& g, const PointCloud& cloud,
                           std::vector<LevelOutput>& levels) const {
  const int P = cloud.points();
  Tensor coords_cm({3, P});  // channel-major copy for the feature path
  for (int i = 0; i < P; ++i)
    for (int d = 0; d < 3; ++d) coords_cm.at(d, i) = cloud.coords.at(i, d);
  Var f = g.input(coords_cm);
  const NeighborGraph stem_graph = knn(cloud, config_.stem_k);
  f = lpfa(g, f, stem_graph, stem_);
  levels.push_back({cloud.coords, f, Var{}, Var{}, std::nullopt});

  Tensor coords = cloud.coords;
  for (const CicParams& blk : blocks_) {
    CicOutput out = cic_block(g, coords, f, blk);
    coords = out.coords;
    f = out.feats;
    levels.push_back({coords, f, out.conv_feats, out.ca_feats,
                      std::move(out.curves)});
  }
  return f;
}

CurveNet::ForwardTrace CurveNet::forward_classify(Graph& g,
                                                  const PointCloud& cloud) const {
  CW_CHECK(config_.head.task == TaskKind::kClassify, "not a classify model");
  ForwardTrace trace;
  Var f = run_backbone(g, cloud, trace.levels);
  const int P = g.tape.val(f).cols();
  Var pooled = concat_rows(pool_groups(f, P, PoolKind::kMax),
                           pool_groups(f, P, PoolKind::kAvg));  // 2C x 1
  Var h = shared_mlp(g, pooled, head_fc1_);
  static Rng fallback_rng(0);
  Rng& rng = g.rng ? *g.rng : fallback_rng;
  h = dropout(h, config_.head.dropout_p, g.training, rng);
  trace.output = shared_mlp(g, h, head_fc2_);
  return trace;
}

CurveNet::ForwardTrace CurveNet::forward_pointwise(Graph& g,
                                                   const PointCloud& cloud) const {
  CW_CHECK(config_.head.task == TaskKind::kNormals, "not a pointwise model");
  ForwardTrace trace;
  Var deep = run_backbone(g, cloud, trace.levels);
  // upsample the deepest resolution back onto the previous one and fuse
  const LevelOutput& skip_level = trace.levels[trace.levels.size() - 2];
  const LevelOutput& deep_level = trace.levels.back();
  Var fused;
  if (deep_level.coords.rows() == skip_level.coords.rows()) {
    fused = concat_rows(skip_level.feats, deep);
  } else {
    const InterpWeights iw =
        interpolate_weights(deep_level.coords, skip_level.coords);
    Var up = weighted_gather_cols(deep, iw.idx, iw.w, iw.nn);
    fused = concat_rows(skip_level.feats, up);
  }
  Var h = shared_mlp(g, fused, *decoder_);
  Var out = shared_mlp(g, h, *point_head_);
  trace.output = normalize_cols(out);
  return trace;
}

CurveNet::ForwardTrace CurveNet::forward(Graph& g, const PointCloud& cloud) const {
  return config_.head.task == TaskKind::kClassify ? forward_classify(g, cloud)
                                                  : forward_pointwise(g, cloud);
}

double cosine_schedule(int step, int total, double lr0, double lr_floor) {
  CW_CHECK(total >= 1, "empty schedule");
  const double t = std::min(1.0, static_cast<double>(step) / total);
  return lr_floor + 0.5 * (lr0 - lr_floor) * (1.0 + std::cos(M_PI * t));
}

double step_schedule(int step, int total, double lr0) {
  double lr = lr0;
  if (step >= static_cast<int>(0.7 * total)) lr *= 0.1;
  if (step >= static_cast<int>(0.9 * total)) lr *= 0.1;
  return lr;
}

namespace {

struct CloudResult {
  double loss = 0.0;
  bool correct = false;
  std::vector<Tensor> grads;
};

CloudResult process_cloud(const CurveNet& model, const PointCloud& raw,
                          const TrainConfig& cfg, int epoch, int cloud_id) {
  PointCloud cloud = raw;
  if (cfg.augment) {
    Rng aug_rng(derive_seed(cfg.seed, 0xA06u + static_cast<uint64_t>(epoch),
                            static_cast<uint64_t>(cloud_id)));
    cloud = augment(std::move(cloud), aug_rng);
  }
  Graph g;
  g.training = true;
  Rng drop_rng(derive_seed(cfg.seed, 0xD0Fu + static_cast<uint64_t>(epoch),
                           static_cast<uint64_t>(cloud_id)));
  g.rng = &drop_rng;

  CloudResult res;
  Var loss;
  try {
    if (model.config().head.task == TaskKind::kClassify) {
      CW_CHECK(cloud.label >= 0, "cloud without class label");
      auto trace = model.forward_classify(g, cloud);
      loss = cross_entropy(trace.output, {cloud.label});
      const Tensor& logits = g.tape.val(trace.output);
      int best = 0;
      for (int i = 1; i < logits.rows(); ++i)
        if (logits.at(i, 0) > logits.at(best, 0)) best = i;
      res.correct = best == cloud.label;
    } else {
      CW_CHECK(cloud.has_normals(), "cloud without normals");
      auto trace = model.forward_pointwise(g, cloud);
      Tensor target({3, cloud.points()});
      for (int i = 0; i < cloud.points(); ++i)
        for (int d = 0; d < 3; ++d) target.at(d, i) = cloud.normals.at(i, d);
      loss = cosine_error(trace.output, target);
    }
  } catch (const std::invalid_argument&) {
    // blown-up weights trip op-level guards (NaN walk logits) before the
    // loss itself turns non-finite; classify that as divergence
    for (const auto& [name, t] : model.params().items())
      for (int64_t i = 0; i < t->size(); ++i)
        if (!std::isfinite((*t)[i]))
          throw DivergenceError("non-finite parameter " + name + " at epoch " +
                                std::to_string(epoch));
    throw;
  }
  res.loss = g.tape.val(loss)[0];
  if (!std::isfinite(res.loss))
    throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) +
                          ", cloud " + std::to_string(cloud_id));
  g.tape.backward(loss);
  const auto& items = model.params().items();
  res.grads.reserve(items.size());
  for (const auto& [name, t] : items) res.grads.push_back(g.grad_of(*t));
  return res;
}

void run_sharded(int jobs, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || jobs <= 1) {
    for (int i = 0; i < jobs; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= jobs) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const int nthreads = std::min(threads, jobs);
  pool.reserve(static_cast<size_t>(nthreads));
  for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

BatchResult process_batch(const CurveNet& model,
                          const std::vector<const PointCloud*>& clouds,
                          const TrainConfig& cfg, int epoch,
                          const std::vector<int>& cloud_ids) {
  const int B = static_cast<int>(clouds.size());
  CW_CHECK(B >= 1 && cloud_ids.size() == clouds.size(), "batch layout");
  std::vector<CloudResult> results(static_cast<size_t>(B));
  run_sharded(B, cfg.threads, [&](int i) {
    results[static_cast<size_t>(i)] =
        process_cloud(model, *clouds[static_cast<size_t>(i)], cfg, epoch,
                      cloud_ids[static_cast<size_t>(i)]);
  });

  BatchResult out;
  const auto& items = model.params().items();
  out.grads.reserve(items.size());
  for (const auto& [name, t] : items) out.grads.push_back(Tensor::zeros(t->shape()));
  // fixed accumulation order: cloud 0, 1, ... regardless of thread count
  for (const CloudResult& r : results) {
    out.loss += r.loss / B;
    out.correct += r.correct ? 1 : 0;
    for (size_t p = 0; p < out.grads.size(); ++p)
      for (int64_t i = 0; i < out.grads[p].size(); ++i)
        out.grads[p][i] += r.grads[p][i] / B;
  }
  return out;
}

namespace {

struct SgdState {
  std::vector<Tensor> velocity;
};

void sgd_step(ParamStore& store, SgdState& state,
              const std::vector<Tensor>& grads, const TrainConfig& cfg,
              double lr) {
  const auto& items = store.items();
  if (state.velocity.empty())
    for (const auto& [name, t] : items)
      state.velocity.push_back(Tensor::zeros(t->shape()));
  double scale = 1.0;
  if (cfg.clip_norm > 0.0) {
    double sq = 0.0;
    for (const Tensor& g : grads)
      for (int64_t i = 0; i < g.size(); ++i) sq += g[i] * g[i];
    const double norm = std::sqrt(sq);
    if (norm > cfg.clip_norm) scale = cfg.clip_norm / norm;
  }
  for (size_t p = 0; p < items.size(); ++p) {
    Tensor& w = *items[p].second;
    Tensor& v = state.velocity[p];
    for (int64_t i = 0; i < w.size(); ++i) {
      double g = grads[p][i] * scale;
      if (cfg.weight_decay > 0.0) g += cfg.weight_decay * w[i];
      v[i] = cfg.momentum * v[i] + g;
      w[i] = quantize_f32(w[i] - lr * v[i]);
    }
  }
}

double validate_metric(const CurveNet& model, const Dataset& val,
                       const TrainConfig& cfg) {
  return model.config().head.task == TaskKind::kClassify
             ? evaluate(model, val, 1, cfg.seed, cfg.threads)
             : evaluate_normals(model, val, cfg.threads);
}

}  // namespace

std::vector<EpochMetrics> train(CurveNet& model, const Dataset& train_set,
                                const Dataset& val_set, const TrainConfig& cfg,
                                const EpochCallback& on_epoch) {
  CW_CHECK(cfg.lr >= 0.0, "learning rate must not be negative");
  CW_CHECK(cfg.epochs >= 0 && cfg.batch >= 1, "bad train config");
  const bool classify = model.config().head.task == TaskKind::kClassify;
  const int N = train_set.size();
  SgdState sgd;
  std::vector<EpochMetrics> history;
  double best = classify ? -1.0 : std::numeric_limits<double>::infinity();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.schedule == Schedule::kCosine
                          ? cosine_schedule(epoch, cfg.epochs, cfg.lr, cfg.lr_floor)
                          : step_schedule(epoch, cfg.epochs, cfg.lr);
    std::vector<int> order(static_cast<size_t>(N));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(cfg.seed, 0x5Fu, static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    int correct = 0, batches = 0;
    for (int b0 = 0; b0 < N; b0 += cfg.batch) {
      const int b1 = std::min(N, b0 + cfg.batch);
      std::vector<const PointCloud*> clouds;
      std::vector<int> ids;
      for (int i = b0; i < b1; ++i) {
        clouds.push_back(&train_set.clouds[static_cast<size_t>(order[static_cast<size_t>(i)])]);
        ids.push_back(order[static_cast<size_t>(i)]);
      }
      BatchResult res = process_batch(model, clouds, cfg, epoch, ids);
      sgd_step(model.params(), sgd, res.grads, cfg, lr);
      loss_sum += res.loss;
      correct += res.correct;
      ++batches;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.train_loss = batches > 0 ? loss_sum / batches : 0.0;
    m.train_acc = classify && N > 0 ? static_cast<double>(correct) / N : 0.0;
    m.val_metric = validate_metric(model, val_set, cfg);
    const bool is_best = classify ? m.val_metric > best : m.val_metric < best;
    if (is_best) best = m.val_metric;
    history.push_back(m);
    if (on_epoch) on_epoch(m, is_best);
  }
  return history;
}

double evaluate(const CurveNet& model, const Dataset& ds, int votes,
                uint64_t seed, int threads) {
  CW_CHECK(votes >= 1, "votes >= 1");
  CW_CHECK(model.config().head.task == TaskKind::kClassify,
           "evaluate() is for classification");
  const int N = ds.size();
  std::vector<int> correct(static_cast<size_t>(N), 0);
  run_sharded(N, threads, [&](int ci) {
    const PointCloud& cloud = ds.clouds[static_cast<size_t>(ci)];
    const int K = model.config().head.out;
    std::vector<double> avg(static_cast<size_t>(K), 0.0);
    for (int v = 0; v < votes; ++v) {
      PointCloud input = cloud;
      if (v > 0) {
        // vote augmentation: anisotropic re-scaling only
        Rng rng(derive_seed(seed, 0x707Eu + static_cast<uint64_t>(v),
                            static_cast<uint64_t>(ci)));
        AugmentParams p;
        for (double& s : p.scale) s = rng.uniform(0.66, 1.5);
        input = apply_augment(std::move(input), p);
      }
      Graph g;
      auto trace = model.forward_classify(g, input);
      const Tensor& logits = g.tape.val(trace.output);
      double mx = logits.at(0, 0);
      for (int i = 1; i < K; ++i) mx = std::max(mx, logits.at(i, 0));
      double sum = 0.0;
      std::vector<double> soft(static_cast<size_t>(K));
      for (int i = 0; i < K; ++i) {
        soft[static_cast<size_t>(i)] = std::exp(logits.at(i, 0) - mx);
        sum += soft[static_cast<size_t>(i)];
      }
      for (int i = 0; i < K; ++i) avg[static_cast<size_t>(i)] += soft[static_cast<size_t>(i)] / sum;
    }
    int best = 0;
    for (int i = 1; i < K; ++i)
      if (avg[static_cast<size_t>(i)] > avg[static_cast<size_t>(best)]) best = i;
    correct[static_cast<size_t>(ci)] = best == cloud.label ? 1 : 0;
  });
  int total = 0;
  for (int c : correct) total += c;
  return N > 0 ? static_cast<double>(total) / N : 0.0;
}

double evaluate_normals(const CurveNet& model, const Dataset& ds, int threads) {
  CW_CHECK(model.config().head.task == TaskKind::kNormals,
           "evaluate_normals() is for the pointwise head");
  const int N = ds.size();
  std::vector<double> errs(static_cast<size_t>(N), 0.0);
  run_sharded(N, threads, [&](int ci) {
    const PointCloud& cloud = ds.clouds[static_cast<size_t>(ci)];
    Graph g;
    auto trace = model.forward_pointwise(g, cloud);
    Tensor target({3, cloud.points()});
    for (int i = 0; i < cloud.points(); ++i)
      for (int d = 0; d < 3; ++d) target.at(d, i) = cloud.normals.at(i, d);
    Var err = cosine_error(trace.output, target);
    errs[static_cast<size_t>(ci)] = g.tape.val(err)[0];
  });
  double sum = 0.0;
  for (double e : errs) sum += e;  // fixed order
  return N > 0 ? sum / N : 0.0;
}

}  // namespace curvewalk
