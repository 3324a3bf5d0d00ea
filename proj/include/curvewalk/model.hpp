#ifndef CURVEWALK_MODEL_HPP_
#define CURVEWALK_MODEL_HPP_

#include <functional>
#include <memory>

#include "curvewalk/aggregate.hpp"
#include "curvewalk/checkpoint.hpp"
#include "curvewalk/dataio.hpp"

namespace curvewalk {

enum class TaskKind { kClassify, kNormals };
enum class Schedule { kCosine, kStep };

struct HeadSpec {
  TaskKind task = TaskKind::kClassify;
  int out = 0;          // classes, or per-point output dims
  int hidden = 128;
  double dropout_p = 0.5;
};

struct CurveNetConfig {
  int stem_k = 8;
  int stem_channels = 32;
  std::vector<CicConfig> blocks;
  HeadSpec head;
  int decoder_channels = 64;  // pointwise head only

  // 2 groups x 1 CIC (64, 128 channels), curves n=16 l=16 in group 1.
  static CurveNetConfig desk(TaskKind task, int out, int k = 8, int points = 256,
                             bool with_curves = true);
  // 8 CIC blocks in 4 groups of 2, channels 64..512, curves in groups 1-2.
  static CurveNetConfig full(TaskKind task, int out, int k = 20,
                             int points = 1024);
  void validate() const;
};

// Parameter tensors are registered by address; the model must stay put.
class CurveNet {
 public:
  CurveNet(CurveNetConfig config, uint64_t seed);
  CurveNet(const CurveNet&) = delete;
  CurveNet& operator=(const CurveNet&) = delete;

  const CurveNetConfig& config() const { return config_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  int64_t param_count() const { return store_.element_count(); }
  const CicParams& block_params(int i) const {
    return blocks_[static_cast<size_t>(i)];
  }

  struct LevelOutput {
    Tensor coords;
    Var feats;
    Var walk_feats;  // post-conv features curve walks read (blocks only)
    Var ca_feats;    // curve-aggregation output, when the block ran curves
    std::optional<CurveSet> curves;
  };
  struct ForwardTrace {
    std::vector<LevelOutput> levels;  // stem, then one per block
    Var output;                       // head output
  };

  // classes x 1 logits.
  ForwardTrace forward_classify(Graph& g, const PointCloud& cloud) const;
  // out x P unit columns (normals head).
  ForwardTrace forward_pointwise(Graph& g, const PointCloud& cloud) const;
  ForwardTrace forward(Graph& g, const PointCloud& cloud) const;

  void save(const std::string& path) const { save_checkpoint(path, store_); }
  void load(const std::string& path) { load_checkpoint(path, store_); }

 private:
  Var run_backbone(Graph& g, const PointCloud& cloud,
                   std::vector<LevelOutput>& levels) const;

  CurveNetConfig config_;
  MlpParams stem_;
  std::vector<CicParams> blocks_;
  MlpParams head_fc1_, head_fc2_;
  std::optional<MlpParams> decoder_, point_head_;
  ParamStore store_;
};

struct TrainConfig {
  int epochs = 30;
  int batch = 16;
  double lr = 0.02;
  double lr_floor = 0.001;
  Schedule schedule = Schedule::kCosine;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double clip_norm = 5.0;  // global gradient norm cap, 0 disables
  uint64_t seed = 1;
  int threads = 1;
  bool augment = true;
};

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;  // fraction correct; 0 for the normals task
  double val_metric = 0.0; // accuracy (higher better) or cosine error (lower)
};

double cosine_schedule(int step, int total, double lr0, double lr_floor);
// x0.1 at 70% and 90% of the run.
double step_schedule(int step, int total, double lr0);

// Loss + accuracy + parameter gradients (aligned with store items, already
// averaged over the batch) for one batch of clouds.
struct BatchResult {
  double loss = 0.0;
  int correct = 0;
  std::vector<Tensor> grads;
};
BatchResult process_batch(const CurveNet& model,
                          const std::vector<const PointCloud*>& clouds,
                          const TrainConfig& cfg, int epoch,
                          const std::vector<int>& cloud_ids);

using EpochCallback = std::function<void(const EpochMetrics&, bool is_best)>;

// SGD with momentum over shuffled batches; shards of a batch run on
// cfg.threads workers, per-cloud gradients are summed in cloud order so the
// trajectory does not depend on the thread count. Aborts with
// DivergenceError on a non-finite loss.
std::vector<EpochMetrics> train(CurveNet& model, const Dataset& train_set,
                                const Dataset& val_set, const TrainConfig& cfg,
                                const EpochCallback& on_epoch = nullptr);

// Classification accuracy; votes > 1 averages softmax over randomly
// re-scaled copies of each input.
double evaluate(const CurveNet& model, const Dataset& ds, int votes = 1,
                uint64_t seed = 1, int threads = 1);
// Mean cosine-distance error of the normals head.
double evaluate_normals(const CurveNet& model, const Dataset& ds,
                        int threads = 1);

}  // namespace curvewalk

#endif  // CURVEWALK_MODEL_HPP_
