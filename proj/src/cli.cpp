#include "curvewalk/cli.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "curvewalk/model.hpp"
#include "curvewalk/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace curvewalk {

namespace {

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string git_describe() {
  FILE* pipe = popen("git describe --always --dirty 2>/dev/null", "r");
  if (!pipe) return "unknown";
  char buf[128] = {0};
  std::string out;
  while (fgets(buf, sizeof buf, pipe)) out += buf;
  pclose(pipe);
  while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
  return out.empty() ? "unknown" : out;
}

int env_threads() {
  const char* v = std::getenv("CURVEWALK_THREADS");
  if (!v) return 1;
  const int n = std::atoi(v);
  return n >= 1 ? n : 1;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  CW_CHECK(os.good(), "cannot write " << path);
  os << content;
  CW_CHECK(os.good(), "write failed for " << path);
}

// ---- shared options ----------------------------------------------------------

struct DataOpts {
  std::string data = "synth";
  int classes = 4;
  int points = 256;
  int train_per_class = 50;
  int test_per_class = 20;
};

struct ModelOpts {
  std::string arch = "desk";
  int k = 20;  // classification default; toy runs typically pass --k 8
  std::string curves = "16,16@1";  // n,l@groups or "none"
  double theta_bar_deg = 90.0;
};

struct CurveSpec {
  bool enabled = false;
  int n = 0, l = 0;
  std::vector<int> groups;
};

CurveSpec parse_curve_spec(const std::string& spec) {
  CurveSpec out;
  if (spec == "none" || spec.empty()) return out;
  const auto at = spec.find('@');
  CW_CHECK(at != std::string::npos, "--curves wants n,l@groups or 'none'");
  const auto comma = spec.find(',');
  CW_CHECK(comma != std::string::npos && comma < at, "--curves wants n,l@groups");
  out.n = std::stoi(spec.substr(0, comma));
  out.l = std::stoi(spec.substr(comma + 1, at - comma - 1));
  CW_CHECK(out.n >= 1 && out.l >= 1, "--curves n and l must be positive");
  std::string rest = spec.substr(at + 1);
  size_t pos = 0;
  while (pos < rest.size()) {
    size_t next = rest.find(',', pos);
    if (next == std::string::npos) next = rest.size();
    out.groups.push_back(std::stoi(rest.substr(pos, next - pos)));
    pos = next + 1;
  }
  CW_CHECK(!out.groups.empty(), "--curves lists no groups");
  out.enabled = true;
  return out;
}

CurveNetConfig make_config(const ModelOpts& mo, TaskKind task, int out_dims,
                           int points) {
  CurveNetConfig cfg = mo.arch == "full"
                           ? CurveNetConfig::full(task, out_dims, mo.k, points)
                           : CurveNetConfig::desk(task, out_dims, mo.k, points,
                                                  false);
  CW_CHECK(mo.arch == "full" || mo.arch == "desk", "--arch must be desk|full");
  for (CicConfig& b : cfg.blocks) b.curves.reset();
  const CurveSpec spec = parse_curve_spec(mo.curves);
  if (spec.enabled) {
    const int blocks_per_group = mo.arch == "full" ? 2 : 1;
    const int groups = static_cast<int>(cfg.blocks.size()) / blocks_per_group;
    const double theta = mo.theta_bar_deg * M_PI / 180.0;
    for (int g : spec.groups) {
      CW_CHECK(1 <= g && g <= groups, "--curves group " << g << " out of range");
      for (int b = 0; b < blocks_per_group; ++b)
        cfg.blocks[static_cast<size_t>((g - 1) * blocks_per_group + b)].curves =
            WalkConfig{spec.n, spec.l, theta, true, true};
    }
  }
  return cfg;
}

Dataset make_dataset(const DataOpts& d, const std::string& split,
                     uint64_t seed) {
  if (d.data == "synth") {
    CW_CHECK(1 <= d.classes && d.classes <= 4,
             "synth data provides up to 4 classes");
    std::vector<ShapeKind> kinds{ShapeKind::kSphere, ShapeKind::kCube,
                                 ShapeKind::kTorus, ShapeKind::kCylinder};
    kinds.resize(static_cast<size_t>(d.classes));
    const int per = split == "train" ? d.train_per_class : d.test_per_class;
    Rng rng(derive_seed(seed, split == "train" ? 0x7121u : 0x7e57u));
    Dataset ds = synth_shapes(kinds, per, d.points, rng);
    ds.split = split;
    return ds;
  }
  return load_dataset(d.data, "", d.points, split);
}

json data_json(const DataOpts& d) {
  return {{"data", d.data},
          {"classes", d.classes},
          {"points", d.points},
          {"train_per_class", d.train_per_class},
          {"test_per_class", d.test_per_class}};
}

json model_json(const ModelOpts& m, const std::string& task) {
  return {{"arch", m.arch},
          {"k", m.k},
          {"curves", m.curves},
          {"theta_bar_deg", m.theta_bar_deg},
          {"task", task}};
}

void from_manifest(const json& j, DataOpts& d, ModelOpts& m, std::string& task) {
  const json& jd = j.at("data");
  d.data = jd.at("data");
  d.classes = jd.at("classes");
  d.points = jd.at("points");
  d.train_per_class = jd.at("train_per_class");
  d.test_per_class = jd.at("test_per_class");
  const json& jm = j.at("model");
  m.arch = jm.at("arch");
  m.k = jm.at("k");
  m.curves = jm.at("curves");
  m.theta_bar_deg = jm.at("theta_bar_deg");
  task = jm.at("task");
}

// ---- train --------------------------------------------------------------------

struct TrainOpts {
  DataOpts data;
  ModelOpts model;
  TrainConfig train;
  std::string task = "classify";
  std::string schedule = "cosine";
  std::string out = "run";
};

int cmd_train(const TrainOpts& opts_in) {
  TrainOpts opts = opts_in;
  opts.train.schedule =
      opts.schedule == "step" ? Schedule::kStep : Schedule::kCosine;
  CW_CHECK(opts.schedule == "cosine" || opts.schedule == "step",
           "--schedule must be cosine|step");
  CW_CHECK(opts.task == "classify" || opts.task == "normals",
           "--task must be classify|normals");
  const TaskKind task =
      opts.task == "classify" ? TaskKind::kClassify : TaskKind::kNormals;
  const int out_dims = task == TaskKind::kClassify ? opts.data.classes : 3;
  if (task == TaskKind::kNormals)
    CW_CHECK(opts.data.data == "synth",
             "normals training needs analytic normals (synth data)");

  fs::create_directories(opts.out);
  const fs::path out_dir(opts.out);
  const fs::path manifest_path = out_dir / "manifest.json";
  const fs::path metrics_path = out_dir / "metrics.jsonl";
  const fs::path best_path = out_dir / "best.cwt";
  const fs::path last_path = out_dir / "last.cwt";

  CurveNetConfig cfg = make_config(opts.model, task, out_dims, opts.data.points);
  CurveNet model(cfg, opts.train.seed);

  json manifest = {
      {"command", "train"},
      {"seed", opts.train.seed},
      {"git", git_describe()},
      {"data", data_json(opts.data)},
      {"model", model_json(opts.model, opts.task)},
      {"train",
       {{"epochs", opts.train.epochs},
        {"batch", opts.train.batch},
        {"lr", opts.train.lr},
        {"lr_floor", opts.train.lr_floor},
        {"schedule", opts.schedule},
        {"momentum", opts.train.momentum},
        {"weight_decay", opts.train.weight_decay},
        {"threads", opts.train.threads},
        {"augment", opts.train.augment}}},
      {"param_count", model.param_count()},
      {"started_utc", utc_now()},
      {"finished_utc", nullptr},
      {"artifacts",
       {{"metrics", metrics_path.string()},
        {"best", best_path.string()},
        {"last", last_path.string()}}}};
  write_file(manifest_path, manifest.dump(2) + "\n");

  model.save(last_path.string());  // initial checkpoint
  std::ofstream metrics(metrics_path, std::ios::trunc);
  CW_CHECK(metrics.good(), "cannot write " << metrics_path);

  Dataset train_set = make_dataset(opts.data, "train", opts.train.seed);
  Dataset val_set = make_dataset(opts.data, "test", opts.train.seed);

  double best_val = task == TaskKind::kClassify
                        ? -1.0
                        : std::numeric_limits<double>::infinity();
  auto on_epoch = [&](const EpochMetrics& m, bool is_best) {
    json line = {{"epoch", m.epoch},
                 {"lr", m.lr},
                 {"train_loss", m.train_loss},
                 {"train_acc", m.train_acc},
                 {"val_metric", m.val_metric}};
    metrics << line.dump() << "\n";
    metrics.flush();
    model.save(last_path.string());
    if (is_best) {
      best_val = m.val_metric;
      model.save(best_path.string());
    }
    std::cerr << "epoch " << m.epoch << " lr " << m.lr << " loss "
              << m.train_loss << " acc " << m.train_acc << " val "
              << m.val_metric << "\n";
  };

  try {
    train(model, train_set, val_set, opts.train, on_epoch);
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    manifest["finished_utc"] = utc_now();
    manifest["diverged"] = true;
    write_file(manifest_path, manifest.dump(2) + "\n");
    return 3;
  }

  manifest["finished_utc"] = utc_now();
  if (opts.train.epochs > 0) manifest["best_val"] = best_val;
  write_file(manifest_path, manifest.dump(2) + "\n");
  return 0;
}

// ---- eval ---------------------------------------------------------------------

struct EvalOpts {
  std::string checkpoint;
  std::string manifest;
  int votes = 1;
  uint64_t seed = 1;
  int threads = 1;
};

int cmd_eval(const EvalOpts& opts) {
  CW_CHECK(fs::exists(opts.checkpoint), "checkpoint " << opts.checkpoint
                                                      << " not found");
  fs::path manifest_path = opts.manifest.empty()
                               ? fs::path(opts.checkpoint).parent_path() /
                                     "manifest.json"
                               : fs::path(opts.manifest);
  CW_CHECK(fs::exists(manifest_path), "manifest " << manifest_path
                                                  << " not found");
  std::ifstream is(manifest_path);
  json manifest = json::parse(is);
  DataOpts data;
  ModelOpts mo;
  std::string task_name;
  from_manifest(manifest, data, mo, task_name);
  const TaskKind task =
      task_name == "classify" ? TaskKind::kClassify : TaskKind::kNormals;
  const int out_dims = task == TaskKind::kClassify ? data.classes : 3;
  const uint64_t train_seed = manifest.at("seed");

  CurveNet model(make_config(mo, task, out_dims, data.points), train_seed);
  model.load(opts.checkpoint);
  Dataset test = make_dataset(data, "test", train_seed);

  double metric;
  if (task == TaskKind::kClassify) {
    metric = evaluate(model, test, opts.votes, opts.seed, opts.threads);
  } else {
    metric = evaluate_normals(model, test, opts.threads);
  }
  json out = {{"metric", metric},
              {"votes", opts.votes},
              {"n_samples", test.size()}};
  std::cout << out.dump() << "\n";
  return 0;
}

// ---- gradcheck ------------------------------------------------------------------

int cmd_gradcheck(const std::string& only) {
  const auto results = run_gradcheck_suite(only);
  if (results.empty()) {
    std::cerr << "no gradcheck target matches '" << only << "'\n";
    return 2;
  }
  bool all_pass = true;
  for (const VerifyResult& r : results) {
    std::printf("%-28s max_rel_err %.3e  tol %.0e  %s\n", r.name.c_str(), r.err,
                r.tol, r.pass ? "PASS" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 1;
}

// ---- analyze-curves --------------------------------------------------------------

struct AnalyzeOpts {
  std::string out = "analysis";
  std::string checkpoint;
  std::string manifest;
  std::string policy = "momentum+cs";
  std::string cloud = "torus";
  int seeds = 20;
  int n = 8;
  int l = 30;
  int k = 8;
  int points = 256;
  double theta_bar_deg = 90.0;
  uint64_t seed = 1;
};

ShapeKind cloud_kind(const std::string& name) {
  if (name == "sphere") return ShapeKind::kSphere;
  if (name == "cube") return ShapeKind::kCube;
  if (name == "torus") return ShapeKind::kTorus;
  if (name == "cylinder") return ShapeKind::kCylinder;
  CW_CHECK(false, "unknown cloud kind " << name);
  return ShapeKind::kTorus;
}

double max_knn_radius(const PointCloud& cloud, int k) {
  const NeighborGraph g = knn(cloud, k);
  double worst = 0.0;
  for (int i = 0; i < cloud.points(); ++i) {
    const int far = g.row(i)[static_cast<size_t>(k - 1)];
    worst = std::max(worst, std::sqrt(dist2(cloud.coords, i, far)));
  }
  return worst;
}

int cmd_analyze_curves(const AnalyzeOpts& opts) {
  WalkConfig wcfg;
  wcfg.n = opts.n;
  wcfg.l = opts.l;
  wcfg.theta_bar = opts.theta_bar_deg * M_PI / 180.0;
  if (opts.policy == "naive") {
    wcfg.momentum = false;
    wcfg.suppression = false;
  } else if (opts.policy == "momentum") {
    wcfg.momentum = true;
    wcfg.suppression = false;
  } else if (opts.policy == "momentum+cs") {
    wcfg.momentum = true;
    wcfg.suppression = true;
  } else {
    CW_CHECK(false, "--policy must be naive|momentum|momentum+cs");
  }

  fs::create_directories(opts.out);
  const fs::path out_dir(opts.out);

  json per_seed = json::array();
  CurveStats first_stats;
  Tensor feats_for_csv;
  Tensor coords_for_csv;
  double knn_radius = 0.0;
  std::vector<double> sum_dist_start(static_cast<size_t>(opts.l), 0.0);
  std::vector<double> sum_dist_last(static_cast<size_t>(opts.l), 0.0);
  double sum_revisits = 0.0, sum_turn = 0.0;
  json variance_report;  // channel-diversity diagnostic, threshold-free

  std::optional<CurveNet> model;
  DataOpts mdata;
  if (!opts.checkpoint.empty()) {
    CW_CHECK(fs::exists(opts.checkpoint),
             "checkpoint " << opts.checkpoint << " not found");
    fs::path manifest_path = opts.manifest.empty()
                                 ? fs::path(opts.checkpoint).parent_path() /
                                       "manifest.json"
                                 : fs::path(opts.manifest);
    CW_CHECK(fs::exists(manifest_path), "manifest " << manifest_path
                                                    << " not found");
    std::ifstream is(manifest_path);
    json manifest = json::parse(is);
    ModelOpts mo;
    std::string task_name;
    from_manifest(manifest, mdata, mo, task_name);
    const TaskKind task =
        task_name == "classify" ? TaskKind::kClassify : TaskKind::kNormals;
    const int out_dims = task == TaskKind::kClassify ? mdata.classes : 3;
    model.emplace(make_config(mo, task, out_dims, mdata.points),
                  static_cast<uint64_t>(manifest.at("seed")));
    model->load(opts.checkpoint);
  }

  for (int s = 0; s < opts.seeds; ++s) {
    // with a checkpoint the policy is fixed and seeds vary the cloud;
    // random-init mode walks a fixed cloud under fresh policy draws
    const uint64_t cloud_seed = model ? derive_seed(opts.seed, 0xC10Du, s)
                                      : derive_seed(opts.seed, 0xC10Du, 0);
    Rng cloud_rng(cloud_seed);
    PointCloud cloud = synth_cloud(cloud_kind(opts.cloud), opts.points, cloud_rng);

    Graph g;
    CurveStats stats;
    if (model) {
      int walk_block = -1;
      for (size_t b = 0; b < model->config().blocks.size(); ++b)
        if (model->config().blocks[b].curves) walk_block = static_cast<int>(b);
      CW_CHECK(walk_block >= 0, "checkpointed model has no curve blocks");
      auto trace = model->forward(g, cloud);
      const auto& level = trace.levels[static_cast<size_t>(walk_block + 1)];
      CW_CHECK(level.walk_feats.valid(), "no walk features recorded");
      PointCloud at_res;
      at_res.coords = level.coords;
      const NeighborGraph graph = knn(at_res, opts.k);
      const WalkParams& wp = model->block_params(walk_block).walk.value();
      CurveSet cs = group_curves(g, level.walk_feats, graph, wp, wcfg);
      stats = curve_stats(cs, level.coords);
      knn_radius = std::max(knn_radius, max_knn_radius(at_res, opts.k));
      if (s == 0) {
        feats_for_csv = g.tape.val(level.walk_feats);
        coords_for_csv = level.coords;
        if (level.ca_feats.valid()) {
          auto mean_var = [](const Tensor& f) {
            const ChannelVariance cv = channel_variance_map(f);
            double m = 0.0;
            for (double v : cv.per_channel_variance)
              m += v / static_cast<double>(cv.per_channel_variance.size());
            return m;
          };
          variance_report = {
              {"ca_input_mean_channel_variance",
               mean_var(g.tape.val(level.walk_feats))},
              {"ca_output_mean_channel_variance",
               mean_var(g.tape.val(level.ca_feats))}};
        }
      }
    } else {
      const NeighborGraph graph = knn(cloud, opts.k);
      Tensor feats({3, opts.points});
      for (int i = 0; i < opts.points; ++i)
        for (int d = 0; d < 3; ++d) feats.at(d, i) = cloud.coords.at(i, d);
      Rng policy_rng(derive_seed(opts.seed, 0x9011Cu, s));
      WalkParams wp = WalkParams::make("analysis", 3, 16, policy_rng);
      Var f = g.input(feats, true);
      CurveSet cs = group_curves(g, f, graph, wp, wcfg);
      stats = curve_stats(cs, cloud.coords);
      if (s == 0) {
        feats_for_csv = feats;
        coords_for_csv = cloud.coords;
        knn_radius = max_knn_radius(cloud, opts.k);
      }  // fixed cloud in this mode: one radius
    }

    for (int i = 0; i < opts.l; ++i) {
      sum_dist_start[static_cast<size_t>(i)] +=
          stats.mean_dist_to_start[static_cast<size_t>(i)] / opts.seeds;
      sum_dist_last[static_cast<size_t>(i)] +=
          stats.mean_dist_to_last[static_cast<size_t>(i)] / opts.seeds;
    }
    sum_revisits += stats.mean_revisits / opts.seeds;
    sum_turn += stats.mean_turn_deg / opts.seeds;
    per_seed.push_back({{"seed", s}, {"mean_revisits", stats.mean_revisits}});
    if (s == 0) first_stats = std::move(stats);
  }

  json out = {{"policy", opts.policy},
              {"seeds", opts.seeds},
              {"n", opts.n},
              {"l", opts.l},
              {"k", opts.k},
              {"points", opts.points},
              {"theta_bar_deg", opts.theta_bar_deg},
              {"max_knn_radius", knn_radius},
              {"aggregate",
               {{"mean_dist_to_start", sum_dist_start},
                {"mean_dist_to_last", sum_dist_last},
                {"mean_revisits", sum_revisits},
                {"mean_turn_deg", sum_turn}}},
              {"per_seed", per_seed},
              {"example", json::parse(curve_stats_json(first_stats))}};
  if (!variance_report.is_null()) out["channel_variance"] = variance_report;
  write_file(out_dir / "curves.json", out.dump(2) + "\n");
  write_file(out_dir / "channel_variance.csv",
             channel_variance_csv(coords_for_csv, feats_for_csv));
  std::cout << json({{"mean_revisits", sum_revisits},
                     {"dist_to_start_final",
                      sum_dist_start[static_cast<size_t>(opts.l - 1)]},
                     {"max_knn_radius", knn_radius}})
                   .dump()
            << "\n";
  return 0;
}

// ---- bench --------------------------------------------------------------------

struct BenchOpts {
  int points = 256;
  int iters = 10;
  int k = 8;
  uint64_t seed = 1;
};

int cmd_bench(const BenchOpts& opts) {
  Rng rng(opts.seed);
  PointCloud cloud = synth_cloud(ShapeKind::kTorus, opts.points, rng);
  cloud.label = 0;
  auto time_model = [&](bool with_curves) {
    CurveNetConfig cfg = CurveNetConfig::desk(TaskKind::kClassify, 4, opts.k,
                                              opts.points, with_curves);
    CurveNet model(cfg, opts.seed);
    auto once = [&] {
      Graph g;
      model.forward_classify(g, cloud);
    };
    once();  // warmup
    std::vector<double> ms;
    for (int i = 0; i < opts.iters; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      once();
      const auto t1 = std::chrono::steady_clock::now();
      ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::sort(ms.begin(), ms.end());
    const double median = ms[ms.size() / 2];
    const double p95 = ms[static_cast<size_t>(0.95 * (ms.size() - 1))];
    return json{{"median_ms", median}, {"p95_ms", p95}};
  };
  json out = {{"points", opts.points},
              {"iters", opts.iters},
              {"curves_on", time_model(true)},
              {"curves_off", time_model(false)}};
  std::cout << out.dump() << "\n";
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"guided curve grouping and aggregation on point clouds"};
  app.require_subcommand(1);

  TrainOpts t;
  t.train.threads = env_threads();
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--data", t.data.data, "synth or an OFF dataset root");
  train_cmd->add_option("--classes", t.data.classes, "synth class count");
  train_cmd->add_option("--points", t.data.points, "points per cloud");
  train_cmd->add_option("--train-per-class", t.data.train_per_class, "");
  train_cmd->add_option("--test-per-class", t.data.test_per_class, "");
  train_cmd->add_option("--task", t.task, "classify|normals");
  train_cmd->add_option("--arch", t.model.arch, "desk|full");
  train_cmd->add_option("--k", t.model.k, "KNN neighbors");
  train_cmd->add_option("--curves", t.model.curves, "n,l@groups or none");
  train_cmd->add_option("--theta-bar", t.model.theta_bar_deg,
                        "crossover tolerance angle, degrees");
  train_cmd->add_option("--epochs", t.train.epochs, "");
  train_cmd->add_option("--batch", t.train.batch, "");
  train_cmd->add_option("--lr", t.train.lr, "");
  train_cmd->add_option("--lr-floor", t.train.lr_floor, "");
  train_cmd->add_option("--schedule", t.schedule, "cosine|step");
  train_cmd->add_option("--momentum", t.train.momentum, "");
  train_cmd->add_option("--weight-decay", t.train.weight_decay, "");
  train_cmd->add_option("--seed", t.train.seed, "");
  train_cmd->add_option("--threads", t.train.threads, "");
  train_cmd->add_flag("!--no-augment", t.train.augment, "");
  train_cmd->add_option("--out", t.out, "output directory");

  EvalOpts e;
  e.threads = env_threads();
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", e.checkpoint, "")->required();
  eval_cmd->add_option("--manifest", e.manifest,
                       "defaults to manifest.json next to the checkpoint");
  eval_cmd->add_option("--votes", e.votes, "prediction votes");
  eval_cmd->add_option("--seed", e.seed, "voting seed");
  eval_cmd->add_option("--threads", e.threads, "");

  std::string only;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference suite");
  grad_cmd->add_option("--only", only, "substring filter on target names");

  AnalyzeOpts a;
  auto* an_cmd = app.add_subcommand("analyze-curves", "walk instrumentation");
  an_cmd->add_option("--out", a.out, "output directory");
  an_cmd->add_option("--checkpoint", a.checkpoint, "walk a trained model");
  an_cmd->add_option("--manifest", a.manifest, "");
  an_cmd->add_option("--policy", a.policy, "naive|momentum|momentum+cs");
  an_cmd->add_option("--cloud", a.cloud, "sphere|cube|torus|cylinder");
  an_cmd->add_option("--seeds", a.seeds, "");
  an_cmd->add_option("--n", a.n, "curve count");
  an_cmd->add_option("--l", a.l, "curve length");
  an_cmd->add_option("--k", a.k, "");
  an_cmd->add_option("--points", a.points, "");
  an_cmd->add_option("--theta-bar", a.theta_bar_deg, "");
  an_cmd->add_option("--seed", a.seed, "");

  BenchOpts b;
  auto* bench_cmd = app.add_subcommand("bench", "forward latency");
  bench_cmd->add_option("--points", b.points, "");
  bench_cmd->add_option("--iters", b.iters, "");
  bench_cmd->add_option("--k", b.k, "");
  bench_cmd->add_option("--seed", b.seed, "");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& h) {
    return app.exit(h);
  } catch (const CLI::ParseError& pe) {
    app.exit(pe);
    return 2;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(t);
    if (eval_cmd->parsed()) return cmd_eval(e);
    if (grad_cmd->parsed()) return cmd_gradcheck(only);
    if (an_cmd->parsed()) return cmd_analyze_curves(a);
    if (bench_cmd->parsed()) return cmd_bench(b);
  } catch (const DivergenceError& de) {
    std::cerr << "error: " << de.what() << "\n";
    return 3;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  }
  return 2;
}

}  // namespace curvewalk
