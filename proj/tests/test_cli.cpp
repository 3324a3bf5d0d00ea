#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"

#include "curvewalk/cli.hpp"
#include "curvewalk/dataio.hpp"

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

int run_cli(std::initializer_list<const char*> args) {
  std::vector<const char*> argv{"curvewalk"};
  argv.insert(argv.end(), args.begin(), args.end());
  return curvewalk::cli_main(static_cast<int>(argv.size()), argv.data());
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cw_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// minimal structural validation: required keys present, primitive types match
bool matches_type(const json& value, const json& type_spec) {
  auto one = [&](const std::string& t) {
    if (t == "object") return value.is_object();
    if (t == "array") return value.is_array();
    if (t == "string") return value.is_string();
    if (t == "integer") return value.is_number_integer() || value.is_number_unsigned();
    if (t == "number") return value.is_number();
    if (t == "boolean") return value.is_boolean();
    if (t == "null") return value.is_null();
    return false;
  };
  if (type_spec.is_string()) return one(type_spec.get<std::string>());
  for (const auto& t : type_spec)
    if (one(t.get<std::string>())) return true;
  return false;
}

void check_schema(const json& doc, const json& schema, const std::string& at) {
  if (schema.contains("type")) {
    INFO("at ", at);
    CHECK(matches_type(doc, schema["type"]));
  }
  if (!doc.is_object()) return;
  if (schema.contains("required"))
    for (const auto& key : schema["required"]) {
      INFO("missing ", key.get<std::string>(), " at ", at);
      CHECK(doc.contains(key.get<std::string>()));
    }
  if (schema.contains("properties"))
    for (const auto& [key, sub] : schema["properties"].items())
      if (doc.contains(key)) check_schema(doc[key], sub, at + "/" + key);
}

json load_schema(const std::string& name) {
  std::ifstream is(std::string(CW_SOURCE_DIR) + "/docs/schemas/" + name);
  REQUIRE(is.good());
  return json::parse(is);
}

// redirects fd 1 into a file for the duration of one cli_main call
int run_cli_capture(std::initializer_list<const char*> args,
                    const fs::path& stdout_file) {
  std::fflush(stdout);
  const int saved = dup(1);
  FILE* f = std::fopen(stdout_file.string().c_str(), "w");
  REQUIRE(f != nullptr);
  dup2(fileno(f), 1);
  const int rc = run_cli(args);
  std::fflush(stdout);
  dup2(saved, 1);
  close(saved);
  std::fclose(f);
  return rc;
}

}  // namespace

TEST_CASE("train with zero epochs writes manifest and initial checkpoint only") {
  const fs::path out = scratch("epoch0");
  const std::string out_s = out.string();
  CHECK(run_cli({"train", "--epochs", "0", "--points", "64",
                 "--train-per-class", "2", "--test-per-class", "1", "--out",
                 out_s.c_str()}) == 0);
  CHECK(fs::exists(out / "manifest.json"));
  CHECK(fs::exists(out / "last.cwt"));
  CHECK(!fs::exists(out / "best.cwt"));
  CHECK(fs::file_size(out / "metrics.jsonl") == 0);

  std::ifstream is(out / "manifest.json");
  const json manifest = json::parse(is);
  check_schema(manifest, load_schema("manifest.schema.json"), "manifest");
  CHECK(manifest["model"]["theta_bar_deg"] == 90.0);  // default
  fs::remove_all(out);
}

TEST_CASE("short training run emits schema-valid metrics lines") {
  const fs::path out = scratch("short");
  const std::string out_s = out.string();
  CHECK(run_cli({"train", "--epochs", "2", "--points", "64",
                 "--train-per-class", "4", "--test-per-class", "2", "--batch",
                 "8", "--curves", "4,4@1", "--threads", "2", "--out",
                 out_s.c_str()}) == 0);
  const json schema = load_schema("metrics_line.schema.json");
  std::ifstream is(out / "metrics.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(is, line)) {
    check_schema(json::parse(line), schema, "metrics");
    ++lines;
  }
  CHECK(lines == 2);
  CHECK(fs::exists(out / "best.cwt"));
  fs::remove_all(out);
}

TEST_CASE("usage errors exit with code 2") {
  CHECK(run_cli({"train", "--schedule", "warpdrive", "--epochs", "0",
                 "--out", "/tmp/cw_cli_bad"}) == 2);
  CHECK(run_cli({"no-such-command"}) == 2);
  CHECK(run_cli({"train", "--curves", "banana", "--out", "/tmp/cw_cli_bad"}) == 2);
  CHECK(run_cli({"eval", "--checkpoint", "/nonexistent/x.cwt"}) == 2);
  CHECK(run_cli({"train", "--classes", "9", "--epochs", "0",
                 "--out", "/tmp/cw_cli_bad"}) == 2);
  fs::remove_all("/tmp/cw_cli_bad");
}

TEST_CASE("gradcheck subcommand filters and exits clean") {
  CHECK(run_cli({"gradcheck", "--only", "matmul"}) == 0);
  CHECK(run_cli({"gradcheck", "--only", "no_such_target"}) == 2);
}

TEST_CASE("numeric divergence exits with code 3") {
  const fs::path out = scratch("diverge");
  const std::string out_s = out.string();
  // the first update overflows the f32 parameter grid to inf
  CHECK(run_cli({"train", "--epochs", "2", "--points", "64",
                 "--train-per-class", "2", "--test-per-class", "1", "--batch",
                 "4", "--lr", "1e300", "--curves", "4,4@1", "--out",
                 out_s.c_str()}) == 3);
  fs::remove_all(out);
}

TEST_CASE("eval reproduces the trained model's validation metric") {
  const fs::path out = scratch("evalrt");
  const std::string out_s = out.string();
  REQUIRE(run_cli({"train", "--epochs", "2", "--points", "64",
                   "--train-per-class", "4", "--test-per-class", "2",
                   "--batch", "8", "--seed", "5", "--threads", "2", "--out",
                   out_s.c_str()}) == 0);
  // last epoch's val metric, from the log
  std::ifstream is(out / "metrics.jsonl");
  std::string line, last;
  while (std::getline(is, line))
    if (!line.empty()) last = line;
  const double logged = json::parse(last)["val_metric"];

  const std::string ckpt = (out / "last.cwt").string();
  const fs::path json_out = out / "eval.json";
  CHECK(run_cli_capture({"eval", "--checkpoint", ckpt.c_str(), "--votes", "1"},
                        json_out) == 0);
  std::ifstream ej(json_out);
  const json eval_out = json::parse(ej);
  check_schema(eval_out, load_schema("eval.schema.json"), "eval");
  CHECK(std::fabs(eval_out["metric"].get<double>() - logged) <= 1e-6);
  CHECK(eval_out["n_samples"] == 8);
  fs::remove_all(out);
}

TEST_CASE("analyze-curves: l=1 gives all-zero distance series") {
  const fs::path out = scratch("anl1");
  const std::string out_s = out.string();
  CHECK(run_cli({"analyze-curves", "--l", "1", "--n", "4", "--seeds", "2",
                 "--points", "64", "--k", "4", "--out", out_s.c_str()}) == 0);
  std::ifstream is(out / "curves.json");
  const json doc = json::parse(is);
  check_schema(doc, load_schema("curves_analysis.schema.json"), "curves");
  CHECK(doc["aggregate"]["mean_dist_to_start"].size() == 1);
  CHECK(doc["aggregate"]["mean_dist_to_start"][0] == 0.0);
  CHECK(doc["aggregate"]["mean_revisits"] == 0.0);
  CHECK(fs::exists(out / "channel_variance.csv"));
  fs::remove_all(out);
}

TEST_CASE("analyze-curves distance series has length l") {
  const fs::path out = scratch("anl8");
  const std::string out_s = out.string();
  CHECK(run_cli({"analyze-curves", "--l", "8", "--n", "2", "--seeds", "2",
                 "--points", "64", "--k", "4", "--policy", "naive", "--out",
                 out_s.c_str()}) == 0);
  std::ifstream is(out / "curves.json");
  const json doc = json::parse(is);
  CHECK(doc["aggregate"]["mean_dist_to_start"].size() == 8);
  CHECK(doc["example"]["curves"].size() == 2);
  fs::remove_all(out);
}

TEST_CASE("analyze-curves output is byte-identical across runs") {
  const fs::path out1 = scratch("andet1"), out2 = scratch("andet2");
  const std::string s1 = out1.string(), s2 = out2.string();
  for (const std::string& o : {s1, s2})
    REQUIRE(run_cli({"analyze-curves", "--l", "6", "--n", "2", "--seeds", "3",
                     "--points", "64", "--k", "4", "--seed", "9", "--out",
                     o.c_str()}) == 0);
  auto slurp = [](const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
  };
  CHECK(slurp(out1 / "curves.json") == slurp(out2 / "curves.json"));
  CHECK(slurp(out1 / "channel_variance.csv") ==
        slurp(out2 / "channel_variance.csv"));
  CHECK(!slurp(out1 / "curves.json").empty());
  fs::remove_all(out1);
  fs::remove_all(out2);
}

TEST_CASE("bench runs a single iteration and reports both variants") {
  const fs::path out = scratch("bench");
  CHECK(run_cli_capture({"bench", "--points", "64", "--iters", "1", "--k", "4"},
                        out / "bench.json") == 0);
  std::ifstream is(out / "bench.json");
  const json doc = json::parse(is);
  check_schema(doc, load_schema("bench.schema.json"), "bench");
  CHECK(doc["curves_on"]["median_ms"].get<double>() > 0.0);
  fs::remove_all(out);
}
