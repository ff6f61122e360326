#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "core/diagnostics.hpp"
#include "core/pipeline.hpp"

using namespace tracekit;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Scratch directory per test case, removed on destruction.
struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("tracekit_pipeline_" + std::to_string(++counter) + "_" +
            std::to_string(static_cast<std::uint64_t>(
                std::hash<const void*>{}(this))));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string str(const std::string& name = "") const {
    return name.empty() ? path.string() : (path / name).string();
  }
};

// Small blobs world that keeps every pipeline test under a second.
json tiny_config(const std::string& out) {
  return json{
      {"world", {{"name", "blobs"}, {"translation", {0.6, 0.0}}, {"n", 160}}},
      {"model", {{"epochs", 120}, {"learning_rate", 0.3}, {"l2_penalty", 0.05}}},
      {"transport", {{"iterations", 60}, {"cost_exponent", 1}}},
      {"sweep", {{"test_size", 2000}}},
      {"io", {{"out", out}}},
      {"seed", 9}};
}

std::size_t line_count(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::size_t count = 0;
  std::string line;
  while (std::getline(in, line)) ++count;
  return count;
}

}  // namespace

TEST_CASE("default config round-trips through json exactly") {
  // parse(empty) is the canonical default; serializing it is a fixed point.
  const json canon = run_config_to_json(parse_run_config(json::object()));
  CHECK(run_config_to_json(parse_run_config(canon)) == canon);
  CHECK(canon.at("seed") == 0);
  CHECK(canon.at("variant") == "ot");
  CHECK(canon.at("world").at("name") == "blobs");
  CHECK(canon.at("residual").at("dim") == 0);  // resolved from data at run time
}

TEST_CASE("custom config survives a parse/serialize/parse cycle") {
  json doc{{"world", {{"name", "moons"}, {"warp_alpha", 1.5}, {"n", 300}}},
           {"model", {{"kind", "mlp"}, {"hidden_width", 8}, {"epochs", 50}}},
           {"transport", {{"epsilon", 0.2}, {"cost_exponent", 1}}},
           {"kernel", {{"estimator", "biased"}, {"lambda_grid", {0.01, 0.1}}}},
           {"variant", "mmd"},
           {"tau_list", {0.2}},
           {"validation_fraction", 0.25},
           {"select", {{"policy", "mmdmin"}, {"batch_size", 3}}},
           {"inputs", {{"source", "a.json"}, {"candidates", {"m1.json"}}}},
           {"io", {{"out", "somewhere"}, {"format", "csv"}}},
           {"seed", 123}};
  const json normalized = run_config_to_json(parse_run_config(doc));
  CHECK(run_config_to_json(parse_run_config(normalized)) == normalized);
  const RunConfig cfg = parse_run_config(doc);
  CHECK(cfg.variant == BoundVariant::kMmd);
  CHECK(cfg.world.world == "moons");
  CHECK(cfg.model == PredictorKind::kMlp);
  CHECK(cfg.kernel.estimator == MmdEstimator::kBiased);
  CHECK(cfg.lambda_grid == std::vector<double>{0.01, 0.1});
  CHECK(cfg.select.policy == SelectionPolicy::kMmdMin);
  CHECK(cfg.format == FileFormat::kCsv);
  CHECK(cfg.inputs.candidates == std::vector<std::string>{"m1.json"});
}

TEST_CASE("strict parsing rejects unknown keys and wrong types") {
  CHECK_THROWS_WITH_AS(parse_run_config(json{{"wrold", json::object()}}),
                       doctest::Contains("unknown config key"), Error);
  CHECK_THROWS_WITH_AS(
      parse_run_config(json{{"world", {{"nam", "blobs"}}}}),
      doctest::Contains("world.nam"), Error);
  CHECK_THROWS_WITH_AS(
      parse_run_config(json{{"model", {{"epochs", 1.5}}}}),
      doctest::Contains("integer"), Error);
  CHECK_THROWS_WITH_AS(parse_run_config(json{{"seed", -4}}),
                       doctest::Contains("nonnegative"), Error);
  CHECK_THROWS_WITH_AS(parse_run_config(json{{"variant", "both"}}),
                       doctest::Contains("variant"), Error);
  CHECK_THROWS_WITH_AS(
      parse_run_config(json{{"kernel", {{"estimator", "exact"}}}}),
      doctest::Contains("estimator"), Error);
  CHECK_THROWS_WITH_AS(
      parse_run_config(json{{"sensitivity", {{"label_mode", "oracle"}}}}),
      doctest::Contains("label mode"), Error);
  CHECK_THROWS_WITH_AS(parse_run_config(json{{"validation_fraction", 1.0}}),
                       doctest::Contains("validation_fraction"), Error);
  CHECK_THROWS_WITH_AS(
      parse_run_config(json{{"tau_list", {0.1, "x"}}}),
      doctest::Contains("numbers"), Error);
  CHECK_THROWS_WITH_AS(parse_run_config_text("{not json"),
                       doctest::Contains("not valid JSON"), Error);
  for (const auto& kind : parse_run_config(json::object()).tau_list) {
    CHECK(kind > 0.0);  // defaults stay sane
  }
}

TEST_CASE("seed plan derives six distinct deterministic streams") {
  const SeedPlan a = seed_plan(42);
  const SeedPlan b = seed_plan(42);
  CHECK(a.world == b.world);
  CHECK(a.train_q == b.train_q);
  CHECK(a.test == b.test);
  const std::uint64_t streams[] = {a.world,        a.train_q,      a.train_qt,
                                   a.split_source, a.split_target, a.test};
  for (int i = 0; i < 6; ++i) {
    for (int j = i + 1; j < 6; ++j) CHECK(streams[i] != streams[j]);
  }
  CHECK(seed_plan(43).world != a.world);
}

TEST_CASE("single run produces a valid report with the true risk change") {
  TempDir tmp;
  const RunConfig cfg = parse_run_config(tiny_config(tmp.str()));
  const SingleRunResult run = single_run(cfg);
  const json doc = report_to_json(run.report);
  validate_report(doc);
  CHECK(run.report.has_delta_r);
  CHECK(run.report.abs_delta_r == std::abs(run.report.delta_r));
  CHECK(run.report.total_ot >= run.report.abs_delta_r);
  CHECK(run.w1 > 0.0);
  CHECK(run.distance == run.w1);
  CHECK(run.lip_q > 0.0);
  CHECK(run.lip_qt > 0.0);

  // Bit-for-bit determinism: the master seed pins every stream.
  const SingleRunResult again = single_run(cfg);
  CHECK(report_to_json(again.report) == doc);

  RunConfig other = cfg;
  other.seed = 10;
  CHECK(single_run(other).w1 != run.w1);
}

TEST_CASE("mmd variant fills the hybrid block and the rkhs scale") {
  TempDir tmp;
  RunConfig cfg = parse_run_config(tiny_config(tmp.str()));
  cfg.variant = BoundVariant::kMmd;
  const SingleRunResult run = single_run(cfg);
  CHECK(run.report.has_mmd);
  CHECK(run.mmd_value > 0.0);
  CHECK(run.distance == run.mmd_value);
  CHECK(run.b_hat > 0.0);
  CHECK(run.report.total_mmd > 0.0);
  validate_report(report_to_json(run.report));
}

TEST_CASE("run_bound rejects mismatched model and data pairings") {
  TempDir tmp;
  const RunConfig cfg = parse_run_config(tiny_config(tmp.str()));
  ShiftConfig world = cfg.world;
  world.seed = seed_plan(cfg.seed).world;
  const ShiftedPair pair = make_world(world);
  TrainConfig tc = cfg.train;
  tc.seed = seed_plan(cfg.seed).train_q;
  const Predictor q = train(PredictorKind::kLogisticLinear, pair.source, tc);

  Predictor ridge;
  ridge.kind = PredictorKind::kRidgeLinear;
  ridge.w1 = Eigen::MatrixXd::Ones(1, 2);
  ridge.b1 = Eigen::VectorXd::Zero(1);
  CHECK_THROWS_WITH_AS(
      run_bound(q, ridge, pair.source, pair.target, nullptr, cfg),
      doctest::Contains("loss families"), Error);

  Predictor narrow = q;
  narrow.w1 = Eigen::MatrixXd::Ones(2, 3);
  CHECK_THROWS_WITH_AS(
      run_bound(narrow, q, pair.source, pair.target, nullptr, cfg),
      doctest::Contains("input dimension"), Error);
}

TEST_CASE("synth writes loadable datasets in both formats") {
  TempDir tmp;
  for (const std::string format : {"json", "csv"}) {
    json doc = tiny_config(tmp.str(format));
    doc["io"]["format"] = format;
    const json summary =
        run_command_json("synth", parse_run_config(doc));
    CHECK(summary.at("rows") == 160);
    CHECK(summary.at("cols") == 2);
    const Dataset source = load_dataset(
        summary.at("source").get<std::string>(), parse_format(format));
    const Dataset target = load_dataset(
        summary.at("target").get<std::string>(), parse_format(format));
    CHECK(source.rows() == 160);
    CHECK(target.rows() == 160);
    CHECK(source.kind == LabelKind::kClass);
    // The target is the translated twin, so its mean moves by about 0.6.
    CHECK(target.features.col(0).mean() >
          source.features.col(0).mean() + 0.3);
  }
}

TEST_CASE("train command fits a usable model and reports accuracy") {
  TempDir tmp;
  json synth_doc = tiny_config(tmp.str());
  run_command_json("synth", parse_run_config(synth_doc));

  json doc = tiny_config(tmp.str());
  doc["inputs"] = {{"dataset", tmp.str("source.json")}};
  const json summary = run_command_json("train", parse_run_config(doc));
  CHECK(summary.at("accuracy").get<double>() > 0.7);
  CHECK(summary.at("mean_loss").get<double>() < 0.7);
  const Predictor p = load_predictor(summary.at("model").get<std::string>());
  CHECK(p.kind == PredictorKind::kLogisticLinear);
  CHECK(p.input_dim() == 2);

  json bare = tiny_config(tmp.str());
  CHECK_THROWS_WITH_AS(run_command_json("train", parse_run_config(bare)),
                       doctest::Contains("inputs.dataset"), Error);
}

TEST_CASE("diagnose command runs from files and writes a valid report") {
  TempDir tmp;
  run_command_json("synth", parse_run_config(tiny_config(tmp.str())));
  json tq = tiny_config(tmp.str("mq"));
  tq["inputs"] = {{"dataset", tmp.str("source.json")}};
  run_command_json("train", parse_run_config(tq));
  json tqt = tiny_config(tmp.str("mqt"));
  tqt["inputs"] = {{"dataset", tmp.str("target.json")}};
  run_command_json("train", parse_run_config(tqt));

  json doc = tiny_config(tmp.str("diag"));
  doc["inputs"] = {{"source", tmp.str("source.json")},
                   {"target", tmp.str("target.json")},
                   {"model_q", tmp.str("mq/model.json")},
                   {"model_qt", tmp.str("mqt/model.json")}};
  const json report = run_command_json("diagnose", parse_run_config(doc));
  validate_report(report);
  CHECK_FALSE(report.contains("delta_r"));  // no test data supplied

  std::ifstream on_disk(tmp.str("diag") + "/report.json");
  json written;
  on_disk >> written;
  CHECK(written == report);

  json missing = tiny_config(tmp.str());
  missing["inputs"] = {{"source", tmp.str("source.json")}};
  CHECK_THROWS_WITH_AS(run_command_json("diagnose", parse_run_config(missing)),
                       doctest::Contains("diagnose needs"), Error);
}

TEST_CASE("gate command ranks a monotone damage dial") {
  TempDir tmp;
  json doc = tiny_config(tmp.str());
  doc["gate"] = {{"candidates", 6}, {"max_perturbation", 0.9}};
  const json summary = run_command_json("gate", parse_run_config(doc));
  CHECK(summary.at("candidates").size() == 6);
  CHECK(summary.at("variant") == "trace-w");
  CHECK(summary.at("spearman").at("gate").get<double>() > 0.8);
  CHECK(summary.at("thresholds").size() == 3);
  // Damage grows along the dial, so scores and true harm do too.
  const json& rows = summary.at("candidates");
  CHECK(rows.back().at("score").get<double>() >
        rows.front().at("score").get<double>());
  CHECK(rows.back().at("delta_r").get<double>() >
        rows.front().at("delta_r").get<double>());
  CHECK(line_count(tmp.str("gate.csv")) == 7);

  json too_few = tiny_config(tmp.str());
  too_few["gate"] = {{"candidates", 1}};
  CHECK_THROWS_WITH_AS(run_command_json("gate", parse_run_config(too_few)),
                       doctest::Contains("at least two"), Error);
}

TEST_CASE("sweep command calibrates, records runs, and summarizes") {
  TempDir tmp;
  json doc = tiny_config(tmp.str());
  doc["sweep"] = {{"severities", {0.4, 0.9}},
                  {"sample_sizes", {140}},
                  {"seeds", {0, 1}},
                  {"dev_seeds", {50}},
                  {"test_size", 2000}};
  const json summary = run_command_json("sweep", parse_run_config(doc));
  CHECK(summary.at("runs") == 4);
  CHECK(summary.at("records").size() == 4);
  CHECK(summary.at("calibration").at("c_hat").get<double>() > 0.0);
  // One dev seed and two extremes give two runs; the plan pads to three.
  CHECK(summary.at("calibration").at("dev_candidates").size() == 3);
  CHECK(summary.at("bound_validity").at("ot").get<double>() == 1.0);
  CHECK(summary.at("bound_validity").at("mmd").is_null());
  CHECK(line_count(tmp.str("sweep_runs.csv")) == 5);

  json empty = tiny_config(tmp.str());
  empty["sweep"] = {{"severities", json::array()}};
  CHECK_THROWS_WITH_AS(run_command_json("sweep", parse_run_config(empty)),
                       doctest::Contains("sweep needs"), Error);
}

TEST_CASE("select command returns ordered unique picks with round detail") {
  TempDir tmp;
  json doc = tiny_config(tmp.str());
  doc["select"] = {{"batch_size", 2}, {"rounds", 2}, {"policy", "w1min"}};
  const json summary = run_command_json("select", parse_run_config(doc));
  const auto picked = summary.at("selected").get<std::vector<std::int64_t>>();
  CHECK(picked.size() == 4);
  std::set<std::int64_t> unique(picked.begin(), picked.end());
  CHECK(unique.size() == 4);
  for (std::int64_t idx : picked) {
    CHECK(idx >= 0);
    CHECK(idx < 160);
  }
  CHECK(summary.at("rounds").size() == 2);
  CHECK(summary.at("step_distances").size() == 4);
}

TEST_CASE("ridge check passes its slope and closed-form gates") {
  TempDir tmp;
  json doc{{"io", {{"out", tmp.str()}}}, {"seed", 3},
           {"ridge", {{"instances", 200}}}};
  const json summary = run_command_json("ridge-check", parse_run_config(doc));
  CHECK(summary.at("overall_pass") == true);
  CHECK(summary.at("closed_form").at("pass") == true);
  CHECK(summary.at("closed_form").at("max_gap").get<double>() < 1e-10);
  CHECK(summary.at("slopes").at("delta_w_vs_mu").at("pass") == true);
  CHECK(summary.at("slopes").at("delta_r_vs_delta_w").at("pass") == true);

  json orth = doc;
  orth["ridge"] = {{"instances", 10}, {"orthogonal", true}};
  const json skipped = run_command_json("ridge-check", parse_run_config(orth));
  CHECK(skipped.at("slopes").contains("skipped"));

  json short_sweep = doc;
  short_sweep["ridge"] = {{"scales", {0.5}}};
  CHECK_THROWS_WITH_AS(
      run_command_json("ridge-check", parse_run_config(short_sweep)),
      doctest::Contains("at least two"), Error);
}

TEST_CASE("command dispatch rejects unknown commands and bad config text") {
  TempDir tmp;
  CHECK_THROWS_WITH_AS(
      run_command_json("analyze", parse_run_config(tiny_config(tmp.str()))),
      doctest::Contains("unknown command"), Error);
  CHECK_THROWS_WITH_AS(run_command("synth", "{oops"),
                       doctest::Contains("not valid JSON"), Error);
  // The text wrapper emits parseable JSON.
  json rc{{"io", {{"out", tmp.str("rc")}}},
          {"ridge", {{"instances", 50}}}};
  const json parsed = json::parse(run_command("ridge-check", rc.dump()));
  CHECK(parsed.at("command") == "ridge-check");
}
