#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "core/dataset.hpp"
#include "core/diagnostics.hpp"
#include "core/evaluation.hpp"
#include "core/kernels.hpp"
#include "core/models.hpp"
#include "core/sensitivity.hpp"
#include "core/transport.hpp"

namespace tracekit {

enum class BoundVariant { kOt, kMmd };

std::string bound_variant_name(BoundVariant variant);
BoundVariant parse_bound_variant(const std::string& name);

struct SensitivitySettings {
  double q = 0.99;
  // ground-truth | pseudo-label | auto (pseudo for classifiers, ground truth
  // for regression losses).
  std::string label_mode = "auto";
};

struct SweepSettings {
  std::vector<double> severities = {0.25, 0.5, 1.0};
  std::vector<std::int64_t> sample_sizes = {1000, 2000};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3};
  // Calibration runs draw from these, kept disjoint from the run seeds so
  // the scale factor is never fit on evaluation data.
  std::vector<std::uint64_t> dev_seeds = {100, 101};
  std::int64_t test_size = 100000;
};

struct GateSettings {
  std::int64_t candidate_count = 20;
  // The worst candidate's blend weight toward the sign-flipped model.
  double max_perturbation = 0.95;
};

struct SelectSettings {
  std::int64_t batch_size = 20;
  std::int64_t rounds = 5;
  SelectionPolicy policy = SelectionPolicy::kW1Min;
};

struct RidgeCheckSettings {
  std::int64_t dim = 4;
  double lambda = 1.0;
  std::vector<double> scales = {1.0 / 64, 1.0 / 32, 1.0 / 16,
                                1.0 / 8,  1.0 / 4,  1.0 / 2};
  std::int64_t instances = 1000;
  bool orthogonal = false;  // plant mu orthogonal to w*: no weight change
};

struct InputPaths {
  std::string source;
  std::string target;
  std::string model_q;
  std::string model_qt;
  std::string dataset;
  std::string anchor;
  std::string pool;
  std::string test;
  std::vector<std::string> candidates;
};

// Every knob of every command in one record. Parsed strictly: unknown keys
// are rejected so a typo cannot silently fall back to a default.
struct RunConfig {
  ShiftConfig world;  // world.seed is derived from `seed`, not configured
  PredictorKind model = PredictorKind::kLogisticLinear;
  TrainConfig train;
  TransportConfig transport;
  KernelConfig kernel;
  std::vector<double> lambda_grid = default_lambda_grid();
  ResidualConfig residual;  // dim 0 = resolve from the feature dimension
  ConfidenceConfig confidence;
  SensitivitySettings sensitivity;
  BoundVariant variant = BoundVariant::kOt;
  std::vector<double> tau_list = {0.10, 0.13, 0.23};
  double validation_fraction = 0.15;
  SweepSettings sweep;
  GateSettings gate;
  SelectSettings select;
  RidgeCheckSettings ridge;
  InputPaths inputs;
  std::string out_dir = ".";
  FileFormat format = FileFormat::kJson;
  std::uint64_t seed = 0;
};

RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig parse_run_config_text(const std::string& text);
// Normalized on-disk form; parse(to_json(c)) reproduces c exactly.
nlohmann::json run_config_to_json(const RunConfig& cfg);

// Seeds for the independent random streams a run derives from the master
// seed, exposed so library callers can reproduce the command-line draws.
struct SeedPlan {
  std::uint64_t world = 0;
  std::uint64_t train_q = 0;
  std::uint64_t train_qt = 0;
  std::uint64_t split_source = 0;
  std::uint64_t split_target = 0;
  std::uint64_t test = 0;
};
SeedPlan seed_plan(std::uint64_t master_seed);

struct SingleRunResult {
  DiagnosticReport report;
  double w1 = 0.0;
  double mmd_value = 0.0;     // filled under the mmd variant
  double distance = 0.0;      // the variant's distance (w1 or mmd)
  double lip_q = 0.0;
  double lip_qt = 0.0;
  double b_hat = 0.0;         // filled under the mmd variant
  Predictor q;
  Predictor qt;
  Dataset source;
  Dataset target;
};

// Full decomposition for one incumbent/replacement pair on one labeled
// source/target sample. `source_test` enables the true risk change.
SingleRunResult run_bound(const Predictor& q, const Predictor& qt,
                          const Dataset& source, const Dataset& target,
                          const Dataset* source_test, const RunConfig& cfg,
                          const nlohmann::json& extra_echo = {});

// Synthesize a world from cfg, train both models, and evaluate the bound
// with a fresh large source test sample for the true risk change.
SingleRunResult single_run(const RunConfig& cfg);

// Dispatch a subcommand; writes this command's output files under
// cfg.out_dir and returns the summary document.
nlohmann::json run_command_json(const std::string& command,
                                const RunConfig& cfg);
// Text-in, text-out wrapper used by the C API.
std::string run_command(const std::string& command,
                        const std::string& config_json);

}  // namespace tracekit
