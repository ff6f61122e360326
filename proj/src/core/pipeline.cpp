#include "core/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <utility>

#include "core/common.hpp"

namespace tracekit {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Seed salts: every derived stream hangs off the single configured seed.
constexpr std::uint64_t kWorldSalt = 0x57;
constexpr std::uint64_t kTrainQSalt = 0x7A1;
constexpr std::uint64_t kTrainQtSalt = 0x7A2;
constexpr std::uint64_t kSplitSrcSalt = 0x51;
constexpr std::uint64_t kSplitTgtSalt = 0x52;
constexpr std::uint64_t kTestSalt = 0x7E57;
constexpr std::uint64_t kRidgeSalt = 0x41D;
constexpr std::uint64_t kDevSalt = 0xD00D;

std::string double_str(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) fail_numeric("cannot format a numeric value");
  return std::string(buf, ptr);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail_io("cannot open '" + path + "' for writing");
  out << text;
  if (!out) fail_io("short write to '" + path + "'");
}

FileFormat sniff_format(const std::string& path) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".csv") {
    return FileFormat::kCsv;
  }
  return FileFormat::kJson;
}

// ---- strict config parsing ------------------------------------------------

void expect_keys(const json& obj, const std::string& where,
                 std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) fail_usage("config section '" + where + "' must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* k) { return it.key() == k; });
    if (!known) fail_usage("unknown config key '" + where + "." + it.key() + "'");
  }
}

double jget_num(const json& obj, const char* key, double dflt) {
  auto it = obj.find(key);
  if (it == obj.end()) return dflt;
  if (!it->is_number()) {
    fail_usage(std::string("config key '") + key + "' must be a number");
  }
  return it->get<double>();
}

std::int64_t jget_int(const json& obj, const char* key, std::int64_t dflt) {
  auto it = obj.find(key);
  if (it == obj.end()) return dflt;
  if (!it->is_number_integer()) {
    fail_usage(std::string("config key '") + key + "' must be an integer");
  }
  return it->get<std::int64_t>();
}

std::uint64_t jget_seed(const json& obj, const char* key, std::uint64_t dflt) {
  auto it = obj.find(key);
  if (it == obj.end()) return dflt;
  if (!it->is_number_integer() ||
      (it->is_number_integer() && !it->is_number_unsigned() &&
       it->get<std::int64_t>() < 0)) {
    fail_usage(std::string("config key '") + key +
               "' must be a nonnegative integer");
  }
  return it->get<std::uint64_t>();
}

bool jget_bool(const json& obj, const char* key, bool dflt) {
  auto it = obj.find(key);
  if (it == obj.end()) return dflt;
  if (!it->is_boolean()) {
    fail_usage(std::string("config key '") + key + "' must be a boolean");
  }
  return it->get<bool>();
}

std::string jget_str(const json& obj, const char* key, const std::string& dflt) {
  auto it = obj.find(key);
  if (it == obj.end()) return dflt;
  if (!it->is_string()) {
    fail_usage(std::string("config key '") + key + "' must be a string");
  }
  return it->get<std::string>();
}

template <typename T, typename Fn>
std::vector<T> jget_list(const json& obj, const char* key,
                         std::vector<T> dflt, Fn&& element) {
  auto it = obj.find(key);
  if (it == obj.end()) return dflt;
  if (!it->is_array()) {
    fail_usage(std::string("config key '") + key + "' must be an array");
  }
  std::vector<T> out;
  for (const json& e : *it) out.push_back(element(e, key));
  return out;
}

double num_element(const json& e, const char* key) {
  if (!e.is_number()) {
    fail_usage(std::string("config key '") + key + "' must hold numbers");
  }
  return e.get<double>();
}

std::int64_t int_element(const json& e, const char* key) {
  if (!e.is_number_integer()) {
    fail_usage(std::string("config key '") + key + "' must hold integers");
  }
  return e.get<std::int64_t>();
}

std::uint64_t seed_element(const json& e, const char* key) {
  if (!e.is_number_integer() || (!e.is_number_unsigned() && e.get<std::int64_t>() < 0)) {
    fail_usage(std::string("config key '") + key +
               "' must hold nonnegative integers");
  }
  return e.get<std::uint64_t>();
}

std::string str_element(const json& e, const char* key) {
  if (!e.is_string()) {
    fail_usage(std::string("config key '") + key + "' must hold strings");
  }
  return e.get<std::string>();
}

}  // namespace

std::string bound_variant_name(BoundVariant variant) {
  return variant == BoundVariant::kOt ? "ot" : "mmd";
}

BoundVariant parse_bound_variant(const std::string& name) {
  if (name == "ot") return BoundVariant::kOt;
  if (name == "mmd") return BoundVariant::kMmd;
  fail_usage("unknown variant '" + name + "', expected ot or mmd");
}

RunConfig parse_run_config(const json& doc) {
  RunConfig cfg;
  expect_keys(doc, "config",
              {"world", "model", "transport", "kernel", "residual",
               "confidence", "sensitivity", "variant", "tau_list",
               "validation_fraction", "sweep", "gate", "select", "ridge",
               "inputs", "io", "seed"});

  if (doc.contains("world")) {
    const json& w = doc.at("world");
    expect_keys(w, "world",
                {"name", "translation", "rotation_deg", "warp_alpha",
                 "mean_shift_mu", "noise_sigma", "w_star", "n"});
    cfg.world.world = jget_str(w, "name", cfg.world.world);
    cfg.world.translation =
        jget_list<double>(w, "translation", cfg.world.translation, num_element);
    cfg.world.rotation_deg = jget_num(w, "rotation_deg", cfg.world.rotation_deg);
    cfg.world.warp_alpha = jget_num(w, "warp_alpha", cfg.world.warp_alpha);
    cfg.world.mean_shift_mu = jget_list<double>(w, "mean_shift_mu",
                                                cfg.world.mean_shift_mu,
                                                num_element);
    cfg.world.noise_sigma = jget_num(w, "noise_sigma", cfg.world.noise_sigma);
    cfg.world.w_star = jget_list<double>(w, "w_star", cfg.world.w_star,
                                         num_element);
    cfg.world.n = jget_int(w, "n", cfg.world.n);
  }
  if (cfg.world.world.empty()) cfg.world.world = "blobs";

  if (doc.contains("model")) {
    const json& m = doc.at("model");
    expect_keys(m, "model",
                {"kind", "learning_rate", "epochs", "momentum", "l2_penalty",
                 "hidden_width", "logit_clip"});
    cfg.model = predictor_kind_from_string(
        jget_str(m, "kind", predictor_kind_to_string(cfg.model)));
    cfg.train.learning_rate = jget_num(m, "learning_rate", cfg.train.learning_rate);
    cfg.train.epochs = jget_int(m, "epochs", cfg.train.epochs);
    cfg.train.momentum = jget_num(m, "momentum", cfg.train.momentum);
    cfg.train.l2_penalty = jget_num(m, "l2_penalty", cfg.train.l2_penalty);
    cfg.train.hidden_width = jget_int(m, "hidden_width", cfg.train.hidden_width);
    cfg.train.logit_clip = jget_num(m, "logit_clip", cfg.train.logit_clip);
  }

  if (doc.contains("transport")) {
    const json& t = doc.at("transport");
    expect_keys(t, "transport",
                {"epsilon", "iterations", "cost_exponent", "c_h",
                 "subsample_limit"});
    cfg.transport.epsilon = jget_num(t, "epsilon", cfg.transport.epsilon);
    cfg.transport.iterations = jget_int(t, "iterations", cfg.transport.iterations);
    cfg.transport.cost_exponent = static_cast<int>(
        jget_int(t, "cost_exponent", cfg.transport.cost_exponent));
    cfg.transport.c_h = jget_num(t, "c_h", cfg.transport.c_h);
    cfg.transport.subsample_limit =
        jget_int(t, "subsample_limit", cfg.transport.subsample_limit);
  }

  if (doc.contains("kernel")) {
    const json& k = doc.at("kernel");
    expect_keys(k, "kernel", {"bandwidth", "c_kappa", "estimator", "lambda_grid"});
    cfg.kernel.bandwidth = jget_num(k, "bandwidth", cfg.kernel.bandwidth);
    cfg.kernel.c_kappa = jget_num(k, "c_kappa", cfg.kernel.c_kappa);
    const std::string est = jget_str(
        k, "estimator",
        cfg.kernel.estimator == MmdEstimator::kUnbiased ? "unbiased" : "biased");
    if (est == "unbiased") {
      cfg.kernel.estimator = MmdEstimator::kUnbiased;
    } else if (est == "biased") {
      cfg.kernel.estimator = MmdEstimator::kBiased;
    } else {
      fail_usage("unknown estimator '" + est + "', expected unbiased or biased");
    }
    cfg.lambda_grid = jget_list<double>(k, "lambda_grid", cfg.lambda_grid,
                                        num_element);
  }

  if (doc.contains("residual")) {
    const json& r = doc.at("residual");
    expect_keys(r, "residual", {"c_x", "c_xt", "dim"});
    cfg.residual.c_x = jget_num(r, "c_x", cfg.residual.c_x);
    cfg.residual.c_xt = jget_num(r, "c_xt", cfg.residual.c_xt);
    cfg.residual.dim = jget_int(r, "dim", 0);
  } else {
    cfg.residual.dim = 0;  // resolve from the data
  }

  if (doc.contains("confidence")) {
    const json& c = doc.at("confidence");
    expect_keys(c, "confidence", {"delta", "eta"});
    cfg.confidence.delta = jget_num(c, "delta", cfg.confidence.delta);
    cfg.confidence.eta = jget_num(c, "eta", cfg.confidence.eta);
  }

  if (doc.contains("sensitivity")) {
    const json& s = doc.at("sensitivity");
    expect_keys(s, "sensitivity", {"q", "label_mode"});
    cfg.sensitivity.q = jget_num(s, "q", cfg.sensitivity.q);
    cfg.sensitivity.label_mode =
        jget_str(s, "label_mode", cfg.sensitivity.label_mode);
    if (cfg.sensitivity.label_mode != "auto") {
      parse_label_mode(cfg.sensitivity.label_mode);  // reject unknown names now
    }
  }

  cfg.variant = parse_bound_variant(
      jget_str(doc, "variant", bound_variant_name(cfg.variant)));
  cfg.tau_list = jget_list<double>(doc, "tau_list", cfg.tau_list, num_element);
  cfg.validation_fraction =
      jget_num(doc, "validation_fraction", cfg.validation_fraction);
  if (!(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0)) {
    fail_usage("validation_fraction must lie in (0, 1)");
  }

  if (doc.contains("sweep")) {
    const json& s = doc.at("sweep");
    expect_keys(s, "sweep",
                {"severities", "sample_sizes", "seeds", "dev_seeds", "test_size"});
    cfg.sweep.severities =
        jget_list<double>(s, "severities", cfg.sweep.severities, num_element);
    cfg.sweep.sample_sizes = jget_list<std::int64_t>(
        s, "sample_sizes", cfg.sweep.sample_sizes, int_element);
    cfg.sweep.seeds = jget_list<std::uint64_t>(s, "seeds", cfg.sweep.seeds,
                                               seed_element);
    cfg.sweep.dev_seeds = jget_list<std::uint64_t>(s, "dev_seeds",
                                                   cfg.sweep.dev_seeds,
                                                   seed_element);
    cfg.sweep.test_size = jget_int(s, "test_size", cfg.sweep.test_size);
  }

  if (doc.contains("gate")) {
    const json& g = doc.at("gate");
    expect_keys(g, "gate", {"candidates", "max_perturbation"});
    cfg.gate.candidate_count = jget_int(g, "candidates", cfg.gate.candidate_count);
    cfg.gate.max_perturbation =
        jget_num(g, "max_perturbation", cfg.gate.max_perturbation);
  }

  if (doc.contains("select")) {
    const json& s = doc.at("select");
    expect_keys(s, "select", {"batch_size", "rounds", "policy"});
    cfg.select.batch_size = jget_int(s, "batch_size", cfg.select.batch_size);
    cfg.select.rounds = jget_int(s, "rounds", cfg.select.rounds);
    cfg.select.policy = parse_selection_policy(
        jget_str(s, "policy", selection_policy_name(cfg.select.policy)));
  }

  if (doc.contains("ridge")) {
    const json& r = doc.at("ridge");
    expect_keys(r, "ridge", {"dim", "lambda", "scales", "instances", "orthogonal"});
    cfg.ridge.dim = jget_int(r, "dim", cfg.ridge.dim);
    cfg.ridge.lambda = jget_num(r, "lambda", cfg.ridge.lambda);
    cfg.ridge.scales = jget_list<double>(r, "scales", cfg.ridge.scales,
                                         num_element);
    cfg.ridge.instances = jget_int(r, "instances", cfg.ridge.instances);
    cfg.ridge.orthogonal = jget_bool(r, "orthogonal", cfg.ridge.orthogonal);
  }

  if (doc.contains("inputs")) {
    const json& i = doc.at("inputs");
    expect_keys(i, "inputs",
                {"source", "target", "model_q", "model_qt", "dataset", "anchor",
                 "pool", "test", "candidates"});
    cfg.inputs.source = jget_str(i, "source", cfg.inputs.source);
    cfg.inputs.target = jget_str(i, "target", cfg.inputs.target);
    cfg.inputs.model_q = jget_str(i, "model_q", cfg.inputs.model_q);
    cfg.inputs.model_qt = jget_str(i, "model_qt", cfg.inputs.model_qt);
    cfg.inputs.dataset = jget_str(i, "dataset", cfg.inputs.dataset);
    cfg.inputs.anchor = jget_str(i, "anchor", cfg.inputs.anchor);
    cfg.inputs.pool = jget_str(i, "pool", cfg.inputs.pool);
    cfg.inputs.test = jget_str(i, "test", cfg.inputs.test);
    cfg.inputs.candidates = jget_list<std::string>(i, "candidates",
                                                   cfg.inputs.candidates,
                                                   str_element);
  }

  if (doc.contains("io")) {
    const json& io = doc.at("io");
    expect_keys(io, "io", {"out", "format"});
    cfg.out_dir = jget_str(io, "out", cfg.out_dir);
    cfg.format = parse_format(jget_str(
        io, "format", cfg.format == FileFormat::kCsv ? "csv" : "json"));
  }

  cfg.seed = jget_seed(doc, "seed", cfg.seed);
  return cfg;
}

RunConfig parse_run_config_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text.empty() ? "{}" : text);
  } catch (const json::parse_error& e) {
    fail_usage(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_run_config(doc);
}

SeedPlan seed_plan(std::uint64_t master_seed) {
  SeedPlan plan;
  plan.world = mix_seed(master_seed, kWorldSalt);
  plan.train_q = mix_seed(master_seed, kTrainQSalt);
  plan.train_qt = mix_seed(master_seed, kTrainQtSalt);
  plan.split_source = mix_seed(master_seed, kSplitSrcSalt);
  plan.split_target = mix_seed(master_seed, kSplitTgtSalt);
  plan.test = mix_seed(master_seed, kTestSalt);
  return plan;
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
  return json{
      {"world",
       {{"name", cfg.world.world},
        {"translation", cfg.world.translation},
        {"rotation_deg", cfg.world.rotation_deg},
        {"warp_alpha", cfg.world.warp_alpha},
        {"mean_shift_mu", cfg.world.mean_shift_mu},
        {"noise_sigma", cfg.world.noise_sigma},
        {"w_star", cfg.world.w_star},
        {"n", cfg.world.n}}},
      {"model",
       {{"kind", predictor_kind_to_string(cfg.model)},
        {"learning_rate", cfg.train.learning_rate},
        {"epochs", cfg.train.epochs},
        {"momentum", cfg.train.momentum},
        {"l2_penalty", cfg.train.l2_penalty},
        {"hidden_width", cfg.train.hidden_width},
        {"logit_clip", cfg.train.logit_clip}}},
      {"transport",
       {{"epsilon", cfg.transport.epsilon},
        {"iterations", cfg.transport.iterations},
        {"cost_exponent", cfg.transport.cost_exponent},
        {"c_h", cfg.transport.c_h},
        {"subsample_limit", cfg.transport.subsample_limit}}},
      {"kernel",
       {{"bandwidth", cfg.kernel.bandwidth},
        {"c_kappa", cfg.kernel.c_kappa},
        {"estimator",
         cfg.kernel.estimator == MmdEstimator::kUnbiased ? "unbiased" : "biased"},
        {"lambda_grid", cfg.lambda_grid}}},
      {"residual",
       {{"c_x", cfg.residual.c_x},
        {"c_xt", cfg.residual.c_xt},
        {"dim", cfg.residual.dim}}},
      {"confidence",
       {{"delta", cfg.confidence.delta}, {"eta", cfg.confidence.eta}}},
      {"sensitivity",
       {{"q", cfg.sensitivity.q}, {"label_mode", cfg.sensitivity.label_mode}}},
      {"variant", bound_variant_name(cfg.variant)},
      {"tau_list", cfg.tau_list},
      {"validation_fraction", cfg.validation_fraction},
      {"sweep",
       {{"severities", cfg.sweep.severities},
        {"sample_sizes", cfg.sweep.sample_sizes},
        {"seeds", cfg.sweep.seeds},
        {"dev_seeds", cfg.sweep.dev_seeds},
        {"test_size", cfg.sweep.test_size}}},
      {"gate",
       {{"candidates", cfg.gate.candidate_count},
        {"max_perturbation", cfg.gate.max_perturbation}}},
      {"select",
       {{"batch_size", cfg.select.batch_size},
        {"rounds", cfg.select.rounds},
        {"policy", selection_policy_name(cfg.select.policy)}}},
      {"ridge",
       {{"dim", cfg.ridge.dim},
        {"lambda", cfg.ridge.lambda},
        {"scales", cfg.ridge.scales},
        {"instances", cfg.ridge.instances},
        {"orthogonal", cfg.ridge.orthogonal}}},
      {"inputs",
       {{"source", cfg.inputs.source},
        {"target", cfg.inputs.target},
        {"model_q", cfg.inputs.model_q},
        {"model_qt", cfg.inputs.model_qt},
        {"dataset", cfg.inputs.dataset},
        {"anchor", cfg.inputs.anchor},
        {"pool", cfg.inputs.pool},
        {"test", cfg.inputs.test},
        {"candidates", cfg.inputs.candidates}}},
      {"io",
       {{"out", cfg.out_dir},
        {"format", cfg.format == FileFormat::kCsv ? "csv" : "json"}}},
      {"seed", cfg.seed}};
}

namespace {

LabelMode resolve_label_mode(const std::string& setting, const LossSpec& loss) {
  if (setting == "auto") {
    return loss.kind == LossSpec::Kind::kCrossEntropy ? LabelMode::kPseudoLabel
                                                      : LabelMode::kGroundTruth;
  }
  return parse_label_mode(setting);
}

LossSpec loss_for_pair(const Predictor& q, const Predictor& qt,
                       const Dataset& source, const Dataset& target) {
  const bool q_se = q.kind == PredictorKind::kRidgeLinear;
  const bool qt_se = qt.kind == PredictorKind::kRidgeLinear;
  if (q_se != qt_se) fail_usage("the two models use different loss families");
  if (q.output_dim() != qt.output_dim()) {
    fail_usage("the two models disagree on output dimension");
  }
  if (q_se) {
    if (source.kind != LabelKind::kReal || target.kind != LabelKind::kReal) {
      fail_usage("regression models need real-valued labels on both samples");
    }
    return make_squared_error(q.logit_clip);
  }
  if (source.kind != LabelKind::kClass || target.kind != LabelKind::kClass) {
    fail_usage("classifiers need class labels on both samples");
  }
  if (source.class_count != target.class_count) {
    fail_usage("source and target disagree on the class count");
  }
  if (q.output_dim() != source.class_count) {
    fail_usage("model output dimension does not match the class count");
  }
  return make_cross_entropy(source.class_count, q.logit_clip);
}

}  // namespace

SingleRunResult run_bound(const Predictor& q, const Predictor& qt,
                          const Dataset& source, const Dataset& target,
                          const Dataset* source_test, const RunConfig& cfg,
                          const nlohmann::json& extra_echo) {
  validate_dataset(source);
  validate_dataset(target);
  if (source.cols() != target.cols()) {
    fail_usage("source and target feature dimensions differ");
  }
  if (q.input_dim() != source.cols() || qt.input_dim() != source.cols()) {
    fail_usage("model input dimension does not match the data");
  }
  const LossSpec loss = loss_for_pair(q, qt, source, target);

  SplitSpec src_split{cfg.validation_fraction, source.kind == LabelKind::kClass,
                      mix_seed(cfg.seed, kSplitSrcSalt)};
  SplitSpec tgt_split{cfg.validation_fraction, target.kind == LabelKind::kClass,
                      mix_seed(cfg.seed, kSplitTgtSalt)};
  const SplitResult src = split(source, src_split);
  const SplitResult tgt = split(target, tgt_split);

  OtTerms terms;
  terms.g_q_val = validation_gap(q, loss, src.train, src.validation);
  terms.g_qt_val = validation_gap(qt, loss, tgt.train, tgt.validation);
  const OutputDistance od = model_change(q, qt, target.features, loss);
  terms.model_change = od.scaled;
  terms.out_disc = od.mean_distance;

  const LabelMode mode = resolve_label_mode(cfg.sensitivity.label_mode, loss);
  // Pseudo labels always come from the incumbent: at decision time the
  // replacement's labels on fresh data are exactly what is in question.
  const LipschitzEstimate lip_q =
      lipschitz_proxy(q, loss, src.validation, cfg.sensitivity.q, mode,
                      cfg.confidence.eta, &q);
  const LipschitzEstimate lip_qt =
      lipschitz_proxy(qt, loss, tgt.validation, cfg.sensitivity.q, mode,
                      cfg.confidence.eta, &q);

  const double w1 =
      sinkhorn_divergence(source.features, target.features, cfg.transport);
  terms.empirical_shift_penalty =
      empirical_shift_penalty(lip_q.value, lip_qt.value, cfg.transport.c_h, w1);

  const std::int64_t n_src = source.rows();
  const std::int64_t n_tgt = target.rows();
  // Conservative sample count for the shared label-noise remainder: the
  // smaller sample gives the larger (valid) allowance.
  terms.label_noise_remainder = label_noise_remainder(
      std::min(n_src, n_tgt), loss.bound_m, cfg.confidence.delta);
  terms.validation_set_error =
      validation_set_error(loss.bound_m, src.validation.rows(),
                           tgt.validation.rows(), cfg.confidence.eta);

  ResidualConfig residual = cfg.residual;
  residual.delta = cfg.confidence.delta;
  if (residual.dim == 0) residual.dim = source.cols();
  const double eps_n = population_residual(n_src, residual);
  terms.population_residual =
      population_residual_term(lip_qt.value, cfg.transport.c_h, eps_n);

  AssembleContext ctx;
  ctx.config_echo = run_config_to_json(cfg);
  json resolved{{"label_mode", label_mode_name(mode)},
                {"residual_dim", residual.dim},
                {"n_source", n_src},
                {"n_target", n_tgt},
                {"validation_rows_source", src.validation.rows()},
                {"validation_rows_target", tgt.validation.rows()},
                {"lipschitz_q", lip_q.value},
                {"lipschitz_qt", lip_qt.value},
                {"w1", w1}};
  if (source_test != nullptr) {
    validate_dataset(*source_test);
    ctx.delta_r = empirical_risk(qt, loss, *source_test) -
                  empirical_risk(q, loss, *source_test);
    resolved["test_rows"] = source_test->rows();
  }

  SingleRunResult out;
  out.w1 = w1;
  out.lip_q = lip_q.value;
  out.lip_qt = lip_qt.value;

  if (cfg.variant == BoundVariant::kOt) {
    out.distance = w1;
    ctx.config_echo["resolved"] = resolved;
    if (!extra_echo.empty()) ctx.config_echo["run"] = extra_echo;
    out.report = assemble_ot(terms, ctx);
  } else {
    const MmdResult mres = mmd(source.features, target.features, cfg.kernel);
    out.mmd_value = mres.mmd;
    out.distance = mres.mmd;
    // The norm estimate must live in the same RKHS as the discrepancy, so
    // the KRR reuses the exact bandwidth the MMD resolved.
    KernelConfig krr_cfg = cfg.kernel;
    krr_cfg.bandwidth = mres.bandwidth;
    const RkhsEstimate rkhs =
        estimate_rkhs_norm(tgt.validation, qt, loss, krr_cfg, cfg.lambda_grid);
    out.b_hat = rkhs.b_hat;
    MmdExtras extras;
    extras.empirical_shift_ot = lip_q.value * cfg.transport.c_h * w1;
    extras.b_hat = rkhs.b_hat;
    extras.mmd_hat = mres.mmd;
    extras.concentration =
        mmd_concentration(n_src, cfg.kernel, cfg.confidence.delta);
    resolved["bandwidth"] = mres.bandwidth;
    resolved["krr_lambda"] = rkhs.lambda;
    resolved["b_hat"] = rkhs.b_hat;
    ctx.config_echo["resolved"] = resolved;
    if (!extra_echo.empty()) ctx.config_echo["run"] = extra_echo;
    out.report = assemble_mmd(terms, extras, ctx);
  }

  out.q = q;
  out.qt = qt;
  out.source = source;
  out.target = target;
  return out;
}

SingleRunResult single_run(const RunConfig& cfg) {
  ShiftConfig world = cfg.world;
  world.seed = mix_seed(cfg.seed, kWorldSalt);
  const ShiftedPair pair = make_world(world);

  SplitSpec src_split{cfg.validation_fraction,
                      pair.source.kind == LabelKind::kClass,
                      mix_seed(cfg.seed, kSplitSrcSalt)};
  SplitSpec tgt_split{cfg.validation_fraction,
                      pair.target.kind == LabelKind::kClass,
                      mix_seed(cfg.seed, kSplitTgtSalt)};
  const Dataset src_train = split(pair.source, src_split).train;
  const Dataset tgt_train = split(pair.target, tgt_split).train;

  TrainConfig train_q = cfg.train;
  train_q.seed = mix_seed(cfg.seed, kTrainQSalt);
  TrainConfig train_qt = cfg.train;
  train_qt.seed = mix_seed(cfg.seed, kTrainQtSalt);
  const Predictor q = train(cfg.model, src_train, train_q);
  const Predictor qt = train(cfg.model, tgt_train, train_qt);

  ShiftConfig test_world = world;
  test_world.n = cfg.sweep.test_size;
  test_world.seed = mix_seed(cfg.seed, kTestSalt);
  const Dataset test = make_world(test_world).source;

  return run_bound(q, qt, pair.source, pair.target, &test, cfg);
}

// ---- commands ---------------------------------------------------------------

namespace {

std::string out_path(const RunConfig& cfg, const std::string& name) {
  return (fs::path(cfg.out_dir) / name).string();
}

json cmd_synth(const RunConfig& cfg) {
  ShiftConfig world = cfg.world;
  world.seed = mix_seed(cfg.seed, kWorldSalt);
  const ShiftedPair pair = make_world(world);
  const std::string ext = cfg.format == FileFormat::kCsv ? ".csv" : ".json";
  const std::string source_path = out_path(cfg, "source" + ext);
  const std::string target_path = out_path(cfg, "target" + ext);
  save_dataset(pair.source, source_path, cfg.format);
  save_dataset(pair.target, target_path, cfg.format);
  return json{{"command", "synth"},
              {"source", source_path},
              {"target", target_path},
              {"rows", pair.source.rows()},
              {"cols", pair.source.cols()},
              {"world", run_config_to_json(cfg).at("world")},
              {"world_seed", world.seed}};
}

json cmd_train(const RunConfig& cfg) {
  if (cfg.inputs.dataset.empty()) {
    fail_usage("train needs inputs.dataset in the config");
  }
  const std::int32_t classes =
      cfg.model == PredictorKind::kRidgeLinear ? kRealLabels : 0;
  const Dataset ds =
      load_dataset(cfg.inputs.dataset, sniff_format(cfg.inputs.dataset), classes);
  TrainConfig tc = cfg.train;
  tc.seed = mix_seed(cfg.seed, kTrainQSalt);
  const Predictor p = train(cfg.model, ds, tc);
  const std::string model_path = out_path(cfg, "model.json");
  save_predictor(p, model_path);

  const LossSpec loss = loss_for(p, ds.class_count);
  json summary{{"command", "train"},
               {"model", model_path},
               {"kind", predictor_kind_to_string(p.kind)},
               {"rows", ds.rows()},
               {"mean_loss", mean_loss(p, loss, ds)}};
  if (ds.kind == LabelKind::kClass) {
    const std::vector<std::int32_t> predicted = argmax_labels(p, ds.features);
    std::int64_t hits = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
      if (predicted[i] == ds.labels[i]) ++hits;
    }
    summary["accuracy"] =
        static_cast<double>(hits) / static_cast<double>(ds.rows());
  }
  return summary;
}

json cmd_diagnose(const RunConfig& cfg) {
  if (cfg.inputs.source.empty() || cfg.inputs.target.empty() ||
      cfg.inputs.model_q.empty() || cfg.inputs.model_qt.empty()) {
    fail_usage("diagnose needs inputs.source, inputs.target, inputs.model_q, "
               "and inputs.model_qt");
  }
  const Predictor q = load_predictor(cfg.inputs.model_q);
  const Predictor qt = load_predictor(cfg.inputs.model_qt);
  const std::int32_t classes =
      q.kind == PredictorKind::kRidgeLinear ? kRealLabels : 0;
  const Dataset source =
      load_dataset(cfg.inputs.source, sniff_format(cfg.inputs.source), classes);
  const Dataset target =
      load_dataset(cfg.inputs.target, sniff_format(cfg.inputs.target), classes);

  Dataset test;
  const Dataset* test_ptr = nullptr;
  if (!cfg.inputs.test.empty()) {
    test = load_dataset(cfg.inputs.test, sniff_format(cfg.inputs.test), classes);
    test_ptr = &test;
  }

  const SingleRunResult run = run_bound(q, qt, source, target, test_ptr, cfg);
  const json doc = report_to_json(run.report);
  validate_report(doc);
  write_text(out_path(cfg, "report.json"), doc.dump(2) + "\n");
  return doc;
}

Predictor scale_output_layer(const Predictor& base, double factor) {
  Predictor scaled = base;
  if (base.kind == PredictorKind::kMlp) {
    scaled.w2 *= factor;
    scaled.b2 *= factor;
  } else {
    scaled.w1 *= factor;
    scaled.b1 *= factor;
  }
  return scaled;
}

std::string candidate_id(std::int64_t k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "cand-%02lld", static_cast<long long>(k));
  return buf;
}

// Spearman/AUROC/AUPRC with degenerate cases reported as nulls so one flat
// threshold cannot abort a whole table.
json safe_metric(const std::function<double()>& compute) {
  try {
    return compute();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kNumeric) {
      return json{{"undefined", e.what()}};
    }
    throw;
  }
}

json cmd_gate(const RunConfig& cfg) {
  Predictor reference;
  std::vector<Predictor> candidates;
  std::vector<std::string> ids;
  Dataset anchor;
  Dataset target;
  Dataset test;
  bool have_test = false;

  if (!cfg.inputs.candidates.empty()) {
    if (cfg.inputs.candidates.size() < 2) {
      fail_usage("gate needs at least two candidates");
    }
    if (cfg.inputs.model_q.empty() || cfg.inputs.target.empty() ||
        (cfg.inputs.anchor.empty() && cfg.inputs.source.empty())) {
      fail_usage("gate needs inputs.model_q, inputs.target, and an anchor "
                 "dataset (inputs.anchor or inputs.source)");
    }
    reference = load_predictor(cfg.inputs.model_q);
    const std::int32_t classes =
        reference.kind == PredictorKind::kRidgeLinear ? kRealLabels : 0;
    const std::string anchor_path =
        cfg.inputs.anchor.empty() ? cfg.inputs.source : cfg.inputs.anchor;
    anchor = load_dataset(anchor_path, sniff_format(anchor_path), classes);
    target =
        load_dataset(cfg.inputs.target, sniff_format(cfg.inputs.target), classes);
    for (std::size_t k = 0; k < cfg.inputs.candidates.size(); ++k) {
      candidates.push_back(load_predictor(cfg.inputs.candidates[k]));
      ids.push_back(candidate_id(static_cast<std::int64_t>(k)));
    }
    if (!cfg.inputs.test.empty()) {
      test = load_dataset(cfg.inputs.test, sniff_format(cfg.inputs.test), classes);
      have_test = true;
    }
  } else {
    const std::int64_t count = cfg.gate.candidate_count;
    if (count < 2) fail_usage("gate needs at least two candidates");

    ShiftConfig world = cfg.world;
    world.seed = mix_seed(cfg.seed, kWorldSalt);
    const ShiftedPair pair = make_world(world);
    anchor = pair.source;
    target = pair.target;

    SplitSpec src_split{cfg.validation_fraction,
                        anchor.kind == LabelKind::kClass,
                        mix_seed(cfg.seed, kSplitSrcSalt)};
    SplitSpec tgt_split{cfg.validation_fraction,
                        target.kind == LabelKind::kClass,
                        mix_seed(cfg.seed, kSplitTgtSalt)};
    TrainConfig train_q = cfg.train;
    train_q.seed = mix_seed(cfg.seed, kTrainQSalt);
    TrainConfig train_qt = cfg.train;
    train_qt.seed = mix_seed(cfg.seed, kTrainQtSalt);
    reference = train(cfg.model, split(anchor, src_split).train, train_q);
    const Predictor tuned =
        train(cfg.model, split(target, tgt_split).train, train_qt);

    // A one-knob damage dial: blend the tuned model toward its own sign
    // flip. Output disagreement and true harm both grow with the blend, so
    // ranking power is measurable without fine-tuning many real variants.
    for (std::int64_t k = 0; k < count; ++k) {
      const double s = cfg.gate.max_perturbation * static_cast<double>(k) /
                       static_cast<double>(count - 1);
      candidates.push_back(scale_output_layer(tuned, 1.0 - 2.0 * s));
      ids.push_back(candidate_id(k));
    }

    ShiftConfig test_world = world;
    test_world.n = cfg.sweep.test_size;
    test_world.seed = mix_seed(cfg.seed, kTestSalt);
    test = make_world(test_world).source;
    have_test = true;
  }

  const LossSpec loss = loss_for_pair(reference, reference, anchor, target);
  const LabelMode mode = resolve_label_mode(cfg.sensitivity.label_mode, loss);
  SplitSpec tgt_split{cfg.validation_fraction, target.kind == LabelKind::kClass,
                      mix_seed(cfg.seed, kSplitTgtSalt)};
  const Dataset holdout = split(target, tgt_split).validation;

  // One distance serves every candidate; only the factor is per-candidate.
  const GateVariant variant = cfg.variant == BoundVariant::kOt
                                  ? GateVariant::kTraceW
                                  : GateVariant::kTraceMmd;
  double distance = 0.0;
  KernelConfig kernel = cfg.kernel;
  if (variant == GateVariant::kTraceW) {
    distance = sinkhorn_divergence(anchor.features, target.features,
                                   cfg.transport);
  } else {
    if (kernel.bandwidth == 0.0) {
      kernel.bandwidth = median_bandwidth(anchor.features, target.features);
    }
    kernel.estimator = MmdEstimator::kBiased;
    distance = mmd(anchor.features, target.features, kernel).mmd;
  }

  const double reference_risk =
      have_test ? empirical_risk(reference, loss, test) : 0.0;

  json rows = json::array();
  std::vector<double> scores, msps, delta_rs;
  std::string csv =
      "id,score,out_disc,distance,factor,msp,delta_r,abs_delta_r\n";
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    GateEstimates est;
    est.distance = distance;
    if (variant == GateVariant::kTraceW) {
      est.lipschitz = lipschitz_proxy(candidates[k], loss, holdout,
                                      cfg.sensitivity.q, mode,
                                      cfg.confidence.eta, &reference)
                          .value;
    } else {
      est.b_hat = estimate_rkhs_norm(holdout, candidates[k], loss, kernel,
                                     cfg.lambda_grid)
                      .b_hat;
    }
    const GateScore gs = gate_score(ids[k], candidates[k], reference,
                                    anchor.features, target.features, variant,
                                    est);
    const double msp = msp_score(candidates[k], anchor.features);
    scores.push_back(gs.score);
    msps.push_back(msp);

    json row{{"id", gs.candidate_id}, {"score", gs.score},
             {"out_disc", gs.out_disc}, {"distance", gs.distance},
             {"factor", gs.factor},   {"msp", msp},
             {"variant", gate_variant_name(gs.variant)}};
    std::string csv_dr = ",";
    if (have_test) {
      const double dr = empirical_risk(candidates[k], loss, test) - reference_risk;
      delta_rs.push_back(dr);
      row["delta_r"] = dr;
      row["abs_delta_r"] = std::abs(dr);
      csv_dr = double_str(dr) + "," + double_str(std::abs(dr));
    } else {
      csv_dr = ",";
    }
    rows.push_back(row);
    csv += gs.candidate_id + "," + double_str(gs.score) + "," +
           double_str(gs.out_disc) + "," + double_str(gs.distance) + "," +
           double_str(gs.factor) + "," + double_str(msp) + "," + csv_dr + "\n";
  }

  json summary{{"command", "gate"},
               {"variant", gate_variant_name(variant)},
               {"distance", distance},
               {"candidates", rows}};
  if (have_test) {
    std::vector<double> abs_dr(delta_rs.size());
    std::transform(delta_rs.begin(), delta_rs.end(), abs_dr.begin(),
                   [](double v) { return std::abs(v); });
    summary["spearman"] = json{
        {"gate", safe_metric([&] { return spearman_rho(scores, abs_dr); })},
        {"msp", safe_metric([&] { return spearman_rho(msps, abs_dr); })}};
    json taus = json::array();
    for (double tau : cfg.tau_list) {
      const GateLabeling labeling = label_harmful(delta_rs, tau);
      std::int64_t positives =
          std::count(labeling.labels.begin(), labeling.labels.end(), true);
      json entry{{"tau", tau}, {"positives", positives}};
      entry["auroc_gate"] =
          safe_metric([&] { return auroc(scores, labeling.labels); });
      entry["auprc_gate"] =
          safe_metric([&] { return auprc(scores, labeling.labels); });
      entry["auroc_msp"] =
          safe_metric([&] { return auroc(msps, labeling.labels); });
      entry["auprc_msp"] =
          safe_metric([&] { return auprc(msps, labeling.labels); });
      taus.push_back(entry);
    }
    summary["thresholds"] = taus;
  } else {
    summary["note"] = "no labeled test data: harm metrics omitted";
  }

  write_text(out_path(cfg, "gate.csv"), csv);
  write_text(out_path(cfg, "gate.json"), summary.dump(2) + "\n");
  return summary;
}

ShiftConfig sweep_world(const ShiftConfig& base, double severity) {
  ShiftConfig w = base;
  if (w.world == "blobs") {
    w.translation = {severity, 0.0};
  } else if (w.world == "moons") {
    w.warp_alpha = severity;
  } else if (w.world == "gaussian-mean") {
    if (w.mean_shift_mu.empty()) {
      w.mean_shift_mu = {severity, 0.0};
    } else {
      double norm = 0.0;
      for (double v : w.mean_shift_mu) norm += v * v;
      norm = std::sqrt(norm);
      if (norm == 0.0) fail_usage("mean_shift_mu direction must be nonzero");
      for (double& v : w.mean_shift_mu) v *= severity / norm;
    }
  } else {
    fail_usage("unknown world '" + w.world + "'");
  }
  return w;
}

json cmd_sweep(const RunConfig& cfg) {
  if (cfg.sweep.severities.empty() || cfg.sweep.sample_sizes.empty() ||
      cfg.sweep.seeds.empty()) {
    fail_usage("sweep needs severities, sample_sizes, and seeds");
  }

  const auto run_once = [&](std::uint64_t entry_seed, double severity,
                            std::int64_t n) {
    RunConfig rc = cfg;
    rc.world = sweep_world(cfg.world, severity);
    rc.world.n = n;
    rc.seed = mix_seed(mix_seed(cfg.seed, entry_seed),
                       mix_seed(static_cast<std::uint64_t>(n),
                                std::bit_cast<std::uint64_t>(severity)));
    return single_run(rc);
  };

  // Calibration runs: dev seeds crossed with the extreme severities, padded
  // deterministically when the grid is too small for the 3-5 run window.
  std::vector<double> dev_sevs{cfg.sweep.severities.front()};
  if (cfg.sweep.severities.back() != cfg.sweep.severities.front()) {
    dev_sevs.push_back(cfg.sweep.severities.back());
  }
  std::vector<std::pair<std::uint64_t, double>> dev_plan;
  for (std::uint64_t s : cfg.sweep.dev_seeds) {
    for (double sev : dev_sevs) dev_plan.emplace_back(s, sev);
  }
  if (dev_plan.size() > 5) dev_plan.resize(5);
  for (std::uint64_t j = 0; dev_plan.size() < 3; ++j) {
    const std::uint64_t base =
        cfg.sweep.dev_seeds.empty()
            ? cfg.seed
            : cfg.sweep.dev_seeds[j % cfg.sweep.dev_seeds.size()];
    dev_plan.emplace_back(mix_seed(base, kDevSalt + j),
                          dev_sevs[j % dev_sevs.size()]);
  }

  const std::int64_t dev_n = cfg.sweep.sample_sizes.front();
  std::vector<std::pair<double, double>> dev_pairs;
  std::vector<std::string> dev_ids;
  for (const auto& [dev_seed, sev] : dev_plan) {
    const SingleRunResult r = run_once(dev_seed, sev, dev_n);
    dev_pairs.emplace_back(r.report.out_disc, r.lip_qt * r.distance);
    dev_ids.push_back("dev-seed" + std::to_string(dev_seed) + "-sev" +
                      double_str(sev));
  }
  const ProxyCalibration cal = calibrate_c_hat(dev_pairs, dev_ids);

  json records = json::array();
  std::vector<double> proxies, abs_drs, signed_drs;
  std::int64_t ot_valid = 0, mmd_valid = 0;
  std::string csv =
      "severity,n,seed,delta_r,abs_delta_r,proxy,distance,g_q_val,g_qt_val,"
      "model_change,out_disc,empirical_shift_penalty,label_noise_remainder,"
      "validation_set_error,population_residual,total_ot,"
      "mmd_empirical_shift_ot,mmd_population_term,total_mmd,variant\n";

  for (double severity : cfg.sweep.severities) {
    for (std::int64_t n : cfg.sweep.sample_sizes) {
      for (std::uint64_t seed : cfg.sweep.seeds) {
        const SingleRunResult r = run_once(seed, severity, n);
        const DiagnosticReport& rep = r.report;
        const double proxy =
            trace_proxy(rep.out_disc, r.lip_qt, r.distance, cal);
        proxies.push_back(proxy);
        signed_drs.push_back(rep.delta_r);
        abs_drs.push_back(rep.abs_delta_r);
        if (rep.total_ot >= rep.abs_delta_r) ++ot_valid;
        if (rep.has_mmd && rep.total_mmd >= rep.abs_delta_r) ++mmd_valid;

        json record{{"severity", severity},
                    {"n", n},
                    {"seed", seed},
                    {"proxy", proxy},
                    {"delta_r", rep.delta_r},
                    {"abs_delta_r", rep.abs_delta_r},
                    {"distance", r.distance},
                    {"g_q_val", rep.g_q_val},
                    {"g_qt_val", rep.g_qt_val},
                    {"model_change", rep.model_change},
                    {"out_disc", rep.out_disc},
                    {"empirical_shift_penalty", rep.empirical_shift_penalty},
                    {"label_noise_remainder", rep.label_noise_remainder},
                    {"validation_set_error", rep.validation_set_error},
                    {"population_residual", rep.population_residual},
                    {"total_ot", rep.total_ot}};
        if (rep.has_mmd) {
          record["mmd_empirical_shift_ot"] = rep.mmd_empirical_shift_ot;
          record["mmd_population_term"] = rep.mmd_population_term;
          record["total_mmd"] = rep.total_mmd;
        }
        records.push_back(record);

        csv += double_str(severity) + "," + std::to_string(n) + "," +
               std::to_string(seed) + "," + double_str(rep.delta_r) + "," +
               double_str(rep.abs_delta_r) + "," + double_str(proxy) + "," +
               double_str(r.distance) + "," + double_str(rep.g_q_val) + "," +
               double_str(rep.g_qt_val) + "," + double_str(rep.model_change) +
               "," + double_str(rep.out_disc) + "," +
               double_str(rep.empirical_shift_penalty) + "," +
               double_str(rep.label_noise_remainder) + "," +
               double_str(rep.validation_set_error) + "," +
               double_str(rep.population_residual) + "," +
               double_str(rep.total_ot) + ",";
        if (rep.has_mmd) {
          csv += double_str(rep.mmd_empirical_shift_ot) + "," +
                 double_str(rep.mmd_population_term) + "," +
                 double_str(rep.total_mmd);
        } else {
          csv += ",,";
        }
        csv += "," + bound_variant_name(cfg.variant) + "\n";
      }
    }
  }

  const auto count = static_cast<double>(proxies.size());
  json summary{{"command", "sweep"},
               {"variant", bound_variant_name(cfg.variant)},
               {"runs", proxies.size()},
               {"calibration",
                {{"c_hat", cal.c_hat}, {"dev_candidates", cal.dev_candidate_ids}}},
               {"records", records},
               {"bound_validity",
                {{"ot", static_cast<double>(ot_valid) / count},
                 {"mmd", cfg.variant == BoundVariant::kMmd
                             ? json(static_cast<double>(mmd_valid) / count)
                             : json()}}}};
  summary["spearman"] =
      safe_metric([&] { return spearman_rho(proxies, abs_drs); });
  if (summary["spearman"].is_object()) {
    summary["flag"] = "rank correlation undefined over this sweep";
  }
  json taus = json::array();
  for (double tau : cfg.tau_list) {
    const GateLabeling labeling = label_harmful(signed_drs, tau);
    json entry{{"tau", tau}};
    entry["auroc"] = safe_metric([&] { return auroc(proxies, labeling.labels); });
    entry["auprc"] = safe_metric([&] { return auprc(proxies, labeling.labels); });
    taus.push_back(entry);
  }
  summary["thresholds"] = taus;

  write_text(out_path(cfg, "sweep_runs.csv"), csv);
  write_text(out_path(cfg, "sweep.json"), summary.dump(2) + "\n");
  return summary;
}

json cmd_select(const RunConfig& cfg) {
  Eigen::MatrixXd anchor, pool;
  if (!cfg.inputs.anchor.empty() || !cfg.inputs.pool.empty()) {
    if (cfg.inputs.anchor.empty() || cfg.inputs.pool.empty()) {
      fail_usage("select needs both inputs.anchor and inputs.pool");
    }
    anchor = load_dataset(cfg.inputs.anchor, sniff_format(cfg.inputs.anchor), 0)
                 .features;
    pool = load_dataset(cfg.inputs.pool, sniff_format(cfg.inputs.pool), 0)
               .features;
  } else {
    ShiftConfig world = cfg.world;
    world.seed = mix_seed(cfg.seed, kWorldSalt);
    const ShiftedPair pair = make_world(world);
    anchor = pair.source.features;
    pool = pair.target.features;
  }

  if (cfg.select.batch_size < 1 || cfg.select.rounds < 1) {
    fail_usage("select needs positive batch_size and rounds");
  }
  const std::int64_t total = cfg.select.batch_size * cfg.select.rounds;

  SelectionConfig scfg;
  scfg.policy = cfg.select.policy;
  scfg.transport = cfg.transport;
  scfg.kernel = cfg.kernel;
  std::vector<double> steps;
  const std::vector<std::int64_t> picked =
      select_batch(pool, anchor, total, scfg, &steps);

  json rounds = json::array();
  for (std::int64_t r = 0; r < cfg.select.rounds; ++r) {
    const auto begin = static_cast<std::size_t>(r * cfg.select.batch_size);
    const auto end = static_cast<std::size_t>((r + 1) * cfg.select.batch_size);
    rounds.push_back(json{
        {"round", r},
        {"indices", std::vector<std::int64_t>(picked.begin() + begin,
                                              picked.begin() + end)},
        {"final_distance", steps[end - 1]}});
  }
  json summary{{"command", "select"},
               {"policy", selection_policy_name(cfg.select.policy)},
               {"batch_size", cfg.select.batch_size},
               {"rounds", rounds},
               {"selected", picked},
               {"step_distances", steps}};
  write_text(out_path(cfg, "select.json"), summary.dump(2) + "\n");
  return summary;
}

double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) fail_usage("slope undefined: sweep points coincide");
  return sxy / sxx;
}

json cmd_ridge_check(const RunConfig& cfg) {
  const RidgeCheckSettings& rs = cfg.ridge;
  if (rs.scales.size() < 2) {
    fail_usage("ridge check needs at least two sweep scales for a slope fit");
  }
  if (rs.dim < 1) fail_usage("ridge dimension must be positive");

  std::mt19937_64 rng(mix_seed(cfg.seed, kRidgeSalt));
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto draw = [&](std::int64_t d) {
    Eigen::VectorXd v(d);
    for (std::int64_t i = 0; i < d; ++i) v(i) = gauss(rng);
    return v;
  };

  Eigen::VectorXd w_star = draw(rs.dim);
  while (w_star.norm() < 1e-6) w_star = draw(rs.dim);
  Eigen::VectorXd direction = draw(rs.dim);
  if (rs.orthogonal) {
    const Eigen::VectorXd unit = w_star.normalized();
    direction -= unit.dot(direction) * unit;
  }
  while (direction.norm() < 1e-6) direction = draw(rs.dim);
  direction.normalize();

  json sweep_rows = json::array();
  std::vector<double> log_scale, log_dw, log_dr;
  bool degenerate = true;
  for (double t : rs.scales) {
    RidgeWorld world;
    world.w_star = w_star;
    world.mu = t * direction;
    world.lambda = rs.lambda;
    const RidgePopulation pop = ridge_population_weights(world);
    const Eigen::VectorXd dw = ridge_delta_w(world);
    const double dw_norm = dw.norm();
    const double dr = std::abs(ridge_source_risk(world, pop.w_qt) -
                               ridge_source_risk(world, pop.w_q));
    sweep_rows.push_back(json{{"scale", t},
                              {"delta_w_norm", dw_norm},
                              {"abs_delta_r", dr}});
    if (dw_norm > 1e-14) {
      degenerate = false;
      log_scale.push_back(std::log(t));
      log_dw.push_back(std::log(dw_norm));
      log_dr.push_back(std::log(std::max(dr, 1e-300)));
    }
  }

  json slopes;
  bool slopes_pass = true;
  if (degenerate) {
    slopes = json{{"skipped", "mu is orthogonal to w*: the weight update is "
                              "identically zero"}};
  } else {
    if (log_scale.size() < 2) fail_usage("too few non-degenerate sweep points");
    const double dw_vs_mu = fit_slope(log_scale, log_dw);
    const double dr_vs_dw = fit_slope(log_dw, log_dr);
    const double dr_vs_mu = fit_slope(log_scale, log_dr);
    const bool pass_dw = std::abs(dw_vs_mu - 2.0) <= 0.05;
    const bool pass_dr = std::abs(dr_vs_dw - 1.0) <= 0.05;
    slopes_pass = pass_dw && pass_dr;
    slopes = json{
        {"delta_w_vs_mu",
         {{"slope", dw_vs_mu}, {"expected", 2.0}, {"tolerance", 0.05},
          {"pass", pass_dw}}},
        {"delta_r_vs_delta_w",
         {{"slope", dr_vs_dw}, {"expected", 1.0}, {"tolerance", 0.05},
          {"pass", pass_dr}}},
        // Both sides scale quadratically in the shift magnitude; recorded
        // for completeness, not gated.
        {"delta_r_vs_mu", {{"slope", dr_vs_mu}, {"informational", true}}}};
  }

  // Closed form versus a direct linear solve on random instances.
  double max_gap = 0.0;
  std::uniform_int_distribution<std::int64_t> dim_dist(1, 8);
  std::uniform_real_distribution<double> lambda_dist(0.1, 3.0);
  for (std::int64_t i = 0; i < rs.instances; ++i) {
    const std::int64_t d = dim_dist(rng);
    RidgeWorld world;
    world.w_star = draw(d);
    world.mu = draw(d);
    world.lambda = lambda_dist(rng);
    const Eigen::MatrixXd lhs =
        (1.0 + world.lambda) * Eigen::MatrixXd::Identity(d, d) +
        world.mu * world.mu.transpose();
    const Eigen::VectorXd rhs =
        (Eigen::MatrixXd::Identity(d, d) + world.mu * world.mu.transpose()) *
        world.w_star;
    const Eigen::VectorXd w_qt = lhs.ldlt().solve(rhs);
    const Eigen::VectorXd w_q = world.w_star / (1.0 + world.lambda);
    const double gap = ((w_qt - w_q) - ridge_delta_w(world)).norm();
    max_gap = std::max(max_gap, gap);
  }
  const bool closed_form_pass = max_gap <= 1e-10;

  json summary{{"command", "ridge-check"},
               {"dim", rs.dim},
               {"lambda", rs.lambda},
               {"sweep", sweep_rows},
               {"slopes", slopes},
               {"closed_form",
                {{"instances", rs.instances},
                 {"max_gap", max_gap},
                 {"tolerance", 1e-10},
                 {"pass", closed_form_pass}}},
               {"overall_pass", slopes_pass && closed_form_pass}};
  write_text(out_path(cfg, "ridge_check.json"), summary.dump(2) + "\n");
  return summary;
}

}  // namespace

nlohmann::json run_command_json(const std::string& command,
                                const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) fail_io("cannot create output directory '" + cfg.out_dir + "'");

  if (command == "synth") return cmd_synth(cfg);
  if (command == "train") return cmd_train(cfg);
  if (command == "diagnose") return cmd_diagnose(cfg);
  if (command == "gate") return cmd_gate(cfg);
  if (command == "sweep") return cmd_sweep(cfg);
  if (command == "select") return cmd_select(cfg);
  if (command == "ridge-check") return cmd_ridge_check(cfg);
  fail_usage("unknown command '" + command +
             "', expected one of synth, train, diagnose, gate, sweep, select, "
             "ridge-check");
}

std::string run_command(const std::string& command,
                        const std::string& config_json) {
  const RunConfig cfg = parse_run_config_text(config_json);
  return run_command_json(command, cfg).dump(2) + "\n";
}

}  // namespace tracekit
