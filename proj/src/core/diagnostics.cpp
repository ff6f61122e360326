#include "core/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "core/common.hpp"

namespace tracekit {
namespace {

void check_term(double value, const char* name) {
  if (!std::isfinite(value)) {
    fail_numeric(std::string("report term ") + name + " is not finite");
  }
  if (value < 0.0) {
    fail_numeric(std::string("report term ") + name +
                 " is negative, which indicates an upstream bug");
  }
}

double checked_sum(const std::vector<std::pair<const char*, double>>& terms) {
  double total = 0.0;
  for (const auto& [name, value] : terms) {
    check_term(value, name);
    total += value;
  }
  return total;
}

void fill_delta_r(DiagnosticReport& report, const AssembleContext& ctx) {
  if (!ctx.delta_r.has_value()) return;
  const double dr = *ctx.delta_r;
  if (!std::isfinite(dr)) fail_numeric("supplied risk change is not finite");
  report.has_delta_r = true;
  report.delta_r = dr;
  report.abs_delta_r = std::abs(dr);
  if (report.abs_delta_r > 0.0) {
    report.has_bound_ratio = true;
    report.bound_ratio = report.total_ot / report.abs_delta_r;
  }
}

double median_of(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t k = values.size();
  if (k % 2 == 1) return values[k / 2];
  return (values[k / 2 - 1] + values[k / 2]) / 2.0;
}

}  // namespace

double empirical_risk(const Predictor& p, const LossSpec& loss,
                      const Dataset& ds) {
  return mean_loss(p, loss, ds);
}

double validation_gap(const Predictor& p, const LossSpec& loss,
                      const Dataset& train, const Dataset& val) {
  return std::abs(mean_loss(p, loss, val) - mean_loss(p, loss, train));
}

OutputDistance model_change(const Predictor& p_q, const Predictor& p_qt,
                            const Eigen::MatrixXd& target_inputs,
                            const LossSpec& loss) {
  if (target_inputs.rows() == 0) {
    fail_usage("model_change needs at least one target input");
  }
  if (p_q.input_dim() != target_inputs.cols() ||
      p_qt.input_dim() != target_inputs.cols()) {
    fail_usage("predictor input dimension does not match the target inputs");
  }
  if (p_q.output_dim() != p_qt.output_dim()) {
    fail_usage("predictors disagree on output dimension");
  }
  const Eigen::MatrixXd za = forward_matrix(p_q, target_inputs);
  const Eigen::MatrixXd zb = forward_matrix(p_qt, target_inputs);
  const double mean = (za - zb).rowwise().norm().mean();
  if (!std::isfinite(mean)) fail_numeric("non-finite output distance");
  return OutputDistance{loss.lipschitz * mean, mean};
}

double label_noise_remainder(std::int64_t n, double m_bound, double delta) {
  if (n < 1) fail_usage("label_noise_remainder needs a positive sample size");
  if (!(delta > 0.0 && delta < 1.0)) fail_usage("delta must lie in (0, 1)");
  if (m_bound < 0.0) fail_usage("loss bound M must be nonnegative");
  return 2.0 * m_bound *
         std::sqrt(std::log(4.0 / delta) / (2.0 * static_cast<double>(n)));
}

double validation_set_error(double m_bound, std::int64_t m,
                            std::int64_t m_tilde, double eta) {
  if (m < 1 || m_tilde < 1) {
    fail_usage("validation_set_error needs positive validation sizes");
  }
  if (!(eta > 0.0 && eta < 1.0)) fail_usage("eta must lie in (0, 1)");
  if (m_bound < 0.0) fail_usage("loss bound M must be nonnegative");
  const double log_term = std::log(2.0 / eta);
  return m_bound * (std::sqrt(log_term / (2.0 * static_cast<double>(m))) +
                    std::sqrt(log_term / (2.0 * static_cast<double>(m_tilde))));
}

double empirical_shift_penalty(double lip_q, double lip_qt, double c_h,
                               double distance) {
  return (lip_q + lip_qt) * c_h * distance;
}

double population_residual_term(double lip_qt, double c_h, double eps_n) {
  return lip_qt * c_h * eps_n;
}

double mmd_population_term(double b_hat, double mmd_hat, double concentration) {
  return b_hat * (mmd_hat + concentration);
}

nlohmann::json config_echo_json(const TransportConfig& transport,
                                const ResidualConfig& residual,
                                const ConfidenceConfig& confidence) {
  return nlohmann::json{
      {"transport",
       {{"epsilon", transport.epsilon},
        {"iterations", transport.iterations},
        {"cost_exponent", transport.cost_exponent},
        {"c_h", transport.c_h},
        {"subsample_limit", transport.subsample_limit}}},
      {"residual",
       {{"c_x", residual.c_x},
        {"c_xt", residual.c_xt},
        {"delta", residual.delta},
        {"dim", residual.dim}}},
      {"confidence", {{"delta", confidence.delta}, {"eta", confidence.eta}}}};
}

DiagnosticReport assemble_ot(const OtTerms& terms, const AssembleContext& ctx) {
  check_term(terms.out_disc, "out_disc");
  DiagnosticReport report;
  report.g_q_val = terms.g_q_val;
  report.g_qt_val = terms.g_qt_val;
  report.model_change = terms.model_change;
  report.out_disc = terms.out_disc;
  report.empirical_shift_penalty = terms.empirical_shift_penalty;
  report.label_noise_remainder = terms.label_noise_remainder;
  report.validation_set_error = terms.validation_set_error;
  report.population_residual = terms.population_residual;
  report.total_ot = checked_sum(
      {{"g_q_val", terms.g_q_val},
       {"g_qt_val", terms.g_qt_val},
       {"model_change", terms.model_change},
       {"empirical_shift_penalty", terms.empirical_shift_penalty},
       {"label_noise_remainder", terms.label_noise_remainder},
       {"validation_set_error", terms.validation_set_error},
       {"population_residual", terms.population_residual}});
  report.config_echo = ctx.config_echo;
  fill_delta_r(report, ctx);
  return report;
}

DiagnosticReport assemble_mmd(const OtTerms& terms, const MmdExtras& extras,
                              const AssembleContext& ctx) {
  DiagnosticReport report = assemble_ot(terms, ctx);
  check_term(extras.b_hat, "b_hat");
  check_term(extras.mmd_hat, "mmd_hat");
  check_term(extras.concentration, "mmd_concentration");
  const double population =
      mmd_population_term(extras.b_hat, extras.mmd_hat, extras.concentration);
  report.has_mmd = true;
  report.mmd_empirical_shift_ot = extras.empirical_shift_ot;
  report.mmd_population_term = population;
  report.total_mmd = checked_sum(
      {{"g_q_val", terms.g_q_val},
       {"g_qt_val", terms.g_qt_val},
       {"model_change", terms.model_change},
       {"mmd_empirical_shift_ot", extras.empirical_shift_ot},
       {"mmd_population_term", population},
       {"label_noise_remainder", terms.label_noise_remainder},
       {"validation_set_error", terms.validation_set_error}});
  return report;
}

nlohmann::json report_to_json(const DiagnosticReport& report) {
  nlohmann::json doc{{"schema", kReportSchema},
                     {"guarantee", report.guarantee},
                     {"g_q_val", report.g_q_val},
                     {"g_qt_val", report.g_qt_val},
                     {"model_change", report.model_change},
                     {"out_disc", report.out_disc},
                     {"empirical_shift_penalty", report.empirical_shift_penalty},
                     {"label_noise_remainder", report.label_noise_remainder},
                     {"validation_set_error", report.validation_set_error},
                     {"population_residual", report.population_residual},
                     {"total_ot", report.total_ot},
                     {"config_echo", report.config_echo}};
  if (report.has_mmd) {
    doc["mmd_empirical_shift_ot"] = report.mmd_empirical_shift_ot;
    doc["mmd_population_term"] = report.mmd_population_term;
    doc["total_mmd"] = report.total_mmd;
  }
  if (report.has_delta_r) {
    doc["delta_r"] = report.delta_r;
    doc["abs_delta_r"] = report.abs_delta_r;
    if (report.has_bound_ratio) doc["bound_ratio"] = report.bound_ratio;
  }
  return doc;
}

void validate_report(const nlohmann::json& doc) {
  if (!doc.is_object()) fail_parse("report must be a JSON object");
  const auto need = [&](const char* key) -> const nlohmann::json& {
    auto it = doc.find(key);
    if (it == doc.end()) {
      fail_parse(std::string("report is missing field '") + key + "'");
    }
    return *it;
  };
  if (need("schema").get<std::string>() != kReportSchema) {
    fail_parse("unsupported report schema '" +
               need("schema").get<std::string>() + "'");
  }
  if (!need("config_echo").is_object()) {
    fail_parse("report config_echo must be an object");
  }
  need("guarantee").get<std::string>();

  const auto number = [&](const char* key) {
    const nlohmann::json& field = need(key);
    if (!field.is_number()) {
      fail_parse(std::string("report field '") + key + "' must be a number");
    }
    const double v = field.get<double>();
    if (!std::isfinite(v)) {
      fail_numeric(std::string("report field '") + key + "' is not finite");
    }
    return v;
  };
  const char* term_names[] = {"g_q_val",
                              "g_qt_val",
                              "model_change",
                              "out_disc",
                              "empirical_shift_penalty",
                              "label_noise_remainder",
                              "validation_set_error",
                              "population_residual"};
  for (const char* name : term_names) {
    if (number(name) < 0.0) {
      fail_numeric(std::string("report field '") + name + "' is negative");
    }
  }
  const double total_ot = number("total_ot");
  const double ot_sum = number("g_q_val") + number("g_qt_val") +
                        number("model_change") +
                        number("empirical_shift_penalty") +
                        number("label_noise_remainder") +
                        number("validation_set_error") +
                        number("population_residual");
  const double ot_tol = 1e-12 * std::max(1.0, std::abs(total_ot));
  if (std::abs(total_ot - ot_sum) > ot_tol) {
    fail_numeric("total_ot does not match the sum of its terms");
  }

  if (doc.contains("total_mmd") || doc.contains("mmd_population_term") ||
      doc.contains("mmd_empirical_shift_ot")) {
    const double total_mmd = number("total_mmd");
    const double mmd_sum =
        number("g_q_val") + number("g_qt_val") + number("model_change") +
        number("mmd_empirical_shift_ot") + number("mmd_population_term") +
        number("label_noise_remainder") + number("validation_set_error");
    const double mmd_tol = 1e-12 * std::max(1.0, std::abs(total_mmd));
    if (std::abs(total_mmd - mmd_sum) > mmd_tol) {
      fail_numeric("total_mmd does not match the sum of its terms");
    }
  }

  if (doc.contains("delta_r")) {
    const double dr = number("delta_r");
    const double abs_dr = number("abs_delta_r");
    if (std::abs(std::abs(dr) - abs_dr) > 1e-12 * std::max(1.0, abs_dr)) {
      fail_numeric("abs_delta_r does not match delta_r");
    }
    if (doc.contains("bound_ratio")) {
      const double ratio = number("bound_ratio");
      if (abs_dr <= 0.0) fail_numeric("bound_ratio present with zero |delta_r|");
      const double expect = total_ot / abs_dr;
      if (std::abs(ratio - expect) > 1e-9 * std::max(1.0, std::abs(expect))) {
        fail_numeric("bound_ratio does not match total_ot / |delta_r|");
      }
    }
  } else if (doc.contains("bound_ratio") || doc.contains("abs_delta_r")) {
    fail_parse("risk-change fields must appear together");
  }
}

ProxyCalibration calibrate_c_hat(
    const std::vector<std::pair<double, double>>& dev_runs,
    const std::vector<std::string>& ids) {
  if (dev_runs.size() < 3 || dev_runs.size() > 5) {
    fail_usage("calibration needs 3 to 5 development runs, got " +
               std::to_string(dev_runs.size()));
  }
  if (!ids.empty() && ids.size() != dev_runs.size()) {
    fail_usage("calibration id list does not match the run count");
  }
  std::vector<double> numerators;
  std::vector<double> denominators;
  for (const auto& [out_disc, shift] : dev_runs) {
    if (!std::isfinite(out_disc) || !std::isfinite(shift)) {
      fail_numeric("non-finite calibration inputs");
    }
    numerators.push_back(out_disc);
    denominators.push_back(shift);
  }
  const double denom = median_of(denominators);
  if (denom <= 0.0) {
    fail_numeric("calibration denominator median is not positive");
  }
  ProxyCalibration cal;
  cal.c_hat = median_of(numerators) / denom;
  if (ids.empty()) {
    for (std::size_t i = 0; i < dev_runs.size(); ++i) {
      cal.dev_candidate_ids.push_back("dev-" + std::to_string(i));
    }
  } else {
    cal.dev_candidate_ids = ids;
  }
  cal.frozen = true;
  return cal;
}

double trace_proxy(double out_disc, double lipschitz, double distance,
                   const ProxyCalibration& cal) {
  if (!cal.frozen) {
    fail_usage("proxy scoring needs a frozen calibration; calibrate on "
               "development runs first");
  }
  return out_disc + cal.c_hat * lipschitz * distance;
}

std::string gate_variant_name(GateVariant variant) {
  return variant == GateVariant::kTraceW ? "trace-w" : "trace-mmd";
}

GateVariant parse_gate_variant(const std::string& name) {
  if (name == "trace-w") return GateVariant::kTraceW;
  if (name == "trace-mmd") return GateVariant::kTraceMmd;
  fail_usage("unknown gate variant '" + name +
             "', expected trace-w or trace-mmd");
}

GateScore gate_score(const std::string& candidate_id, const Predictor& candidate,
                     const Predictor& reference,
                     const Eigen::MatrixXd& anchor_features,
                     const Eigen::MatrixXd& target_inputs, GateVariant variant,
                     const GateEstimates& estimates) {
  GateScore result;
  result.candidate_id = candidate_id;
  result.variant = variant;

  LossSpec unit;
  unit.lipschitz = 1.0;
  result.out_disc =
      model_change(reference, candidate, target_inputs, unit).mean_distance;

  if (variant == GateVariant::kTraceW) {
    if (!estimates.lipschitz.has_value()) {
      fail_usage("trace-w gate needs the candidate's Lipschitz estimate");
    }
    result.factor = *estimates.lipschitz;
    result.distance = estimates.distance.has_value()
                          ? *estimates.distance
                          : sinkhorn_divergence(anchor_features, target_inputs,
                                                estimates.transport);
  } else {
    if (!estimates.b_hat.has_value()) {
      fail_usage("trace-mmd gate needs the candidate's RKHS norm estimate");
    }
    result.factor = *estimates.b_hat;
    if (estimates.distance.has_value()) {
      result.distance = *estimates.distance;
    } else {
      KernelConfig cfg = estimates.kernel;
      cfg.estimator = MmdEstimator::kBiased;
      result.distance = mmd(anchor_features, target_inputs, cfg).mmd;
    }
  }
  if (!std::isfinite(result.factor) || result.factor < 0.0) {
    fail_numeric("gate factor must be finite and nonnegative");
  }
  if (!std::isfinite(result.distance) || result.distance < 0.0) {
    fail_numeric("gate distance must be finite and nonnegative");
  }
  result.score = result.out_disc + result.factor * result.distance;
  return result;
}

}  // namespace tracekit
