#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "core/kernels.hpp"
#include "core/models.hpp"
#include "core/transport.hpp"

namespace tracekit {

// Joint confidence levels for the risk decomposition; the statement holds
// with probability at least 1 - delta - eta.
struct ConfidenceConfig {
  double delta = 0.05;
  double eta = 0.05;
};

inline constexpr const char* kReportSchema = "trace-report/1";
inline constexpr const char* kGuaranteeLabel =
    "high-probability under proxy-validity assumption";

// Itemized decomposition of the risk change bound. The OT fields are always
// populated; the MMD hybrid fields are filled only when that variant ran.
struct DiagnosticReport {
  double g_q_val = 0.0;
  double g_qt_val = 0.0;
  double model_change = 0.0;  // loss-Lipschitz scaled output distance
  double out_disc = 0.0;      // unscaled mean output distance, for gates
  double empirical_shift_penalty = 0.0;
  double label_noise_remainder = 0.0;
  double validation_set_error = 0.0;
  double population_residual = 0.0;
  double total_ot = 0.0;

  bool has_mmd = false;
  double mmd_empirical_shift_ot = 0.0;  // source-side OT penalty in the hybrid
  double mmd_population_term = 0.0;     // b_hat * (mmd + concentration)
  double total_mmd = 0.0;

  bool has_delta_r = false;
  double delta_r = 0.0;  // signed, risk(replacement) - risk(incumbent)
  double abs_delta_r = 0.0;
  bool has_bound_ratio = false;
  double bound_ratio = 0.0;  // total_ot / |delta_r|

  std::string guarantee = kGuaranteeLabel;
  nlohmann::json config_echo = nlohmann::json::object();
};

double empirical_risk(const Predictor& p, const LossSpec& loss, const Dataset& ds);

// |mean validation loss - mean training loss| for one model.
double validation_gap(const Predictor& p, const LossSpec& loss,
                      const Dataset& train, const Dataset& val);

struct OutputDistance {
  double scaled = 0.0;         // L_ell times the mean distance
  double mean_distance = 0.0;  // mean l2 distance between clipped logits
};

// Output disagreement of two predictors over the target inputs.
OutputDistance model_change(const Predictor& p_q, const Predictor& p_qt,
                            const Eigen::MatrixXd& target_inputs,
                            const LossSpec& loss);

// 2M sqrt(log(4/delta) / (2n)).
double label_noise_remainder(std::int64_t n, double m_bound, double delta);
// M (sqrt(log(2/eta)/(2m)) + sqrt(log(2/eta)/(2m_tilde))).
double validation_set_error(double m_bound, std::int64_t m,
                            std::int64_t m_tilde, double eta);
// (lip_q + lip_qt) * c_h * distance.
double empirical_shift_penalty(double lip_q, double lip_qt, double c_h,
                               double distance);
// lip_qt * c_h * eps_n.
double population_residual_term(double lip_qt, double c_h, double eps_n);
// b_hat * (mmd_hat + concentration).
double mmd_population_term(double b_hat, double mmd_hat, double concentration);

struct OtTerms {
  double g_q_val = 0.0;
  double g_qt_val = 0.0;
  double model_change = 0.0;
  double out_disc = 0.0;
  double empirical_shift_penalty = 0.0;
  double label_noise_remainder = 0.0;
  double validation_set_error = 0.0;
  double population_residual = 0.0;
};

struct MmdExtras {
  double empirical_shift_ot = 0.0;  // source-model penalty, OT distance
  double b_hat = 0.0;
  double mmd_hat = 0.0;
  double concentration = 0.0;
};

struct AssembleContext {
  nlohmann::json config_echo = nlohmann::json::object();
  std::optional<double> delta_r;  // signed true risk change when known
};

// Echo block shared by every report; callers may add further sections.
nlohmann::json config_echo_json(const TransportConfig& transport,
                                const ResidualConfig& residual,
                                const ConfidenceConfig& confidence);

// Sum the itemized terms into a report. Every component must be finite and
// nonnegative; a violation is an upstream bug, not a property of the data.
DiagnosticReport assemble_ot(const OtTerms& terms, const AssembleContext& ctx);
DiagnosticReport assemble_mmd(const OtTerms& terms, const MmdExtras& extras,
                              const AssembleContext& ctx);

nlohmann::json report_to_json(const DiagnosticReport& report);
// Schema, field presence, finiteness, and additivity checks; throws on
// violation so malformed reports never propagate.
void validate_report(const nlohmann::json& doc);

// Unsupervised scale factor linking output disagreement to the shift term.
struct ProxyCalibration {
  double c_hat = 0.0;
  std::vector<std::string> dev_candidate_ids;
  bool frozen = false;
};

// median(out_disc) / median(lipschitz * distance) over 3-5 development runs
// kept disjoint from evaluation; the result is frozen before any ranking.
ProxyCalibration calibrate_c_hat(
    const std::vector<std::pair<double, double>>& dev_runs,
    const std::vector<std::string>& ids = {});

// out_disc + c_hat * lipschitz * distance; requires a frozen calibration.
double trace_proxy(double out_disc, double lipschitz, double distance,
                   const ProxyCalibration& cal);

enum class GateVariant { kTraceW, kTraceMmd };

std::string gate_variant_name(GateVariant variant);
GateVariant parse_gate_variant(const std::string& name);

struct GateScore {
  std::string candidate_id;
  double out_disc = 0.0;
  double distance = 0.0;
  double factor = 0.0;  // lipschitz estimate (trace-w) or b_hat (trace-mmd)
  double score = 0.0;
  GateVariant variant = GateVariant::kTraceW;
};

// Variant-specific inputs for a gate evaluation. The distance between the
// anchor and target clouds is shared by all candidates, so callers scoring a
// batch should compute it once and pass it in; when absent it is computed
// here (Sinkhorn divergence for trace-w, biased MMD for trace-mmd).
struct GateEstimates {
  std::optional<double> lipschitz;  // candidate's input-gradient quantile
  std::optional<double> b_hat;      // candidate's RKHS norm estimate
  std::optional<double> distance;
  TransportConfig transport;
  KernelConfig kernel;
};

// Deployment-gate score: out_disc + factor * distance. Calibration never
// enters; the score is fully determined by the two models and the clouds.
GateScore gate_score(const std::string& candidate_id, const Predictor& candidate,
                     const Predictor& reference,
                     const Eigen::MatrixXd& anchor_features,
                     const Eigen::MatrixXd& target_inputs, GateVariant variant,
                     const GateEstimates& estimates);

}  // namespace tracekit
