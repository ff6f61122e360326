#pragma once

#include <cstdint>
#include <string>

#include "core/dataset.hpp"
#include "core/models.hpp"

namespace tracekit {

enum class LabelMode { kGroundTruth, kPseudoLabel };

std::string label_mode_name(LabelMode mode);
LabelMode parse_label_mode(const std::string& name);

struct LipschitzEstimate {
  double q = 0.99;
  double value = 0.0;      // order statistic at the ceil(q * m) index, 1-based
  double max_norm = 0.0;   // largest observed gradient norm, for transparency
  std::int64_t sample_size = 0;
  double dkw_epsilon = 0.0;
  LabelMode label_mode = LabelMode::kGroundTruth;
};

// High-quantile input-gradient norm over a holdout set, the working stand-in
// for an input Lipschitz constant. Pseudo-label mode scores gradients against
// argmax labels from `labeler` (the source model by convention) instead of
// ground truth; it is only meaningful for classifiers.
LipschitzEstimate lipschitz_proxy(const Predictor& p, const LossSpec& loss,
                                  const Dataset& holdout, double q,
                                  LabelMode mode, double eta = 0.05,
                                  const Predictor* labeler = nullptr);

// Nonparametric quantile confidence half-width sqrt(log(2/eta) / (2m)).
double dkw_band(std::int64_t m, double eta);

}  // namespace tracekit
