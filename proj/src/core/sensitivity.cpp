#include "core/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "core/common.hpp"

namespace tracekit {

std::string label_mode_name(LabelMode mode) {
  return mode == LabelMode::kGroundTruth ? "ground-truth" : "pseudo-label";
}

LabelMode parse_label_mode(const std::string& name) {
  if (name == "ground-truth") return LabelMode::kGroundTruth;
  if (name == "pseudo-label") return LabelMode::kPseudoLabel;
  fail_usage("unknown label mode '" + name +
             "', expected ground-truth or pseudo-label");
}

double dkw_band(std::int64_t m, double eta) {
  if (m < 1) fail_usage("dkw_band needs a positive sample size");
  if (!(eta > 0.0 && eta < 1.0)) fail_usage("eta must lie in (0, 1)");
  return std::sqrt(std::log(2.0 / eta) / (2.0 * static_cast<double>(m)));
}

LipschitzEstimate lipschitz_proxy(const Predictor& p, const LossSpec& loss,
                                  const Dataset& holdout, double q,
                                  LabelMode mode, double eta,
                                  const Predictor* labeler) {
  if (holdout.rows() == 0) fail_usage("lipschitz_proxy needs a non-empty holdout");
  if (!(q > 0.0 && q <= 1.0)) fail_usage("quantile q must lie in (0, 1]");
  if (holdout.cols() != p.input_dim()) {
    fail_usage("holdout dimension " + std::to_string(holdout.cols()) +
               " does not match predictor input dimension " +
               std::to_string(p.input_dim()));
  }

  const std::int64_t m = holdout.rows();
  std::vector<std::int32_t> pseudo;
  if (mode == LabelMode::kPseudoLabel) {
    if (loss.kind != LossSpec::Kind::kCrossEntropy) {
      fail_usage("pseudo-label mode needs a classification loss");
    }
    const Predictor& source = labeler != nullptr ? *labeler : p;
    if (source.input_dim() != holdout.cols()) {
      fail_usage("labeler input dimension does not match holdout");
    }
    pseudo = argmax_labels(source, holdout.features);
  } else if (loss.kind == LossSpec::Kind::kCrossEntropy) {
    if (holdout.kind != LabelKind::kClass ||
        static_cast<std::int64_t>(holdout.labels.size()) != m) {
      fail_usage("ground-truth mode needs class labels on the holdout");
    }
  } else {
    if (holdout.kind != LabelKind::kReal ||
        static_cast<std::int64_t>(holdout.targets.size()) != m) {
      fail_usage("ground-truth mode needs real targets on the holdout");
    }
  }

  std::vector<double> norms(static_cast<std::size_t>(m));
  parallel_for(m, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t i = begin; i < end; ++i) {
      const Eigen::VectorXd x = holdout.features.row(i).transpose();
      Eigen::VectorXd g;
      if (mode == LabelMode::kPseudoLabel) {
        g = input_gradient(p, loss, x, pseudo[static_cast<std::size_t>(i)]);
      } else if (loss.kind == LossSpec::Kind::kCrossEntropy) {
        g = input_gradient(p, loss, x, holdout.labels[static_cast<std::size_t>(i)]);
      } else {
        g = input_gradient(p, loss, x, holdout.targets[static_cast<std::size_t>(i)]);
      }
      norms[static_cast<std::size_t>(i)] = g.norm();
    }
  });
  for (double v : norms) {
    if (!std::isfinite(v)) fail_numeric("non-finite input gradient on holdout");
  }

  // 1-based order statistic at rank ceil(q * m); q = 1 picks the maximum.
  const auto rank = static_cast<std::int64_t>(
      std::ceil(q * static_cast<double>(m)));
  const std::int64_t idx = std::clamp<std::int64_t>(rank, 1, m) - 1;
  std::nth_element(norms.begin(), norms.begin() + idx, norms.end());
  const double value = norms[static_cast<std::size_t>(idx)];
  const double max_norm = *std::max_element(norms.begin(), norms.end());

  LipschitzEstimate est;
  est.q = q;
  est.value = value;
  est.max_norm = max_norm;
  est.sample_size = m;
  est.dkw_epsilon = dkw_band(m, eta);
  est.label_mode = mode;
  return est;
}

}  // namespace tracekit
