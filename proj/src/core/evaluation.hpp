#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "core/kernels.hpp"
#include "core/models.hpp"
#include "core/transport.hpp"

namespace tracekit {

// Rank correlation with average ranks on ties. A constant sequence has no
// rank variance, which is reported as an undefined-correlation error rather
// than silently returning 0.
double spearman_rho(const std::vector<double>& a, const std::vector<double>& b);

// Probability that a random positive outranks a random negative, ties
// counted half (Mann-Whitney form). Needs both classes present.
double auroc(const std::vector<double>& scores, const std::vector<bool>& labels);

// Area under the precision-recall curve by descending-score sweep with tied
// scores grouped into one step. Needs at least one positive.
double auprc(const std::vector<double>& scores, const std::vector<bool>& labels);

struct GateLabeling {
  double tau = 0.0;
  std::vector<bool> labels;  // harmful iff the risk change strictly exceeds tau
};

GateLabeling label_harmful(const std::vector<double>& delta_rs, double tau);

// Negated mean maximum softmax probability over the anchor inputs; the
// classical uncertainty baseline the gate scores are compared against.
// Higher means less confident.
double msp_score(const Predictor& p, const Eigen::MatrixXd& inputs);

enum class SelectionPolicy { kW1Min, kMmdMin };

std::string selection_policy_name(SelectionPolicy policy);
SelectionPolicy parse_selection_policy(const std::string& name);

struct SelectionConfig {
  SelectionPolicy policy = SelectionPolicy::kW1Min;
  TransportConfig transport;
  KernelConfig kernel;
};

// Greedy batch construction: repeatedly add the pool row that minimizes the
// policy's distance between the anchor cloud and the selected rows. The
// exact size-b argmin is combinatorial, so the greedy surrogate stands in;
// ties break toward the lowest index. Returns indices in selection order and
// optionally the anchor-to-batch distance after each step.
std::vector<std::int64_t> select_batch(const Eigen::MatrixXd& pool_features,
                                       const Eigen::MatrixXd& anchor_features,
                                       std::int64_t b,
                                       const SelectionConfig& cfg,
                                       std::vector<double>* step_distances = nullptr);

}  // namespace tracekit
