#include "core/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "core/common.hpp"

namespace tracekit {
namespace {

std::vector<double> average_ranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return values[i] < values[j];
  });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    // 1-based ranks; a tie block shares the mean of its positions.
    const double shared = static_cast<double>(i + j + 2) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
    i = j + 1;
  }
  return ranks;
}

void check_finite(const std::vector<double>& values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) fail_numeric(std::string("non-finite ") + what);
  }
}

}  // namespace

double spearman_rho(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) fail_usage("sequences must have equal length");
  if (a.size() < 2) fail_usage("correlation needs at least two observations");
  check_finite(a, "value in the first sequence");
  check_finite(b, "value in the second sequence");

  const std::vector<double> ra = average_ranks(a);
  const std::vector<double> rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = (n + 1.0) / 2.0;
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = ra[i] - mean;
    const double db = rb[i] - mean;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (saa == 0.0 || sbb == 0.0) {
    fail_numeric("correlation undefined: a sequence is constant in rank");
  }
  return sab / std::sqrt(saa * sbb);
}

double auroc(const std::vector<double>& scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) {
    fail_usage("scores and labels must have equal length");
  }
  check_finite(scores, "score");
  const std::int64_t positives = std::count(labels.begin(), labels.end(), true);
  const std::int64_t negatives =
      static_cast<std::int64_t>(labels.size()) - positives;
  if (positives == 0 || negatives == 0) {
    fail_numeric("auroc undefined: labels contain a single class");
  }
  const std::vector<double> ranks = average_ranks(scores);
  double positive_rank_sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i]) positive_rank_sum += ranks[i];
  }
  const double p = static_cast<double>(positives);
  const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

double auprc(const std::vector<double>& scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) {
    fail_usage("scores and labels must have equal length");
  }
  check_finite(scores, "score");
  const std::int64_t positives = std::count(labels.begin(), labels.end(), true);
  if (positives == 0) fail_numeric("auprc undefined: no positive labels");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return scores[i] > scores[j];
  });

  double area = 0.0;
  double tp = 0.0, fp = 0.0;
  double prev_recall = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]]) tp += 1.0; else fp += 1.0;
    }
    const double recall = tp / static_cast<double>(positives);
    const double precision = tp / (tp + fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j + 1;
  }
  return area;
}

GateLabeling label_harmful(const std::vector<double>& delta_rs, double tau) {
  GateLabeling out;
  out.tau = tau;
  out.labels.reserve(delta_rs.size());
  for (double dr : delta_rs) {
    if (!std::isfinite(dr)) fail_numeric("non-finite risk change");
    out.labels.push_back(dr > tau);
  }
  return out;
}

double msp_score(const Predictor& p, const Eigen::MatrixXd& inputs) {
  if (inputs.rows() == 0) fail_usage("msp_score needs at least one input");
  const Eigen::MatrixXd logits = forward_matrix(p, inputs);
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Eigen::VectorXd row = logits.row(i).transpose();
    const double top = row.maxCoeff();
    const double lse = top + std::log((row.array() - top).exp().sum());
    total += std::exp(top - lse);
  }
  return -total / static_cast<double>(logits.rows());
}

std::string selection_policy_name(SelectionPolicy policy) {
  return policy == SelectionPolicy::kW1Min ? "w1min" : "mmdmin";
}

SelectionPolicy parse_selection_policy(const std::string& name) {
  if (name == "w1min") return SelectionPolicy::kW1Min;
  if (name == "mmdmin") return SelectionPolicy::kMmdMin;
  fail_usage("unknown selection policy '" + name +
             "', expected w1min or mmdmin");
}

std::vector<std::int64_t> select_batch(const Eigen::MatrixXd& pool_features,
                                       const Eigen::MatrixXd& anchor_features,
                                       std::int64_t b,
                                       const SelectionConfig& cfg,
                                       std::vector<double>* step_distances) {
  const std::int64_t pool = pool_features.rows();
  if (pool == 0 || anchor_features.rows() == 0) {
    fail_usage("selection needs non-empty pool and anchor");
  }
  if (pool_features.cols() != anchor_features.cols()) {
    fail_usage("pool and anchor dimensions differ");
  }
  if (b < 1) fail_usage("batch size must be positive");
  if (b > pool) {
    fail_usage("batch size " + std::to_string(b) + " exceeds pool size " +
               std::to_string(pool));
  }

  // The MMD policy fixes one bandwidth up front so step distances stay
  // comparable as the batch grows; the biased estimator handles singleton
  // batches. The transport policy needs no such care.
  KernelConfig kernel = cfg.kernel;
  if (cfg.policy == SelectionPolicy::kMmdMin && kernel.bandwidth == 0.0) {
    kernel.bandwidth = median_bandwidth(anchor_features, pool_features);
  }
  kernel.estimator = MmdEstimator::kBiased;

  std::vector<bool> taken(static_cast<std::size_t>(pool), false);
  std::vector<std::int64_t> selected;
  selected.reserve(static_cast<std::size_t>(b));
  Eigen::MatrixXd batch(b, pool_features.cols());
  if (step_distances != nullptr) step_distances->clear();

  for (std::int64_t step = 0; step < b; ++step) {
    std::vector<double> distance(static_cast<std::size_t>(pool),
                                 std::numeric_limits<double>::infinity());
    parallel_for(pool, [&](std::int64_t begin, std::int64_t end) {
      Eigen::MatrixXd trial(step + 1, pool_features.cols());
      trial.topRows(step) = batch.topRows(step);
      for (std::int64_t i = begin; i < end; ++i) {
        if (taken[static_cast<std::size_t>(i)]) continue;
        trial.row(step) = pool_features.row(i);
        if (cfg.policy == SelectionPolicy::kW1Min) {
          distance[static_cast<std::size_t>(i)] =
              sinkhorn_divergence(anchor_features, trial, cfg.transport);
        } else {
          distance[static_cast<std::size_t>(i)] =
              mmd(anchor_features, trial, kernel).mmd;
        }
      }
    });
    std::int64_t best = -1;
    for (std::int64_t i = 0; i < pool; ++i) {
      if (taken[static_cast<std::size_t>(i)]) continue;
      if (best < 0 || distance[static_cast<std::size_t>(i)] <
                          distance[static_cast<std::size_t>(best)]) {
        best = i;
      }
    }
    if (!std::isfinite(distance[static_cast<std::size_t>(best)])) {
      fail_numeric("selection distance diverged");
    }
    taken[static_cast<std::size_t>(best)] = true;
    selected.push_back(best);
    batch.row(step) = pool_features.row(best);
    if (step_distances != nullptr) {
      step_distances->push_back(distance[static_cast<std::size_t>(best)]);
    }
  }
  return selected;
}

}  // namespace tracekit
