#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "core/common.hpp"
#include "core/evaluation.hpp"
#include "core/kernels.hpp"
#include "core/models.hpp"
#include "core/transport.hpp"

using namespace tracekit;

namespace {

// Independent check for the rank-based AUROC: walk the ROC curve over tied
// score groups and integrate with trapezoids, which handles diagonal
// segments from ties exactly.
double trapezoid_auroc(const std::vector<double>& scores,
                       const std::vector<bool>& labels) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) {
                     return scores[i] > scores[j];
                   });
  const double positives = std::count(labels.begin(), labels.end(), true);
  const double negatives = static_cast<double>(labels.size()) - positives;
  double tp = 0.0, fp = 0.0, area = 0.0, prev_fpr = 0.0, prev_tpr = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]]) tp += 1.0; else fp += 1.0;
    }
    const double fpr = fp / negatives;
    const double tpr = tp / positives;
    area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
    prev_fpr = fpr;
    prev_tpr = tpr;
    i = j + 1;
  }
  return area;
}

Predictor identity_classifier() {
  Predictor p;
  p.kind = PredictorKind::kLogisticLinear;
  p.w1 = Eigen::MatrixXd::Identity(2, 2);
  p.b1 = Eigen::VectorXd::Zero(2);
  return p;
}

Eigen::MatrixXd column(std::initializer_list<double> xs) {
  Eigen::MatrixXd out(static_cast<std::int64_t>(xs.size()), 1);
  std::int64_t i = 0;
  for (double x : xs) out(i++, 0) = x;
  return out;
}

}  // namespace

TEST_CASE("spearman matches hand-ranked examples") {
  const std::vector<double> a = {1.0, 2.0, 3.0, 4.0};
  CHECK(spearman_rho(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(spearman_rho(a, {4.0, 3.0, 2.0, 1.0}) ==
        doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(spearman_rho(a, {1.0, 3.0, 2.0, 4.0}) ==
        doctest::Approx(0.8).epsilon(1e-12));
  // Tied block gets the average rank: closed form 1.5 / sqrt(1.5 * 2).
  CHECK(spearman_rho({1.0, 1.0, 2.0}, {1.0, 2.0, 3.0}) ==
        doctest::Approx(1.5 / std::sqrt(3.0)).epsilon(1e-12));
}

TEST_CASE("spearman is invariant under strictly monotone transforms") {
  const std::vector<double> a = {0.3, -1.2, 2.0, 0.9, -0.4};
  const std::vector<double> b = {5.0, 1.0, 2.5, 7.0, 0.2};
  std::vector<double> cubed(b.size());
  std::transform(b.begin(), b.end(), cubed.begin(),
                 [](double x) { return x * x * x; });
  CHECK(spearman_rho(a, b) == doctest::Approx(spearman_rho(a, cubed))
                                  .epsilon(1e-12));
}

TEST_CASE("spearman rejects degenerate inputs") {
  CHECK_THROWS_AS(spearman_rho({1.0, 2.0}, {1.0}), Error);
  CHECK_THROWS_AS(spearman_rho({1.0}, {1.0}), Error);
  CHECK_THROWS_WITH_AS(spearman_rho({2.0, 2.0, 2.0}, {1.0, 2.0, 3.0}),
                       doctest::Contains("constant"), Error);
}

TEST_CASE("auroc matches the pair-counting example") {
  CHECK(auroc({1.0, 2.0, 3.0, 4.0}, {false, true, false, true}) ==
        doctest::Approx(0.75).epsilon(1e-12));
  CHECK(auroc({0.1, 0.2, 0.9, 0.8}, {false, false, true, true}) ==
        doctest::Approx(1.0).epsilon(1e-15));
  CHECK(auroc({0.5, 0.5, 0.5, 0.5}, {false, true, false, true}) ==
        doctest::Approx(0.5).epsilon(1e-15));
  CHECK_THROWS_AS(auroc({1.0, 2.0}, {true, true}), Error);
  CHECK_THROWS_AS(auroc({1.0, 2.0}, {true}), Error);
}

TEST_CASE("auroc invariances") {
  const std::vector<double> scores = {0.1, 0.7, 0.4, 0.4, 0.9, 0.2};
  const std::vector<bool> labels = {false, true, false, true, true, false};
  const double base = auroc(scores, labels);

  std::vector<double> warped(scores.size());
  std::transform(scores.begin(), scores.end(), warped.begin(),
                 [](double x) { return std::exp(3.0 * x); });
  CHECK(auroc(warped, labels) == doctest::Approx(base).epsilon(1e-12));

  std::vector<bool> flipped(labels.size());
  std::transform(labels.begin(), labels.end(), flipped.begin(),
                 [](bool v) { return !v; });
  CHECK(auroc(scores, flipped) == doctest::Approx(1.0 - base).epsilon(1e-12));
}

TEST_CASE("auroc agrees with trapezoidal integration on random instances") {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> size_dist(3, 30);
  std::uniform_int_distribution<int> score_dist(0, 5);  // forces tie groups
  std::bernoulli_distribution coin(0.4);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = size_dist(rng);
    std::vector<double> scores(static_cast<std::size_t>(n));
    std::vector<bool> labels(static_cast<std::size_t>(n));
    bool has_pos = false, has_neg = false;
    do {
      has_pos = has_neg = false;
      for (int i = 0; i < n; ++i) {
        scores[static_cast<std::size_t>(i)] = score_dist(rng);
        const bool v = coin(rng);
        labels[static_cast<std::size_t>(i)] = v;
        (v ? has_pos : has_neg) = true;
      }
    } while (!has_pos || !has_neg);
    CHECK(auroc(scores, labels) ==
          doctest::Approx(trapezoid_auroc(scores, labels)).epsilon(1e-12));
  }
}

TEST_CASE("auprc sweeps descending scores with ties grouped") {
  CHECK(auprc({3.0, 2.0, 1.0}, {true, false, true}) ==
        doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK(auprc({0.1, 0.2, 0.9, 0.8}, {false, false, true, true}) ==
        doctest::Approx(1.0).epsilon(1e-15));
  // One PR point at (recall 1, precision = prevalence).
  CHECK(auprc({0.5, 0.5, 0.5, 0.5, 0.5},
              {true, false, true, false, false}) ==
        doctest::Approx(0.4).epsilon(1e-15));
  CHECK(auprc({1.0, 2.0}, {true, true}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(auprc({1.0, 2.0}, {false, false}), Error);
}

TEST_CASE("harm labeling uses a strict threshold") {
  const GateLabeling g = label_harmful({0.05, 0.2}, 0.13);
  CHECK(g.tau == 0.13);
  REQUIRE(g.labels.size() == 2);
  CHECK_FALSE(g.labels[0]);
  CHECK(g.labels[1]);

  const GateLabeling boundary = label_harmful({0.13, 0.1299, 0.1301}, 0.13);
  CHECK_FALSE(boundary.labels[0]);  // equality is not harm
  CHECK_FALSE(boundary.labels[1]);
  CHECK(boundary.labels[2]);

  const GateLabeling none = label_harmful({-0.3, 0.0, 0.12}, 0.13);
  CHECK(std::none_of(none.labels.begin(), none.labels.end(),
                     [](bool v) { return v; }));
}

TEST_CASE("msp baseline is the negated mean max softmax probability") {
  const Predictor p = identity_classifier();
  Eigen::MatrixXd inputs(2, 2);
  inputs << std::log(3.0), 0.0, 0.0, 0.0;
  // Softmax maxima are 3/4 and 1/2.
  CHECK(msp_score(p, inputs) == doctest::Approx(-0.625).epsilon(1e-12));

  Eigen::MatrixXd confident(1, 2);
  confident << 9.0, -9.0;
  CHECK(msp_score(p, confident) < msp_score(p, inputs));
  CHECK_THROWS_AS(msp_score(p, Eigen::MatrixXd(0, 2)), Error);
}

TEST_CASE("singleton selection picks the matching point under both policies") {
  const Eigen::MatrixXd anchor = column({0.0});
  const Eigen::MatrixXd pool = column({0.0, 10.0});
  for (SelectionPolicy policy : {SelectionPolicy::kW1Min, SelectionPolicy::kMmdMin}) {
    SelectionConfig cfg;
    cfg.policy = policy;
    cfg.transport.iterations = 100;
    const std::vector<std::int64_t> picked =
        select_batch(pool, anchor, 1, cfg);
    REQUIRE(picked.size() == 1);
    CHECK(picked[0] == 0);
  }
}

TEST_CASE("full-pool selection returns every index deterministically") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd pool(6, 2);
  Eigen::MatrixXd anchor(7, 2);
  for (std::int64_t i = 0; i < pool.rows(); ++i)
    for (std::int64_t j = 0; j < 2; ++j) pool(i, j) = gauss(rng);
  for (std::int64_t i = 0; i < anchor.rows(); ++i)
    for (std::int64_t j = 0; j < 2; ++j) anchor(i, j) = gauss(rng);

  SelectionConfig cfg;
  cfg.transport.iterations = 60;
  const std::vector<std::int64_t> all = select_batch(pool, anchor, 6, cfg);
  std::vector<std::int64_t> sorted = all;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<std::int64_t>{0, 1, 2, 3, 4, 5});

  const std::vector<std::int64_t> again = select_batch(pool, anchor, 6, cfg);
  CHECK(again == all);
}

TEST_CASE("selection recovers the cluster that matches the anchor") {
  const Eigen::MatrixXd anchor = Eigen::MatrixXd::Zero(20, 1);
  Eigen::MatrixXd pool(10, 1);
  for (std::int64_t i = 0; i < 5; ++i) pool(i, 0) = 0.0;
  for (std::int64_t i = 5; i < 10; ++i) pool(i, 0) = 10.0;

  for (SelectionPolicy policy : {SelectionPolicy::kW1Min, SelectionPolicy::kMmdMin}) {
    SelectionConfig cfg;
    cfg.policy = policy;
    cfg.transport.iterations = 100;
    // Explicit bandwidth: the pool is mostly duplicated points, so the
    // median heuristic would degenerate here.
    cfg.kernel.bandwidth = 1.0;
    const std::vector<std::int64_t> picked =
        select_batch(pool, anchor, 5, cfg);
    CHECK(picked == std::vector<std::int64_t>{0, 1, 2, 3, 4});
  }
}

TEST_CASE("each greedy step is locally optimal") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd anchor(12, 2);
  Eigen::MatrixXd pool(10, 2);
  for (std::int64_t i = 0; i < anchor.rows(); ++i)
    for (std::int64_t j = 0; j < 2; ++j) anchor(i, j) = gauss(rng);
  for (std::int64_t i = 0; i < pool.rows(); ++i)
    for (std::int64_t j = 0; j < 2; ++j) pool(i, j) = gauss(rng) + 1.0;

  SUBCASE("transport policy") {
    SelectionConfig cfg;
    cfg.policy = SelectionPolicy::kW1Min;
    cfg.transport.iterations = 50;
    std::vector<double> steps;
    const std::vector<std::int64_t> picked =
        select_batch(pool, anchor, 5, cfg, &steps);
    REQUIRE(steps.size() == 5);

    Eigen::MatrixXd prefix(0, 2);
    for (std::size_t k = 0; k < picked.size(); ++k) {
      Eigen::MatrixXd trial(prefix.rows() + 1, 2);
      trial.topRows(prefix.rows()) = prefix;
      double best = std::numeric_limits<double>::infinity();
      for (std::int64_t i = 0; i < pool.rows(); ++i) {
        if (std::find(picked.begin(), picked.begin() + static_cast<std::ptrdiff_t>(k),
                      i) != picked.begin() + static_cast<std::ptrdiff_t>(k)) {
          continue;
        }
        trial.row(prefix.rows()) = pool.row(i);
        best = std::min(best, sinkhorn_divergence(anchor, trial, cfg.transport));
      }
      CHECK(steps[k] <= best + 1e-12);
      prefix = trial;
      prefix.row(prefix.rows() - 1) = pool.row(picked[k]);
    }
  }

  SUBCASE("kernel policy") {
    SelectionConfig cfg;
    cfg.policy = SelectionPolicy::kMmdMin;
    std::vector<double> steps;
    const std::vector<std::int64_t> picked =
        select_batch(pool, anchor, 4, cfg, &steps);
    REQUIRE(steps.size() == 4);

    KernelConfig kernel;
    kernel.bandwidth = median_bandwidth(anchor, pool);
    kernel.estimator = MmdEstimator::kBiased;
    Eigen::MatrixXd prefix(0, 2);
    for (std::size_t k = 0; k < picked.size(); ++k) {
      Eigen::MatrixXd trial(prefix.rows() + 1, 2);
      trial.topRows(prefix.rows()) = prefix;
      double best = std::numeric_limits<double>::infinity();
      for (std::int64_t i = 0; i < pool.rows(); ++i) {
        if (std::find(picked.begin(), picked.begin() + static_cast<std::ptrdiff_t>(k),
                      i) != picked.begin() + static_cast<std::ptrdiff_t>(k)) {
          continue;
        }
        trial.row(prefix.rows()) = pool.row(i);
        best = std::min(best, mmd(anchor, trial, kernel).mmd);
      }
      CHECK(steps[k] <= best + 1e-12);
      prefix = trial;
      prefix.row(prefix.rows() - 1) = pool.row(picked[k]);
    }
  }
}

TEST_CASE("selection input validation") {
  const Eigen::MatrixXd anchor = column({0.0, 1.0});
  const Eigen::MatrixXd pool = column({0.0, 1.0, 2.0});
  SelectionConfig cfg;
  CHECK_THROWS_AS(select_batch(pool, anchor, 4, cfg), Error);
  CHECK_THROWS_AS(select_batch(pool, anchor, 0, cfg), Error);
  CHECK_THROWS_AS(select_batch(Eigen::MatrixXd(0, 1), anchor, 1, cfg), Error);
  CHECK_THROWS_AS(select_batch(pool, Eigen::MatrixXd::Zero(2, 2), 1, cfg),
                  Error);
}

TEST_CASE("policy names round trip") {
  CHECK(parse_selection_policy(selection_policy_name(SelectionPolicy::kW1Min)) ==
        SelectionPolicy::kW1Min);
  CHECK(parse_selection_policy(selection_policy_name(SelectionPolicy::kMmdMin)) ==
        SelectionPolicy::kMmdMin);
  CHECK_THROWS_AS(parse_selection_policy("random"), Error);
}
