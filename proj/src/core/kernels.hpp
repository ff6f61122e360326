#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "core/models.hpp"

namespace tracekit {

enum class MmdEstimator { kBiased, kUnbiased };

struct KernelConfig {
  // Bandwidth of the RBF kernel exp(-|x-y|^2 / (2 sigma^2)). Zero means
  // "resolve via the median heuristic on the data at hand".
  double bandwidth = 0.0;
  double c_kappa = 1.0;
  MmdEstimator estimator = MmdEstimator::kUnbiased;
};

// Lower median of pairwise Euclidean distances over the pooled rows. Pools
// larger than 4096 rows are thinned deterministically (seeded by the row
// count) before the quadratic pass. A zero median is a degeneracy error.
double median_bandwidth(const Eigen::MatrixXd& pooled);
double median_bandwidth(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

Eigen::MatrixXd rbf_gram(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                         double bandwidth);

struct MmdResult {
  double mmd = 0.0;          // sqrt(max(0, mmd_squared))
  double mmd_squared = 0.0;  // signed; the unbiased estimate can dip below 0
  double bandwidth = 0.0;
};

// Kernel mean discrepancy between the two clouds. The unbiased estimator
// needs at least two rows per side; for equal sizes it uses the paired
// one-sample u-statistic, so identical clouds give exactly zero.
MmdResult mmd(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
              const KernelConfig& cfg);

// Deviation allowance between empirical and population discrepancy:
// c_kappa * sqrt(log(2/delta) / n).
double mmd_concentration(std::int64_t n, const KernelConfig& cfg, double delta);

struct KrrFit {
  Eigen::MatrixXd support_points;
  Eigen::VectorXd alpha;
  double lambda = 0.0;
  double bandwidth = 0.0;
  double rkhs_norm = 0.0;
};

// Kernel ridge regression: alpha = (K + m lambda I)^-1 t, with the fitted
// function's norm sqrt(alpha' K alpha). The solve is checked against its
// normal equations and rejected when the residual exceeds 1e-8 |t|.
KrrFit krr_fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets,
               double lambda, const KernelConfig& cfg);

Eigen::VectorXd krr_predict(const KrrFit& fit, const Eigen::MatrixXd& points);

struct RkhsEstimate {
  double b_hat = 0.0;
  double lambda = 0.0;
};

inline const std::vector<double>& default_lambda_grid() {
  static const std::vector<double> grid{1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  return grid;
}

// Scale calibrator for the kernel-discrepancy penalty: regress per-sample
// losses of the predictor on the features, pick lambda by 5-fold
// cross-validation, and report the norm of the refit on all points.
RkhsEstimate estimate_rkhs_norm(const Dataset& ds, const Predictor& predictor,
                                const LossSpec& loss, const KernelConfig& cfg,
                                const std::vector<double>& lambda_grid);

}  // namespace tracekit
