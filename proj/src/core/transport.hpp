#pragma once

#include <Eigen/Dense>
#include <cstdint>

namespace tracekit {

struct TransportConfig {
  double epsilon = 0.1;
  std::int64_t iterations = 200;
  int cost_exponent = 2;
  double c_h = 1.0;
  // Clouds larger than this are thinned to a deterministic subsample before
  // the solve. The subsample indices depend only on the row count, so equal
  // clouds stay equal after thinning and the self-cancellation survives.
  std::int64_t subsample_limit = 5000;
};

struct SinkhornResult {
  double value = 0.0;
  // Worst L1 marginal violation of the final coupling across the three
  // regularized solves. A large gap means the iteration budget was too small
  // for the chosen epsilon.
  double marginal_gap = 0.0;
};

// Debiased entropic transport cost between uniform empirical measures:
// OT(a,b) - (OT(a,a) + OT(b,b)) / 2 with ground cost |x - y|^p. The pair
// term is solved in both update orders and averaged, which makes the result
// exactly symmetric in its arguments. Tiny negative values (above -1e-8)
// clamp to zero; anything lower is treated as numerical breakdown.
SinkhornResult sinkhorn_details(const Eigen::MatrixXd& a,
                                const Eigen::MatrixXd& b,
                                const TransportConfig& cfg);
double sinkhorn_divergence(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                           const TransportConfig& cfg);

// Exact transport cost between equal-size uniform clouds by enumerating all
// assignments. Only feasible for n <= 10; used as a ground-truth check for
// the regularized solver.
double exact_w1_small(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                      int cost_exponent);

struct ResidualConfig {
  double c_x = 1.0;
  double c_xt = 1.0;
  double delta = 0.05;
  std::int64_t dim = 2;
};

// Finite-sample remainder for the empirical-measure approximation:
// C_X * (log(4/delta) / n)^(1/alpha) with alpha = max(dim, 2). The target
// side uses the same exponent with its own constant.
double population_residual(std::int64_t n, const ResidualConfig& cfg);
double population_residual_target(std::int64_t n, const ResidualConfig& cfg);

}  // namespace tracekit
