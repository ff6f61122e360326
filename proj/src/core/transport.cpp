#include "core/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "core/common.hpp"

namespace tracekit {

namespace {

constexpr double kClampFloor = -1e-8;

void check_cloud(const Eigen::MatrixXd& pts, const char* side) {
  if (pts.rows() < 1 || pts.cols() < 1)
    fail_usage(std::string("transport: empty point cloud on side ") + side);
  if (!pts.allFinite())
    fail_numeric(std::string("transport: non-finite entries on side ") + side);
}

void check_config(const TransportConfig& cfg) {
  if (cfg.epsilon <= 0.0) fail_usage("transport: epsilon must be positive");
  if (cfg.iterations < 1) fail_usage("transport: iterations must be >= 1");
  if (cfg.cost_exponent != 1 && cfg.cost_exponent != 2)
    fail_usage("transport: cost exponent must be 1 or 2");
  if (cfg.subsample_limit < 1)
    fail_usage("transport: subsample limit must be >= 1");
}

// Row subset used when a cloud exceeds the subsample limit. Seeded only by
// the row count: two byte-identical clouds always shrink to the same rows.
Eigen::MatrixXd thin_rows(const Eigen::MatrixXd& pts, std::int64_t limit) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(pts.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(mix_seed(0x7093, static_cast<std::uint64_t>(pts.rows())));
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(static_cast<std::size_t>(limit));
  std::sort(idx.begin(), idx.end());
  Eigen::MatrixXd out(limit, pts.cols());
  for (std::int64_t i = 0; i < limit; ++i)
    out.row(i) = pts.row(idx[static_cast<std::size_t>(i)]);
  return out;
}

Eigen::MatrixXd cost_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                            int exponent) {
  Eigen::VectorXd an = a.rowwise().squaredNorm();
  Eigen::VectorXd bn = b.rowwise().squaredNorm();
  Eigen::MatrixXd c = -2.0 * a * b.transpose();
  c.colwise() += an;
  c.rowwise() += bn.transpose();
  c = c.cwiseMax(0.0);
  if (exponent == 1) c = c.cwiseSqrt();
  return c;
}

// log sum over one row of (f_or_g[j] - c(i,j)) / eps + log_w, max-shifted.
double row_lse(const Eigen::MatrixXd& c, std::int64_t i,
               const Eigen::VectorXd& g, double eps, double log_w) {
  Eigen::ArrayXd arg = (g.transpose() - c.row(i)).array() / eps + log_w;
  double mx = arg.maxCoeff();
  return mx + std::log((arg - mx).exp().sum());
}

double col_lse(const Eigen::MatrixXd& c, std::int64_t j,
               const Eigen::VectorXd& f, double eps, double log_w) {
  Eigen::ArrayXd arg = (f - c.col(j)).array() / eps + log_w;
  double mx = arg.maxCoeff();
  return mx + std::log((arg - mx).exp().sum());
}

// One entropic transport solve between uniform measures over the rows and
// columns of the cost matrix. g_first flips the update order within each
// iteration, which is equivalent to solving the transposed problem.
double entropic_cost(const Eigen::MatrixXd& c, double eps,
                     std::int64_t iterations, bool g_first, double* gap_out) {
  const std::int64_t n = c.rows();
  const std::int64_t m = c.cols();
  const double log_a = -std::log(static_cast<double>(n));
  const double log_b = -std::log(static_cast<double>(m));
  Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(m);

  auto update_f = [&]() {
    parallel_for(n, [&](std::int64_t begin, std::int64_t end) {
      for (std::int64_t i = begin; i < end; ++i)
        f(i) = -eps * row_lse(c, i, g, eps, log_b);
    });
  };
  auto update_g = [&]() {
    parallel_for(m, [&](std::int64_t begin, std::int64_t end) {
      for (std::int64_t j = begin; j < end; ++j)
        g(j) = -eps * col_lse(c, j, f, eps, log_a);
    });
  };
  for (std::int64_t it = 0; it < iterations; ++it) {
    if (g_first) {
      update_g();
      update_f();
    } else {
      update_f();
      update_g();
    }
  }

  if (gap_out != nullptr) {
    // L1 violation of whichever marginal the last update did not fix.
    double gap = 0.0;
    if (g_first) {
      // f was updated last, so row marginals hold; check columns.
      Eigen::VectorXd col_mass(m);
      parallel_for(m, [&](std::int64_t begin, std::int64_t end) {
        for (std::int64_t j = begin; j < end; ++j)
          col_mass(j) =
              std::exp(col_lse(c, j, f, eps, log_a) + g(j) / eps + log_b);
      });
      gap = (col_mass.array() - std::exp(log_b)).abs().sum();
    } else {
      Eigen::VectorXd row_mass(n);
      parallel_for(n, [&](std::int64_t begin, std::int64_t end) {
        for (std::int64_t i = begin; i < end; ++i)
          row_mass(i) =
              std::exp(row_lse(c, i, g, eps, log_b) + f(i) / eps + log_a);
      });
      gap = (row_mass.array() - std::exp(log_a)).abs().sum();
    }
    *gap_out = gap;
  }
  return f.mean() + g.mean();
}

}  // namespace

SinkhornResult sinkhorn_details(const Eigen::MatrixXd& a,
                                const Eigen::MatrixXd& b,
                                const TransportConfig& cfg) {
  check_cloud(a, "A");
  check_cloud(b, "B");
  check_config(cfg);
  if (a.cols() != b.cols())
    fail_usage("transport: point clouds disagree on dimension");

  Eigen::MatrixXd thin_a, thin_b;
  const Eigen::MatrixXd* pa = &a;
  const Eigen::MatrixXd* pb = &b;
  if (a.rows() > cfg.subsample_limit) {
    thin_a = thin_rows(a, cfg.subsample_limit);
    pa = &thin_a;
  }
  if (b.rows() > cfg.subsample_limit) {
    thin_b = thin_rows(b, cfg.subsample_limit);
    pb = &thin_b;
  }

  double gap_ab = 0.0, gap_ba = 0.0, gap_aa = 0.0, gap_bb = 0.0;
  Eigen::MatrixXd cab = cost_matrix(*pa, *pb, cfg.cost_exponent);
  double pair = 0.5 * (entropic_cost(cab, cfg.epsilon, cfg.iterations, false,
                                     &gap_ab) +
                       entropic_cost(cab, cfg.epsilon, cfg.iterations, true,
                                     &gap_ba));
  Eigen::MatrixXd caa = cost_matrix(*pa, *pa, cfg.cost_exponent);
  double self_a =
      entropic_cost(caa, cfg.epsilon, cfg.iterations, false, &gap_aa);
  caa.resize(0, 0);
  Eigen::MatrixXd cbb = cost_matrix(*pb, *pb, cfg.cost_exponent);
  double self_b =
      entropic_cost(cbb, cfg.epsilon, cfg.iterations, false, &gap_bb);

  SinkhornResult result;
  result.marginal_gap = std::max({gap_ab, gap_ba, gap_aa, gap_bb});
  double value = pair - 0.5 * (self_a + self_b);
  if (!std::isfinite(value))
    fail_numeric("transport: divergence is not finite");
  if (value < kClampFloor)
    fail_numeric("transport: divergence fell below the negativity floor");
  result.value = value < 0.0 ? 0.0 : value;
  return result;
}

double sinkhorn_divergence(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                           const TransportConfig& cfg) {
  return sinkhorn_details(a, b, cfg).value;
}

double exact_w1_small(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                      int cost_exponent) {
  check_cloud(a, "A");
  check_cloud(b, "B");
  if (a.cols() != b.cols())
    fail_usage("transport: point clouds disagree on dimension");
  if (a.rows() != b.rows())
    fail_usage("transport: exact oracle needs equal-size clouds");
  if (a.rows() > 10)
    fail_usage("transport: exact oracle is limited to 10 points");
  if (cost_exponent != 1 && cost_exponent != 2)
    fail_usage("transport: cost exponent must be 1 or 2");

  const std::int64_t n = a.rows();
  Eigen::MatrixXd c = cost_matrix(a, b, cost_exponent);
  std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i)
      total += c(i, perm[static_cast<std::size_t>(i)]);
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(n);
}

namespace {

double residual_impl(std::int64_t n, double constant, const ResidualConfig& cfg) {
  if (n < 1) fail_usage("residual: sample count must be >= 1");
  if (!(cfg.delta > 0.0 && cfg.delta < 1.0))
    fail_usage("residual: delta must lie in (0, 1)");
  if (constant < 0.0) fail_usage("residual: constant must be >= 0");
  double alpha = static_cast<double>(std::max<std::int64_t>(cfg.dim, 2));
  return constant *
         std::pow(std::log(4.0 / cfg.delta) / static_cast<double>(n),
                  1.0 / alpha);
}

}  // namespace

double population_residual(std::int64_t n, const ResidualConfig& cfg) {
  return residual_impl(n, cfg.c_x, cfg);
}

double population_residual_target(std::int64_t n, const ResidualConfig& cfg) {
  return residual_impl(n, cfg.c_xt, cfg);
}

}  // namespace tracekit
