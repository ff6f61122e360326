#include "core/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "core/common.hpp"

namespace tracekit {

namespace {

constexpr std::int64_t kMedianPoolCap = 4096;

// Deterministic thinning for the quadratic median pass; seeding by the row
// count keeps byte-identical inputs on identical subsets.
Eigen::MatrixXd thin_pool(const Eigen::MatrixXd& pts, std::int64_t limit) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(pts.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(mix_seed(0xBA4D, static_cast<std::uint64_t>(pts.rows())));
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(static_cast<std::size_t>(limit));
  std::sort(idx.begin(), idx.end());
  Eigen::MatrixXd out(limit, pts.cols());
  for (std::int64_t i = 0; i < limit; ++i)
    out.row(i) = pts.row(idx[static_cast<std::size_t>(i)]);
  return out;
}

void check_pair(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() < 1 || b.rows() < 1)
    fail_usage("kernels: point clouds must be non-empty");
  if (a.cols() != b.cols())
    fail_usage("kernels: point clouds disagree on dimension");
  if (!a.allFinite() || !b.allFinite())
    fail_numeric("kernels: non-finite entries in point cloud");
}

double resolve_bandwidth(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                         const KernelConfig& cfg) {
  if (cfg.bandwidth > 0.0) return cfg.bandwidth;
  return median_bandwidth(a, b);
}

}  // namespace

double median_bandwidth(const Eigen::MatrixXd& pooled) {
  if (pooled.rows() < 2)
    fail_usage("kernels: median bandwidth needs at least 2 points");
  Eigen::MatrixXd thin;
  const Eigen::MatrixXd* pts = &pooled;
  if (pooled.rows() > kMedianPoolCap) {
    thin = thin_pool(pooled, kMedianPoolCap);
    pts = &thin;
  }
  const std::int64_t n = pts->rows();
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = i + 1; j < n; ++j)
      dist.push_back((pts->row(i) - pts->row(j)).norm());
  auto mid = dist.begin() + static_cast<std::ptrdiff_t>((dist.size() - 1) / 2);
  std::nth_element(dist.begin(), mid, dist.end());
  if (*mid <= 0.0)
    fail_numeric("kernels: degenerate bandwidth, points coincide");
  return *mid;
}

double median_bandwidth(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  check_pair(a, b);
  Eigen::MatrixXd pooled(a.rows() + b.rows(), a.cols());
  pooled.topRows(a.rows()) = a;
  pooled.bottomRows(b.rows()) = b;
  return median_bandwidth(pooled);
}

Eigen::MatrixXd rbf_gram(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                         double bandwidth) {
  if (bandwidth <= 0.0) fail_usage("kernels: bandwidth must be positive");
  Eigen::VectorXd an = a.rowwise().squaredNorm();
  Eigen::VectorXd bn = b.rowwise().squaredNorm();
  Eigen::MatrixXd d2 = -2.0 * a * b.transpose();
  d2.colwise() += an;
  d2.rowwise() += bn.transpose();
  d2 = d2.cwiseMax(0.0);
  Eigen::MatrixXd k = (-d2 / (2.0 * bandwidth * bandwidth)).array().exp();
  // A self-product must come back exactly symmetric; the matrix product
  // alone leaves ulp-level asymmetry behind.
  if (a.data() == b.data() && a.rows() == b.rows() && a.cols() == b.cols())
    k = ((k + k.transpose()) / 2.0).eval();
  return k;
}

MmdResult mmd(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
              const KernelConfig& cfg) {
  check_pair(a, b);
  MmdResult out;
  out.bandwidth = resolve_bandwidth(a, b, cfg);
  const std::int64_t n = a.rows();
  const std::int64_t m = b.rows();
  Eigen::MatrixXd kaa = rbf_gram(a, a, out.bandwidth);
  Eigen::MatrixXd kbb = rbf_gram(b, b, out.bandwidth);
  Eigen::MatrixXd kab = rbf_gram(a, b, out.bandwidth);

  if (cfg.estimator == MmdEstimator::kBiased) {
    out.mmd_squared = kaa.mean() + kbb.mean() - 2.0 * kab.mean();
  } else {
    if (n < 2 || m < 2)
      fail_usage("kernels: unbiased estimator needs at least 2 points a side");
    const double nn = static_cast<double>(n) * static_cast<double>(n - 1);
    const double mm = static_cast<double>(m) * static_cast<double>(m - 1);
    if (n == m) {
      // Paired one-sample form: identical clouds cancel term by term.
      double total = (kaa.sum() - static_cast<double>(n)) +
                     (kbb.sum() - static_cast<double>(n)) -
                     2.0 * (kab.sum() - kab.trace());
      out.mmd_squared = total / nn;
    } else {
      double aa = (kaa.sum() - static_cast<double>(n)) / nn;
      double bb = (kbb.sum() - static_cast<double>(m)) / mm;
      double cross =
          2.0 * kab.sum() / (static_cast<double>(n) * static_cast<double>(m));
      out.mmd_squared = aa + bb - cross;
    }
  }
  out.mmd = std::sqrt(std::max(0.0, out.mmd_squared));
  return out;
}

double mmd_concentration(std::int64_t n, const KernelConfig& cfg,
                         double delta) {
  if (n < 1) fail_usage("kernels: sample count must be >= 1");
  if (!(delta > 0.0 && delta < 1.0))
    fail_usage("kernels: delta must lie in (0, 1)");
  if (cfg.c_kappa < 0.0) fail_usage("kernels: c_kappa must be >= 0");
  return cfg.c_kappa * std::sqrt(std::log(2.0 / delta) / static_cast<double>(n));
}

KrrFit krr_fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets,
               double lambda, const KernelConfig& cfg) {
  if (features.rows() < 1) fail_usage("kernels: regression needs >= 1 row");
  if (features.rows() != targets.size())
    fail_usage("kernels: feature and target counts disagree");
  if (lambda <= 0.0) fail_usage("kernels: lambda must be positive");
  if (!features.allFinite() || !targets.allFinite())
    fail_numeric("kernels: non-finite regression inputs");

  KrrFit fit;
  fit.support_points = features;
  fit.lambda = lambda;
  fit.bandwidth =
      cfg.bandwidth > 0.0 ? cfg.bandwidth : median_bandwidth(features);

  const std::int64_t m = features.rows();
  Eigen::MatrixXd k = rbf_gram(features, features, fit.bandwidth);
  Eigen::MatrixXd system = k;
  system.diagonal().array() += static_cast<double>(m) * lambda;
  fit.alpha = system.ldlt().solve(targets);
  double residual = (system * fit.alpha - targets).norm();
  if (residual > 1e-8 * targets.norm())
    fail_numeric("kernels: regression solve did not meet tolerance");
  fit.rkhs_norm = std::sqrt(std::max(0.0, fit.alpha.dot(k * fit.alpha)));
  return fit;
}

Eigen::VectorXd krr_predict(const KrrFit& fit, const Eigen::MatrixXd& points) {
  if (points.cols() != fit.support_points.cols())
    fail_usage("kernels: prediction points disagree on dimension");
  return rbf_gram(points, fit.support_points, fit.bandwidth) * fit.alpha;
}

RkhsEstimate estimate_rkhs_norm(const Dataset& ds, const Predictor& predictor,
                                const LossSpec& loss, const KernelConfig& cfg,
                                const std::vector<double>& lambda_grid) {
  if (ds.rows() < 10)
    fail_usage("kernels: norm estimate needs at least 10 points");
  if (lambda_grid.empty()) fail_usage("kernels: lambda grid is empty");

  const std::int64_t m = ds.rows();
  Eigen::VectorXd targets(m);
  for (std::int64_t i = 0; i < m; ++i) {
    Eigen::VectorXd z = forward(predictor, ds.features.row(i).transpose());
    targets(i) = ds.kind == LabelKind::kClass
                     ? loss_value(loss, z, ds.labels[static_cast<std::size_t>(i)])
                     : loss_value(loss, z, ds.targets[static_cast<std::size_t>(i)]);
  }

  // One bandwidth for every fold, resolved on the full support set, so fold
  // membership never perturbs the kernel itself.
  KernelConfig resolved = cfg;
  if (resolved.bandwidth <= 0.0)
    resolved.bandwidth = median_bandwidth(ds.features);

  const int folds = 5;
  double best_err = std::numeric_limits<double>::infinity();
  double best_lambda = lambda_grid.front();
  for (double lambda : lambda_grid) {
    double err = 0.0;
    for (int fold = 0; fold < folds; ++fold) {
      std::vector<std::int64_t> in, out;
      for (std::int64_t i = 0; i < m; ++i)
        (i % folds == fold ? out : in).push_back(i);
      if (in.empty() || out.empty()) continue;
      Eigen::MatrixXd xin(static_cast<std::int64_t>(in.size()), ds.cols());
      Eigen::VectorXd tin(static_cast<std::int64_t>(in.size()));
      for (std::size_t r = 0; r < in.size(); ++r) {
        xin.row(static_cast<std::int64_t>(r)) = ds.features.row(in[r]);
        tin(static_cast<std::int64_t>(r)) = targets(in[r]);
      }
      Eigen::MatrixXd xout(static_cast<std::int64_t>(out.size()), ds.cols());
      Eigen::VectorXd tout(static_cast<std::int64_t>(out.size()));
      for (std::size_t r = 0; r < out.size(); ++r) {
        xout.row(static_cast<std::int64_t>(r)) = ds.features.row(out[r]);
        tout(static_cast<std::int64_t>(r)) = targets(out[r]);
      }
      KrrFit fit = krr_fit(xin, tin, lambda, resolved);
      err += (krr_predict(fit, xout) - tout).squaredNorm();
    }
    if (err < best_err) {
      best_err = err;
      best_lambda = lambda;
    }
  }

  KrrFit final_fit = krr_fit(ds.features, targets, best_lambda, resolved);
  RkhsEstimate est;
  est.b_hat = final_fit.rkhs_norm;
  est.lambda = best_lambda;
  return est;
}

}  // namespace tracekit
