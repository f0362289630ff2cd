#include "dblcox/debias.hpp"
#include "dblcox/errors.hpp"
#include "dblcox/stats.hpp"

#include <Eigen/LU>
#include <Eigen/QR>
#include <Eigen/Eigenvalues>

#include <cmath>

namespace dblcox {

namespace {

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0,1)");
}

double loading_variance(const DebiasedEstimate& est, const Eigen::VectorXd& c) {
  if (c.size() != est.b_hat.size()) throw ContractError("loading vector has wrong length");
  const double v = c.dot(est.theta_hat * c);
  if (!(v > 0.0)) throw DegenerateVarianceError("c' Theta c is not positive");
  return v;
}

}  // namespace

WaldResult wald_test(const DebiasedEstimate& est, const Eigen::VectorXd& c, double a0, double alpha) {
  check_alpha(alpha);
  const double v = loading_variance(est, c);
  WaldResult r;
  r.statistic = std::sqrt(static_cast<double>(est.n_total)) * (c.dot(est.b_hat) - a0) / std::sqrt(v);
  r.p_value = stats::two_sided_p(r.statistic);
  r.reject = std::abs(r.statistic) > stats::normal_upper_quantile(alpha / 2.0);
  return r;
}

Interval confidence_interval(const DebiasedEstimate& est, const Eigen::VectorXd& c, double alpha) {
  check_alpha(alpha);
  const double v = loading_variance(est, c);
  const double half = stats::normal_upper_quantile(alpha / 2.0) *
                      std::sqrt(v / static_cast<double>(est.n_total));
  const double centre = c.dot(est.b_hat);
  return {centre - half, centre + half};
}

void validate_contrast(const ContrastSpec& spec, int p) {
  const auto m = spec.J.rows();
  if (m < 1) throw ConfigError("contrast '" + spec.label + "' has no rows");
  if (spec.J.cols() != p) {
    throw ConfigError("contrast '" + spec.label + "' has " + std::to_string(spec.J.cols()) +
                      " columns, expected " + std::to_string(p));
  }
  if (spec.a0.size() != m) throw ConfigError("contrast '" + spec.label + "' a0 length mismatch");
  if (m > p) throw ConfigError("contrast '" + spec.label + "' has more rows than coefficients");
  if (!spec.J.allFinite() || !spec.a0.allFinite()) {
    throw ConfigError("contrast '" + spec.label + "' has non-finite entries");
  }

  // Grow the row set one row at a time; a row that does not raise the rank
  // is a combination of the rows before it.
  std::string dependent;
  Eigen::MatrixXd kept(0, p);
  const double scale = std::max(1.0, spec.J.lpNorm<Eigen::Infinity>());
  for (Eigen::Index i = 0; i < m; ++i) {
    Eigen::MatrixXd trial(kept.rows() + 1, p);
    trial << kept, spec.J.row(i);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(trial.transpose());
    qr.setThreshold(1e-10 / scale);
    if (qr.rank() == trial.rows()) {
      kept = std::move(trial);
    } else {
      dependent += (dependent.empty() ? "" : ",") + std::to_string(i + 1);
    }
  }
  if (!dependent.empty()) {
    throw ConfigError("contrast '" + spec.label + "' is rank deficient; dependent rows: " + dependent);
  }
}

ContrastResult contrast_test(const DebiasedEstimate& est, const ContrastSpec& spec, double alpha) {
  check_alpha(alpha);
  validate_contrast(spec, static_cast<int>(est.b_hat.size()));
  const auto m = spec.J.rows();
  const Eigen::MatrixXd f = spec.J * est.theta_hat * spec.J.transpose();
  const Eigen::MatrixXd f_sym = 0.5 * (f + f.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(f_sym, Eigen::EigenvaluesOnly);
  if (!(eig.eigenvalues().minCoeff() > 0.0)) {
    throw DegenerateVarianceError("J Theta J' is not positive definite for contrast '" + spec.label + "'");
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(f);
  if (!lu.isInvertible()) throw DegenerateVarianceError("J Theta J' is singular");

  const Eigen::VectorXd diff = spec.J * est.b_hat - spec.a0;
  ContrastResult r;
  r.label = spec.label;
  r.df = static_cast<int>(m);
  r.statistic = static_cast<double>(est.n_total) * diff.dot(lu.solve(diff));
  r.p_value = stats::chi2_sf(r.statistic, static_cast<double>(m));
  r.critical_value = stats::chi2_upper_quantile(static_cast<double>(m), alpha);
  r.reject = r.statistic > r.critical_value;
  return r;
}

ContrastSpec pairwise_contrast(int p, const std::vector<std::pair<int, int>>& pairs,
                               std::string label) {
  ContrastSpec spec;
  spec.label = std::move(label);
  spec.J = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(pairs.size()), p);
  spec.a0 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto [a, b] = pairs[i];
    if (a < 0 || a >= p || b < -1 || b >= p || a == b) throw ConfigError("invalid contrast pair");
    spec.J(static_cast<Eigen::Index>(i), a) = 1.0;
    if (b >= 0) spec.J(static_cast<Eigen::Index>(i), b) = -1.0;
  }
  return spec;
}

}  // namespace dblcox
