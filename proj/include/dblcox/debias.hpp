#pragma once

#include "dblcox/lasso.hpp"
#include "dblcox/qp_solver.hpp"
#include "dblcox/survdata.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace dblcox {

/// The pieces every Wald/contrast computation needs: b, Theta and N.
struct DebiasedEstimate {
  Eigen::VectorXd b_hat;
  Eigen::MatrixXd theta_hat;
  int n_total = 0;

  /// sqrt(Theta_jj / N), zero when Theta_jj <= 0.
  Eigen::VectorXd standard_errors() const;
};

/**
 * One-step corrected lasso estimate b = beta - Theta * score(beta).
 *
 * `score` and `sigma_hat` are evaluated at the lasso estimate; `theta`
 * carries the per-row certificates of the quadratic programs.
 */
struct DebiasedFit : DebiasedEstimate {
  Eigen::VectorXd beta_hat;
  Eigen::VectorXd score;
  Eigen::MatrixXd sigma_hat;
  PrecisionEstimate theta;
  Eigen::VectorXd se;
  double lambda = 0.0;
  double gamma = 0.0;
};

/**
 * De-bias a converged lasso fit at constraint radius `gamma`.
 *
 * Throws ConvergenceError for an unconverged fit and InfeasibleError naming
 * gamma and the rows when any row problem fails.
 */
DebiasedFit debias(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                   const LassoFit& lasso, double gamma, int parallelism = 1,
                   const QpOptions& qp = {});

/// Same, reusing a solver already built on sigma_hat(beta_hat).
DebiasedFit debias(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                   const LassoFit& lasso, const QpSolver& solver, double gamma,
                   int parallelism = 1);

/// Coordinates whose Wald statistic sqrt(N)|b_j| / Theta_jj^{1/2} exceeds z_{alpha/(2p)}.
struct ActiveSet {
  std::vector<int> indices;
  double alpha = 0.05;
  double threshold = 0.0;
};

ActiveSet active_set(const DebiasedEstimate& est, double alpha);

/// b with every coordinate outside the active set set to zero.
Eigen::VectorXd thresholded(const DebiasedEstimate& est, const ActiveSet& active);

struct WaldResult {
  double statistic = 0.0;
  double p_value = 1.0;
  bool reject = false;
};

/// T = sqrt(N)(c'b - a0) / (c' Theta c)^{1/2}; DegenerateVarianceError if c' Theta c <= 0.
WaldResult wald_test(const DebiasedEstimate& est, const Eigen::VectorXd& c, double a0, double alpha);

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

/// c'b -/+ z_{alpha/2} (c' Theta c / N)^{1/2}.
Interval confidence_interval(const DebiasedEstimate& est, const Eigen::VectorXd& c, double alpha);

/// Linear hypotheses J beta = a0; J must have full row rank m <= p.
struct ContrastSpec {
  std::string label = "contrast";
  Eigen::MatrixXd J;
  Eigen::VectorXd a0;
};

/// Throws ConfigError naming the rows of J that are linearly dependent on earlier rows.
void validate_contrast(const ContrastSpec& spec, int p);

struct ContrastResult {
  std::string label;
  double statistic = 0.0;  // N (Jb - a0)' F^{-1} (Jb - a0), F = J Theta J'
  int df = 0;
  double p_value = 1.0;
  double critical_value = 0.0;  // chi2_{m,alpha}; the confidence region is {a : stat(a) < critical}
  bool reject = false;
};

ContrastResult contrast_test(const DebiasedEstimate& est, const ContrastSpec& spec, double alpha);

/// One row e_a - e_b per (a, b) pair (0-based). b = -1 stands for an omitted
/// reference level, giving the row e_a.
ContrastSpec pairwise_contrast(int p, const std::vector<std::pair<int, int>>& pairs,
                               std::string label = "pairwise");

struct MspleFit {
  Eigen::VectorXd beta;
  Eigen::VectorXd se;       // sqrt(diag(hessian^{-1}) / N)
  Eigen::MatrixXd hessian;  // at beta
  int iterations = 0;
};

/**
 * Maximum stratified partial likelihood estimate by Newton-Raphson with
 * step halving. Throws ConvergenceError after `max_iter` iterations.
 */
MspleFit mspl_estimate(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                       double tol = 1e-10, int max_iter = 100);

/// MSPLE on the covariates in `support`, embedded back into length p (zeros elsewhere).
MspleFit oracle_estimate(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                         const std::vector<int>& support, double tol = 1e-10, int max_iter = 100);

enum class LambdaRule { Refit, Freeze };

/// How lambda is picked for a lasso fit: a path plus cross-validation.
struct LambdaTuning {
  int n_lambda = 50;
  double ratio_min = 0.05;
  std::vector<double> grid;  // explicit grid overrides n_lambda / ratio_min
  int folds = 5;
  FoldMode mode = FoldMode::WithinStratum;
  LassoOptions lasso;
};

struct LambdaSelection {
  LambdaPath path;
  LambdaCvResult cv;
  const LassoFit& fit() const { return path.chosen_fit(); }
};

/// Path on `data` and cross-validated choice of lambda.
LambdaSelection select_lambda(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                              const LambdaTuning& tuning, std::uint64_t seed);

struct GammaCvOptions {
  double alpha = 0.05;  // active-set level, Bonferroni-split as alpha / (2p)
  LambdaRule rule = LambdaRule::Refit;
  double frozen_lambda = std::numeric_limits<double>::quiet_NaN();
  LambdaTuning lambda;
  std::uint64_t seed = 0;
  int parallelism = 1;
  QpOptions qp;
};

struct GammaCvResult {
  double gamma = 0.0;
  std::size_t index = 0;
  std::vector<double> grid;
  std::vector<double> cv;  // +inf where some fold had an infeasible row problem
  std::vector<std::string> warnings;
};

/**
 * Cross-validated choice of gamma with hard-thresholded de-biased estimates.
 *
 * For every by-stratum fold q and grid point g: fit the lasso on the training
 * strata, de-bias at gamma_g, zero the coordinates outside the active set,
 * and add N_q * l_q(b_thres) (held-out strata) to cv_g. Returns argmin_g cv_g.
 */
GammaCvResult select_gamma_cv(const StratifiedSurvivalDataset& data,
                              const std::vector<double>& gamma_grid, const FoldAssignment& folds,
                              const GammaCvOptions& options);

/// 30 log-spaced points in [1e-3, 0.5] preceded by 0.
std::vector<double> default_gamma_grid();

}  // namespace dblcox
