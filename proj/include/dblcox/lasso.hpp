#pragma once

#include "dblcox/survdata.hpp"

#include <Eigen/Core>

#include <optional>
#include <string>
#include <vector>

namespace dblcox {

struct LassoOptions {
  double tol = 1e-7;         // max coefficient change between outer passes
  int max_iter = 200;        // outer (Newton) passes
  double kkt_tol = 1e-6;     // stationarity violation accepted at convergence
  int max_inner = 10000;     // coordinate sweeps per quadratic subproblem
  bool standardize = false;  // fit on unit-variance columns, report on the original scale
};

/**
 * Minimiser of l(b) + lambda * ||b||_1.
 *
 * `kkt_gap` is max_j of |g_j| - lambda (zero coordinates, clipped at 0) or
 * |g_j + lambda sign(b_j)| (nonzero coordinates), with g the score at b.
 * `objective_trace` holds the penalised objective at the start of each pass.
 */
struct LassoFit {
  Eigen::VectorXd beta_hat;
  double lambda = 0.0;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  double kkt_gap = 0.0;
  std::vector<double> objective_trace;
  std::string warning;

  int nonzeros() const;
};

/**
 * Proximal Newton with cyclic coordinate descent on the quadratic model.
 *
 * Each pass builds the exact Hessian over a working set (nonzero
 * coefficients plus KKT violators), solves the l1-penalised quadratic
 * subproblem by soft-thresholded coordinate descent, and backtracks on the
 * true penalised objective so it never increases. Coordinates outside the
 * working set are zero and satisfy the KKT condition at every pass.
 */
LassoFit fit_lasso(const StratifiedSurvivalDataset& data, const RiskSetIndex& index, double lambda,
                   const Eigen::VectorXd& init, const LassoOptions& options = {});

/// Max KKT violation of `beta` for penalty `lambda` given the score `grad`.
double kkt_gap(const Eigen::VectorXd& grad, const Eigen::VectorXd& beta, double lambda);

/// ||score(0)||_inf, the smallest lambda whose lasso solution is zero.
double lambda_max(const StratifiedSurvivalDataset& data, const RiskSetIndex& index);

struct LambdaPath {
  std::vector<double> lambdas;  // descending
  std::vector<LassoFit> fits;
  double lambda_max = 0.0;
  std::optional<std::size_t> chosen;

  const LassoFit& chosen_fit() const;
};

/// Log-spaced grid from lambda_max down to ratio_min * lambda_max, warm-started.
LambdaPath lambda_path(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                       int n_lambda, double ratio_min, const LassoOptions& options = {});

/// Warm-started fits over an explicit grid (sorted into descending order).
LambdaPath lambda_path(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                       std::vector<double> lambdas, const LassoOptions& options = {});

struct LambdaCvResult {
  double lambda = 0.0;
  std::size_t index = 0;
  std::vector<double> cv_loss;  // sum over folds of N_test * l_test
  std::vector<int> skipped_folds;
  std::vector<std::string> warnings;
};

/**
 * Cross-validated choice of lambda over `path`.
 *
 * For each fold the path is refit on the training part and every fit is
 * scored by the held-out negative log partial likelihood, with risk sets
 * formed from the held-out observations only, weighted by the held-out size.
 * Sets `path.chosen`. Folds whose training part has no events are skipped;
 * ConfigError if all folds are skipped.
 */
LambdaCvResult select_lambda_cv(const StratifiedSurvivalDataset& data, const FoldAssignment& folds,
                                LambdaPath& path, const LassoOptions& options = {});

}  // namespace dblcox
