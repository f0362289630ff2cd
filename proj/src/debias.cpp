#include "dblcox/debias.hpp"

#include "dblcox/csv.hpp"
#include "dblcox/errors.hpp"
#include "dblcox/partial_likelihood.hpp"
#include "dblcox/seeding.hpp"
#include "dblcox/stats.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace dblcox {

Eigen::VectorXd DebiasedEstimate::standard_errors() const {
  const double n = static_cast<double>(n_total);
  return (theta_hat.diagonal().array().max(0.0) / n).sqrt().matrix();
}

DebiasedFit debias(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                   const LassoFit& lasso, double gamma, int parallelism, const QpOptions& qp) {
  if (!lasso.converged) throw ConvergenceError("de-biasing requires a converged lasso fit");
  const Eigen::MatrixXd sig = sigma_hat(data, index, lasso.beta_hat);
  const QpSolver solver(sig, qp);
  return debias(data, index, lasso, solver, gamma, parallelism);
}

DebiasedFit debias(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                   const LassoFit& lasso, const QpSolver& solver, double gamma, int parallelism) {
  if (!lasso.converged) throw ConvergenceError("de-biasing requires a converged lasso fit");
  if (!(gamma >= 0.0)) throw ContractError("gamma must be nonnegative");
  if (solver.dim() != data.p()) throw ContractError("solver dimension does not match data");

  DebiasedFit fit;
  fit.beta_hat = lasso.beta_hat;
  fit.lambda = lasso.lambda;
  fit.gamma = gamma;
  fit.n_total = data.n_total();
  fit.score = score(data, index, lasso.beta_hat);
  fit.sigma_hat = solver.sigma();
  fit.theta = solve_all_rows(solver, gamma, parallelism);
  fit.theta_hat = fit.theta.theta_hat;
  fit.b_hat = fit.beta_hat - fit.theta_hat * fit.score;
  fit.se = fit.standard_errors();
  return fit;
}

ActiveSet active_set(const DebiasedEstimate& est, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0,1)");
  const auto p = est.b_hat.size();
  ActiveSet a;
  a.alpha = alpha;
  a.threshold = stats::normal_upper_quantile(alpha / (2.0 * static_cast<double>(p)));
  const double root_n = std::sqrt(static_cast<double>(est.n_total));
  for (Eigen::Index j = 0; j < p; ++j) {
    const double var = est.theta_hat(j, j);
    double stat;
    if (var > 0.0) {
      stat = root_n * std::abs(est.b_hat[j]) / std::sqrt(var);
    } else {
      stat = est.b_hat[j] != 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    }
    if (stat > a.threshold) a.indices.push_back(static_cast<int>(j));
  }
  return a;
}

Eigen::VectorXd thresholded(const DebiasedEstimate& est, const ActiveSet& active) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(est.b_hat.size());
  for (int j : active.indices) out[j] = est.b_hat[j];
  return out;
}

// ---------------------------------------------------------------------------
// Unpenalised fits

MspleFit mspl_estimate(const StratifiedSurvivalDataset& data, const RiskSetIndex& index, double tol,
                       int max_iter) {
  const int p = data.p();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  DerivativeBundle cur = evaluate(data, index, beta, {.hessian = true});

  MspleFit out;
  bool converged = false;
  for (int it = 0; it < max_iter; ++it) {
    out.iterations = it;
    const double gnorm = cur.gradient.lpNorm<Eigen::Infinity>();
    if (gnorm <= 1e-12) {
      converged = true;
      break;
    }
    Eigen::VectorXd step;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(*cur.hessian);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) step = ldlt.solve(-cur.gradient);
    if (step.size() != p || !step.allFinite() || step.dot(cur.gradient) >= 0.0) step = -cur.gradient;

    const double slack = 1e-14 * (1.0 + std::abs(cur.value));
    double t = 1.0;
    Eigen::VectorXd trial;
    double value = 0.0;
    int halvings = 0;
    for (; halvings < 60; ++halvings) {
      trial = beta + t * step;
      value = neg_log_partial_likelihood(data, index, trial);
      if (std::isfinite(value) && value <= cur.value + slack) break;
      t *= 0.5;
    }
    if (halvings == 60) break;
    const double change = (t * step).lpNorm<Eigen::Infinity>();
    beta = trial;
    cur = evaluate(data, index, beta, {.hessian = true});
    if (change < tol && cur.gradient.lpNorm<Eigen::Infinity>() <= 1e-8) {
      out.iterations = it + 1;
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw ConvergenceError("MSPLE Newton iterations did not converge (max |score| = " +
                           std::to_string(cur.gradient.lpNorm<Eigen::Infinity>()) + ")");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(*cur.hessian);
  if (llt.info() != Eigen::Success) {
    throw ConvergenceError("Hessian is not positive definite at the MSPLE");
  }
  const Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(p, p));
  out.beta = beta;
  out.hessian = *cur.hessian;
  out.se = (inv.diagonal().array().max(0.0) / static_cast<double>(data.n_total())).sqrt().matrix();
  return out;
}

MspleFit oracle_estimate(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                         const std::vector<int>& support, double tol, int max_iter) {
  if (support.empty()) throw ContractError("oracle support must be nonempty");
  std::set<int> uniq(support.begin(), support.end());
  if (uniq.size() != support.size()) throw ContractError("oracle support has duplicates");
  for (int j : support) {
    if (j < 0 || j >= data.p()) throw ContractError("oracle support index out of range");
  }
  const auto reduced = data.select_columns(support);
  const MspleFit sub = mspl_estimate(reduced, index, tol, max_iter);
  const int p = data.p();
  MspleFit out;
  out.iterations = sub.iterations;
  out.beta = Eigen::VectorXd::Zero(p);
  out.se = Eigen::VectorXd::Zero(p);
  out.hessian = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t a = 0; a < support.size(); ++a) {
    const auto ia = static_cast<Eigen::Index>(a);
    out.beta[support[a]] = sub.beta[ia];
    out.se[support[a]] = sub.se[ia];
    for (std::size_t b = 0; b < support.size(); ++b) {
      out.hessian(support[a], support[b]) = sub.hessian(ia, static_cast<Eigen::Index>(b));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tuning

LambdaSelection select_lambda(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                              const LambdaTuning& tuning, std::uint64_t seed) {
  LambdaSelection sel;
  sel.path = tuning.grid.empty()
                 ? lambda_path(data, index, tuning.n_lambda, tuning.ratio_min, tuning.lasso)
                 : lambda_path(data, index, tuning.grid, tuning.lasso);
  if (sel.path.lambdas.size() == 1) {
    sel.path.chosen = 0;
    sel.cv.lambda = sel.path.lambdas.front();
    sel.cv.cv_loss = {0.0};
    return sel;
  }
  const FoldAssignment folds = assign_folds(data, tuning.mode, tuning.folds, seed);
  sel.cv = select_lambda_cv(data, folds, sel.path, tuning.lasso);
  return sel;
}

std::vector<double> default_gamma_grid() {
  std::vector<double> grid = {0.0};
  const double lo = std::log(1e-3);
  const double hi = std::log(0.5);
  for (int i = 0; i < 30; ++i) grid.push_back(std::exp(lo + (hi - lo) * i / 29.0));
  grid.back() = 0.5;
  return grid;
}

GammaCvResult select_gamma_cv(const StratifiedSurvivalDataset& data,
                              const std::vector<double>& gamma_grid, const FoldAssignment& folds,
                              const GammaCvOptions& options) {
  if (gamma_grid.empty()) throw ConfigError("gamma grid is empty");
  for (double g : gamma_grid) {
    if (!(g >= 0.0 && g <= 1.0)) throw ConfigError("gamma grid values must lie in [0,1]");
  }
  if (folds.mode != FoldMode::ByStratum) throw ConfigError("gamma selection needs by-stratum folds");
  if (folds.num_folds > data.num_strata()) throw ConfigError("more gamma folds than strata");
  if (options.rule == LambdaRule::Freeze && !(options.frozen_lambda >= 0.0)) {
    throw ConfigError("frozen lambda must be set and nonnegative");
  }

  GammaCvResult res;
  res.grid = gamma_grid;
  res.cv.assign(gamma_grid.size(), 0.0);
  if (gamma_grid.size() == 1) {
    res.gamma = gamma_grid.front();
    return res;
  }

  for (int q = 0; q < folds.num_folds; ++q) {
    const auto train = folds.training(data, q);
    if (train.n_events() == 0) {
      res.warnings.push_back("gamma fold " + std::to_string(q) + " skipped: no training events");
      continue;
    }
    const auto test = folds.testing(data, q);
    const auto train_index = build_risk_index(train);
    const auto test_index = build_risk_index(test);
    const double n_test = static_cast<double>(test.n_total());

    LassoFit lasso;
    if (options.rule == LambdaRule::Refit) {
      auto sel = select_lambda(train, train_index, options.lambda, derive_seed(options.seed, {0x9a, static_cast<std::uint64_t>(q)}));
      lasso = sel.fit();
    } else {
      lasso = fit_lasso(train, train_index, options.frozen_lambda, Eigen::VectorXd::Zero(data.p()),
                        options.lambda.lasso);
    }
    if (!lasso.converged) {
      res.warnings.push_back("gamma fold " + std::to_string(q) + ": " + lasso.warning);
    }

    const DerivativeBundle at_beta = evaluate(train, train_index, lasso.beta_hat, {.sigma_hat = true});
    const QpSolver solver(*at_beta.sigma_hat, options.qp);

    for (std::size_t g = 0; g < gamma_grid.size(); ++g) {
      if (std::isinf(res.cv[g])) continue;
      const PrecisionEstimate est = solve_all_rows_unchecked(solver, gamma_grid[g], options.parallelism);
      if (!est.ok()) {
        res.cv[g] = std::numeric_limits<double>::infinity();
        res.warnings.push_back("gamma=" + csv::format_double(gamma_grid[g]) + " infeasible in fold " +
                               std::to_string(q));
        continue;
      }
      DebiasedEstimate b;
      b.theta_hat = est.theta_hat;
      b.b_hat = lasso.beta_hat - est.theta_hat * at_beta.gradient;
      b.n_total = train.n_total();
      const Eigen::VectorXd bt = thresholded(b, active_set(b, options.alpha));
      res.cv[g] += n_test * neg_log_partial_likelihood(test, test_index, bt);
    }
  }

  auto best = std::min_element(res.cv.begin(), res.cv.end());
  if (std::isinf(*best)) throw InfeasibleError("every gamma on the grid was infeasible");
  res.index = static_cast<std::size_t>(std::distance(res.cv.begin(), best));
  res.gamma = gamma_grid[res.index];
  return res;
}

}  // namespace dblcox
