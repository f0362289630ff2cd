#include "dblcox/lasso.hpp"

#include "dblcox/errors.hpp"
#include "dblcox/partial_likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dblcox {

namespace {

double soft_threshold(double x, double t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return 0.0;
}

double penalised(double loss, const Eigen::VectorXd& beta, double lambda) {
  return loss + lambda * beta.lpNorm<1>();
}

LassoFit fit_unscaled(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                      double lambda, const Eigen::VectorXd& init, const LassoOptions& opt) {
  const int p = data.p();
  LassoFit fit;
  fit.lambda = lambda;
  Eigen::VectorXd beta = init;

  constexpr double kArmijo = 1e-4;
  constexpr double kMinCurvature = 1e-12;
  double last_change = std::numeric_limits<double>::infinity();

  DerivativeBundle cur = evaluate(data, index, beta);
  for (int it = 0;; ++it) {
    const double f0 = penalised(cur.value, beta, lambda);
    fit.objective_trace.push_back(f0);
    fit.kkt_gap = kkt_gap(cur.gradient, beta, lambda);
    fit.iterations = it;

    std::vector<int> work;
    for (int j = 0; j < p; ++j) {
      if (beta[j] != 0.0 || std::abs(cur.gradient[j]) > lambda) work.push_back(j);
    }
    const bool settled = (it == 0) ? work.empty() : last_change < opt.tol;
    if (settled && fit.kkt_gap <= opt.kkt_tol) {
      fit.converged = true;
      break;
    }
    if (it >= opt.max_iter) {
      fit.warning = "lasso did not converge in " + std::to_string(opt.max_iter) + " passes";
      break;
    }

    // Quadratic model over the working set.
    const int w = static_cast<int>(work.size());
    const Eigen::MatrixXd h = hessian_block(data, index, beta, work);
    Eigen::VectorXd g(w), b0(w), v(w), hd = Eigen::VectorXd::Zero(w);
    for (int a = 0; a < w; ++a) {
      g[a] = cur.gradient[work[static_cast<std::size_t>(a)]];
      b0[a] = beta[work[static_cast<std::size_t>(a)]];
    }
    v = b0;
    const double inner_tol = std::min(opt.tol, 1e-9) * 0.1;
    for (int sweep = 0; sweep < opt.max_inner; ++sweep) {
      double max_delta = 0.0;
      for (int a = 0; a < w; ++a) {
        const double curv = std::max(h(a, a), kMinCurvature);
        const double r = g[a] + hd[a];
        const double nv = soft_threshold(curv * v[a] - r, lambda) / curv;
        const double delta = nv - v[a];
        if (delta != 0.0) {
          v[a] = nv;
          hd.noalias() += delta * h.col(a);
          max_delta = std::max(max_delta, std::abs(delta));
        }
      }
      if (max_delta < inner_tol) break;
    }

    const Eigen::VectorXd d = v - b0;
    const double decrease = g.dot(d) + lambda * (v.lpNorm<1>() - b0.lpNorm<1>());
    if (!(decrease < 0.0)) {
      // Quadratic model offers no descent: we are at its fixed point.
      last_change = 0.0;
      if (fit.kkt_gap <= opt.kkt_tol) {
        fit.converged = true;
      } else {
        fit.warning = "lasso stalled with KKT gap " + std::to_string(fit.kkt_gap);
      }
      break;
    }

    double step = 1.0;
    Eigen::VectorXd trial = beta;
    DerivativeBundle next;
    bool accepted = false;
    for (int halving = 0; halving < 50; ++halving) {
      trial = beta;
      for (int a = 0; a < w; ++a) trial[work[static_cast<std::size_t>(a)]] = b0[a] + step * d[a];
      next = evaluate(data, index, trial);
      if (penalised(next.value, trial, lambda) <= f0 + kArmijo * step * decrease) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      fit.warning = "line search failed";
      break;
    }
    last_change = (trial - beta).lpNorm<Eigen::Infinity>();
    beta = trial;
    cur = std::move(next);
  }

  fit.beta_hat = beta;
  fit.objective = penalised(cur.value, beta, lambda);
  return fit;
}

}  // namespace

int LassoFit::nonzeros() const {
  return static_cast<int>((beta_hat.array() != 0.0).count());
}

double kkt_gap(const Eigen::VectorXd& grad, const Eigen::VectorXd& beta, double lambda) {
  double gap = 0.0;
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    double v;
    if (beta[j] == 0.0) {
      v = std::max(0.0, std::abs(grad[j]) - lambda);
    } else {
      v = std::abs(grad[j] + lambda * (beta[j] > 0 ? 1.0 : -1.0));
    }
    gap = std::max(gap, v);
  }
  return gap;
}

LassoFit fit_lasso(const StratifiedSurvivalDataset& data, const RiskSetIndex& index, double lambda,
                   const Eigen::VectorXd& init, const LassoOptions& options) {
  if (!(lambda >= 0.0)) throw ContractError("lambda must be nonnegative");
  if (!(options.tol > 0.0)) throw ContractError("tol must be positive");
  if (init.size() != data.p()) throw ContractError("initial value has wrong length");

  if (!options.standardize) return fit_unscaled(data, index, lambda, init, options);

  const int p = data.p();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(p), sumsq = Eigen::VectorXd::Zero(p);
  for (const auto& s : data.strata()) {
    sum += s.covariates.colwise().sum().transpose();
    sumsq += s.covariates.array().square().colwise().sum().matrix().transpose();
  }
  const double n = static_cast<double>(data.n_total());
  Eigen::VectorXd scale = ((sumsq / n).array() - (sum / n).array().square()).max(0.0).sqrt().matrix();
  for (int j = 0; j < p; ++j) {
    if (!(scale[j] > 0.0)) scale[j] = 1.0;
  }
  std::vector<StratumBlock> strata = data.strata();
  for (auto& s : strata) s.covariates = s.covariates * scale.cwiseInverse().asDiagonal();
  const StratifiedSurvivalDataset scaled(std::move(strata), data.covariate_names());

  LassoFit fit = fit_unscaled(scaled, index, lambda, init.cwiseProduct(scale), options);
  fit.beta_hat = fit.beta_hat.cwiseQuotient(scale);
  return fit;
}

double lambda_max(const StratifiedSurvivalDataset& data, const RiskSetIndex& index) {
  return score(data, index, Eigen::VectorXd::Zero(data.p())).lpNorm<Eigen::Infinity>();
}

const LassoFit& LambdaPath::chosen_fit() const {
  if (!chosen) throw ContractError("no lambda has been chosen on this path");
  return fits[*chosen];
}

LambdaPath lambda_path(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                       int n_lambda, double ratio_min, const LassoOptions& options) {
  if (n_lambda < 2) throw ConfigError("lambda path needs at least 2 points");
  if (!(ratio_min > 0.0 && ratio_min < 1.0)) throw ConfigError("ratio_min must lie in (0,1)");
  const double lmax = lambda_max(data, index);
  std::vector<double> grid(static_cast<std::size_t>(n_lambda));
  for (int i = 0; i < n_lambda; ++i) {
    grid[static_cast<std::size_t>(i)] =
        lmax * std::pow(ratio_min, static_cast<double>(i) / static_cast<double>(n_lambda - 1));
  }
  grid.front() = lmax;
  LambdaPath path = lambda_path(data, index, std::move(grid), options);
  path.lambda_max = lmax;
  return path;
}

LambdaPath lambda_path(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                       std::vector<double> lambdas, const LassoOptions& options) {
  if (lambdas.empty()) throw ConfigError("lambda grid is empty");
  std::sort(lambdas.begin(), lambdas.end(), std::greater<>());
  LambdaPath path;
  path.lambda_max = lambda_max(data, index);
  path.lambdas = std::move(lambdas);
  Eigen::VectorXd warm = Eigen::VectorXd::Zero(data.p());
  for (double lam : path.lambdas) {
    path.fits.push_back(fit_lasso(data, index, lam, warm, options));
    warm = path.fits.back().beta_hat;
  }
  return path;
}

LambdaCvResult select_lambda_cv(const StratifiedSurvivalDataset& data, const FoldAssignment& folds,
                                LambdaPath& path, const LassoOptions& options) {
  LambdaCvResult res;
  const std::size_t n_lam = path.lambdas.size();
  if (n_lam == 0) throw ConfigError("lambda path is empty");
  res.cv_loss.assign(n_lam, 0.0);
  if (n_lam == 1) {
    res.lambda = path.lambdas.front();
    res.index = 0;
    path.chosen = 0;
    return res;
  }

  int used = 0;
  for (int q = 0; q < folds.num_folds; ++q) {
    const auto train = folds.training(data, q);
    if (train.n_events() == 0) {
      res.skipped_folds.push_back(q);
      res.warnings.push_back("fold " + std::to_string(q) + " skipped: no training events");
      continue;
    }
    const auto test = folds.testing(data, q);
    const auto train_index = build_risk_index(train);
    const auto test_index = build_risk_index(test);
    const double n_test = static_cast<double>(test.n_total());

    Eigen::VectorXd warm = Eigen::VectorXd::Zero(data.p());
    for (std::size_t i = 0; i < n_lam; ++i) {
      LassoFit f = fit_lasso(train, train_index, path.lambdas[i], warm, options);
      warm = f.beta_hat;
      res.cv_loss[i] += n_test * neg_log_partial_likelihood(test, test_index, f.beta_hat);
    }
    ++used;
  }
  if (used == 0) throw ConfigError("every cross-validation fold was skipped");

  res.index = static_cast<std::size_t>(
      std::distance(res.cv_loss.begin(), std::min_element(res.cv_loss.begin(), res.cv_loss.end())));
  res.lambda = path.lambdas[res.index];
  path.chosen = res.index;
  return res;
}

}  // namespace dblcox
