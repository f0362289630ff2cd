#include "dblcox/pipeline.hpp"

#include "dblcox/errors.hpp"
#include "dblcox/partial_likelihood.hpp"
#include "dblcox/seeding.hpp"
#include "dblcox/stats.hpp"

#include <chrono>
#include <cmath>
#include <limits>

namespace dblcox {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int default_gamma_folds(int num_strata) { return num_strata <= 10 ? num_strata : 10; }

PipelineResult fit_dblqp(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                         const PipelineConfig& config, const LambdaSelection* lambda) {
  PipelineResult res;
  auto t0 = std::chrono::steady_clock::now();
  res.lambda = lambda ? *lambda : select_lambda(data, index, config.lambda, derive_seed(config.seed, {0x1a}));
  for (const auto& w : res.lambda.cv.warnings) res.warnings.push_back(w);
  const LassoFit& lasso = res.lambda.fit();
  if (!lasso.converged) throw ConvergenceError("lasso at the selected lambda: " + lasso.warning);
  res.seconds_lambda = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  double gamma;
  if (config.gamma) {
    gamma = *config.gamma;
    if (!(gamma >= 0.0)) throw ConfigError("gamma must be nonnegative");
  } else {
    const int folds = config.gamma_folds > 0 ? config.gamma_folds : default_gamma_folds(data.num_strata());
    if (data.num_strata() < 2) {
      throw ConfigError("gamma cross-validation needs at least 2 strata; supply a fixed gamma");
    }
    const FoldAssignment fa =
        assign_folds(data, FoldMode::ByStratum, folds, derive_seed(config.seed, {0x2b}));
    GammaCvOptions opt;
    opt.alpha = config.threshold_alpha;
    opt.rule = config.lambda_rule;
    opt.frozen_lambda = lasso.lambda;
    opt.lambda = config.lambda;
    opt.seed = derive_seed(config.seed, {0x3c});
    opt.parallelism = config.parallelism;
    opt.qp = config.qp;
    res.gamma_cv = select_gamma_cv(data, config.gamma_grid, fa, opt);
    for (const auto& w : res.gamma_cv->warnings) res.warnings.push_back(w);
    gamma = res.gamma_cv->gamma;
  }
  res.seconds_gamma = seconds_since(t0);
  if (gamma >= 1.0) res.warnings.push_back("no bias correction: gamma >= 1 gives Theta = 0");

  t0 = std::chrono::steady_clock::now();
  res.fit = debias(data, index, lasso, gamma, config.parallelism, config.qp);
  res.seconds_debias = seconds_since(t0);
  return res;
}

InferenceReport build_report(const DebiasedFit& fit, const std::vector<std::string>& names,
                             double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0,1)");
  const auto p = fit.b_hat.size();
  if (static_cast<Eigen::Index>(names.size()) != p) throw ContractError("name count mismatch");
  InferenceReport rep;
  rep.alpha = alpha;
  rep.lambda = fit.lambda;
  rep.gamma = fit.gamma;
  rep.covariates = names;
  rep.estimate = fit;
  const double z = stats::normal_upper_quantile(alpha / 2.0);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (Eigen::Index j = 0; j < p; ++j) {
    CoefficientRow row;
    row.name = names[static_cast<std::size_t>(j)];
    row.estimate = fit.b_hat[j];
    row.lasso = fit.beta_hat[j];
    row.se = fit.se[j];
    if (row.se > 0.0) {
      row.z = row.estimate / row.se;
      row.p_value = stats::two_sided_p(row.z);
    } else {
      row.z = nan;
      row.p_value = nan;
    }
    row.lower = row.estimate - z * row.se;
    row.upper = row.estimate + z * row.se;
    row.hazard_ratio = std::exp(row.estimate);
    row.hr_lower = std::exp(row.lower);
    row.hr_upper = std::exp(row.upper);
    rep.coefficients.push_back(row);
  }
  return rep;
}

}  // namespace dblcox
