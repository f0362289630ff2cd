#pragma once

#include "dblcox/debias.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dblcox {

/// End-to-end settings: lambda by cross-validation, gamma by cross-validation
/// over by-stratum folds (or fixed), then de-biasing on the full sample.
struct PipelineConfig {
  LambdaTuning lambda;
  std::vector<double> gamma_grid = default_gamma_grid();
  std::optional<double> gamma;  // fixed gamma, skips selection
  int gamma_folds = 0;          // 0 picks K when K <= 10, else 10
  double threshold_alpha = 0.05;
  LambdaRule lambda_rule = LambdaRule::Refit;
  std::uint64_t seed = 1;
  int parallelism = 1;
  QpOptions qp;
};

struct PipelineResult {
  LambdaSelection lambda;
  std::optional<GammaCvResult> gamma_cv;
  DebiasedFit fit;
  std::vector<std::string> warnings;
  double seconds_lambda = 0.0;
  double seconds_gamma = 0.0;
  double seconds_debias = 0.0;
};

int default_gamma_folds(int num_strata);

/// `lambda`, when given, is reused instead of selecting lambda again.
PipelineResult fit_dblqp(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                         const PipelineConfig& config, const LambdaSelection* lambda = nullptr);

/// Per-coefficient inference row; hazard ratios are exp of the estimate and CI.
struct CoefficientRow {
  std::string name;
  double estimate = 0.0;
  double lasso = 0.0;
  double se = 0.0;
  double z = 0.0;
  double p_value = 1.0;
  double lower = 0.0;
  double upper = 0.0;
  double hazard_ratio = 1.0;
  double hr_lower = 1.0;
  double hr_upper = 1.0;
};

struct InferenceReport {
  double alpha = 0.05;
  double lambda = 0.0;
  double gamma = 0.0;
  std::vector<std::string> covariates;
  std::vector<CoefficientRow> coefficients;
  std::vector<ContrastResult> contrasts;
  std::vector<std::string> warnings;
  DebiasedEstimate estimate;
};

/// Coefficients with se == 0 (no correction) get NaN z and p-value and a
/// degenerate interval at the estimate.
InferenceReport build_report(const DebiasedFit& fit, const std::vector<std::string>& names,
                             double alpha);

}  // namespace dblcox
