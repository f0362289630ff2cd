#pragma once

#include "dblcox/survdata.hpp"

#include <Eigen/Core>

#include <optional>
#include <span>
#include <vector>

namespace dblcox {

/**
 * Negative log stratified partial likelihood and its derivatives at `beta`.
 *
 *   l(b)   = -(1/N) sum_k sum_i d_ki [ b'X_ki - log{ (1/n_k) sum_j 1(Y_kj >= Y_ki) exp(b'X_kj) } ]
 *   dl(b)  = -(1/N) sum_k sum_i d_ki [ X_ki - eta_k(Y_ki; b) ]
 *   d2l(b) =  (1/N) sum_k sum_i d_ki [ mu2/mu0 - eta^{x2} ]
 *   Sigma  =  (1/N) sum_k sum_i d_ki [ X_ki - eta_k(Y_ki; b) ]^{x2}
 *
 * eta_k is the exp(b'X)-weighted covariate average over the risk set.
 * Ties follow the Breslow convention.
 */
struct DerivativeBundle {
  Eigen::VectorXd beta;
  double value = 0.0;
  Eigen::VectorXd gradient;
  std::optional<Eigen::MatrixXd> hessian;
  std::optional<Eigen::MatrixXd> sigma_hat;
};

struct DerivativeRequest {
  bool gradient = true;
  bool hessian = false;
  bool sigma_hat = false;
};

DerivativeBundle evaluate(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                          const Eigen::VectorXd& beta, DerivativeRequest request = {});

double neg_log_partial_likelihood(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                                  const Eigen::VectorXd& beta);

Eigen::VectorXd score(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                      const Eigen::VectorXd& beta);

Eigen::MatrixXd hessian(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                        const Eigen::VectorXd& beta);

Eigen::MatrixXd sigma_hat(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                          const Eigen::VectorXd& beta);

/// Hessian restricted to the covariates listed in `cols` (|cols| x |cols|).
Eigen::MatrixXd hessian_block(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                              const Eigen::VectorXd& beta, std::span<const int> cols);

/// Risk-set weighted moments at each event of one stratum, in sorted event order.
struct StratumAverages {
  std::vector<int> event_rows;          // original row of each event
  Eigen::VectorXd mu0;                  // mu0_k(Y_ki)
  Eigen::MatrixXd mu1;                  // events x p
  Eigen::MatrixXd eta;                  // events x p, mu1 / mu0
  std::vector<Eigen::MatrixXd> mu2;     // p x p per event, only when requested
};

struct WeightedAverages {
  std::vector<StratumAverages> strata;
};

WeightedAverages weighted_averages(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                                   const Eigen::VectorXd& beta, bool second_moment = false);

/// Breslow cumulative baseline hazard: a right-continuous step function per stratum.
struct StratumHazard {
  std::vector<double> jump_times;
  std::vector<double> cumulative;

  double at(double t) const;
};

struct BaselineHazard {
  std::vector<StratumHazard> strata;
};

BaselineHazard breslow_baseline(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                                const Eigen::VectorXd& beta);

}  // namespace dblcox
