#pragma once

#include "dblcox/pipeline.hpp"
#include "dblcox/survdata.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dblcox::sim {

enum class CensoringKind { ProportionalExponential, Uniform };

/// Censoring either exponential with hazard factor * lambda_0k * exp(x'b), or Uniform(lower, upper).
struct CensoringModel {
  CensoringKind kind = CensoringKind::ProportionalExponential;
  double factor = 0.2;
  double lower = 1.0;
  double upper = 30.0;
};

/**
 * Generative configuration for stratified exponential survival data.
 *
 * Covariates are N_p(0, AR1(rho)) clamped componentwise to [-truncation,
 * truncation]. The first coefficient is `beta1`; `nonzero_positions` carry
 * `nonzero_values`; everything else is zero. Stratum sizes, baseline
 * hazards and nonzero positions are frozen at construction.
 */
struct SimulationScenario {
  std::string name;
  std::vector<int> stratum_sizes;
  int p = 0;
  double beta1 = 0.0;
  std::vector<int> nonzero_positions;
  std::vector<double> nonzero_values;
  double rho = 0.5;
  double truncation = 3.0;
  std::vector<double> baseline_hazards;
  CensoringModel censoring;
  int n_replicates = 100;
  std::uint64_t seed = 1;
  int gamma_folds = 0;  // by-stratum folds for gamma selection, 0 = default rule

  int num_strata() const { return static_cast<int>(stratum_sizes.size()); }
  Eigen::VectorXd beta0() const;
  /// Coordinate 0 plus the fixed nonzero positions, ascending.
  std::vector<int> oracle_support() const;
  /// Throws ConfigError when an invariant fails.
  void validate() const;
};

/// Scenario names: "1", "2", "3", "4", "figure1".
std::vector<std::string> scenario_names();

/**
 * Build a preset. `seed` freezes the one-off draws (baseline hazards,
 * Poisson stratum sizes, nonzero positions) and seeds the replicates.
 */
SimulationScenario make_scenario(const std::string& name, std::uint64_t seed = 20240101);

std::vector<SimulationScenario> scenario_presets(std::uint64_t seed = 20240101);

struct GeneratedData {
  StratifiedSurvivalDataset data;
  std::vector<Eigen::VectorXd> event_times;   // latent T per stratum, diagnostics only
  std::vector<Eigen::VectorXd> censor_times;  // latent C per stratum, diagnostics only
};

/**
 * Survival times for given covariate rows and per-row uniforms in (0, 1].
 * Row i depends only on row i of each input, so permuting rows permutes
 * the output.
 */
void survival_times(const Eigen::MatrixXd& covariates, const Eigen::VectorXd& u_event,
                    const Eigen::VectorXd& u_censor, double baseline_hazard,
                    const Eigen::VectorXd& beta, const CensoringModel& censoring,
                    Eigen::VectorXd& event_time, Eigen::VectorXd& censor_time);

/// Deterministic in (scenario.seed, replicate). Latent times kept when `diagnostics`.
GeneratedData generate_dataset(const SimulationScenario& scenario, std::uint64_t replicate,
                               bool diagnostics = false);

enum class Method { DblQp, Msple, Lasso, Oracle };

const char* to_string(Method m);
Method parse_method(const std::string& text);
std::vector<Method> parse_methods(const std::string& csv_list);

/// One estimator on one replicate. `covered` is -1 when the method has no interval.
struct ReplicateResult {
  std::string scenario;
  std::uint64_t seed = 0;
  double beta1 = 0.0;
  int replicate = 0;
  std::string method;
  double estimate = 0.0;
  double se = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  int covered = -1;
  double lambda = 0.0;
  double gamma = 0.0;
  double seconds = 0.0;  // not serialised
  std::string status = "ok";

  bool ok() const { return status == "ok"; }
};

struct SimulationSummary {
  std::string scenario;
  double beta1 = 0.0;
  std::string method;
  int replicates = 0;
  int failures = 0;
  double bias = 0.0;
  double coverage = 0.0;      // NaN when the method reports no intervals
  double model_se = 0.0;      // NaN when the method reports no standard errors
  double empirical_se = 0.0;  // sample standard deviation of the estimates
  bool unreliable = false;    // more than 20% failed replicates
};

/// Aggregate results of one (scenario, beta1, method) group; failed rows only count as failures.
SimulationSummary summarize(const std::vector<ReplicateResult>& results, double beta1);

struct MonteCarloConfig {
  PipelineConfig pipeline;
  double alpha = 0.05;
  int parallelism = 1;  // replicates run concurrently
  /// Called after each successful DBL-QP fit; must be thread-safe when parallelism > 1.
  std::function<void(int replicate, const GeneratedData&, const DebiasedFit&)> on_dblqp;
};

struct MonteCarloResult {
  std::vector<ReplicateResult> replicates;  // ordered by (replicate, method)
  std::vector<SimulationSummary> summaries; // one per method, in request order
};

MonteCarloResult run_monte_carlo(const SimulationScenario& scenario, const std::vector<Method>& methods,
                                 const MonteCarloConfig& config);

/// Fixed-gamma DBL-QP over a grid, one lasso fit per replicate. Method labels are "dblqp(gamma=<g>)".
MonteCarloResult run_gamma_sweep(const SimulationScenario& scenario, const std::vector<double>& gammas,
                                 const MonteCarloConfig& config);

/// Parse "start:stop:step" into the inclusive grid.
std::vector<double> parse_sweep(const std::string& spec);

/// Group by (scenario, beta1, method) in first-seen order and summarise each group.
std::vector<SimulationSummary> aggregate(const std::vector<ReplicateResult>& results);

void write_replicates_csv(const std::vector<ReplicateResult>& results, std::ostream& out);
std::vector<ReplicateResult> read_replicates_csv(std::istream& in);
void write_summary_csv(const std::vector<SimulationSummary>& rows, std::ostream& out);

}  // namespace dblcox::sim
