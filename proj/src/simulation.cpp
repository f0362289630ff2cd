#include "dblcox/simulation.hpp"

#include "dblcox/csv.hpp"
#include "dblcox/errors.hpp"
#include "dblcox/parallel.hpp"
#include "dblcox/partial_likelihood.hpp"
#include "dblcox/seeding.hpp"
#include "dblcox/stats.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

namespace dblcox::sim {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Uniform on (0, 1].
double open_uniform(std::mt19937_64& rng) {
  return 1.0 - std::generate_canonical<double, 53>(rng);
}

Eigen::MatrixXd ar1_cholesky(int p, double rho) {
  Eigen::MatrixXd cov(p, p);
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) cov(i, j) = std::pow(rho, std::abs(i - j));
  }
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  return llt.matrixL();
}

std::string format_gamma_label(double g) { return "dblqp(gamma=" + csv::format_double(g) + ")"; }

}  // namespace

// ---------------------------------------------------------------------------
// Scenarios

Eigen::VectorXd SimulationScenario::beta0() const {
  Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
  b[0] = beta1;
  for (std::size_t i = 0; i < nonzero_positions.size(); ++i) b[nonzero_positions[i]] = nonzero_values[i];
  return b;
}

std::vector<int> SimulationScenario::oracle_support() const {
  std::vector<int> s = {0};
  s.insert(s.end(), nonzero_positions.begin(), nonzero_positions.end());
  std::sort(s.begin(), s.end());
  return s;
}

void SimulationScenario::validate() const {
  if (stratum_sizes.empty()) throw ConfigError("scenario needs at least one stratum");
  for (int n : stratum_sizes) {
    if (n < 1) throw ConfigError("stratum sizes must be >= 1");
  }
  if (p < 1) throw ConfigError("scenario needs p >= 1");
  if (!(rho > -1.0 && rho < 1.0)) throw ConfigError("rho must lie in (-1,1)");
  if (!(truncation > 0.0)) throw ConfigError("truncation bound must be positive");
  if (baseline_hazards.size() != stratum_sizes.size()) throw ConfigError("one baseline hazard per stratum");
  for (double h : baseline_hazards) {
    if (!(h > 0.0)) throw ConfigError("baseline hazards must be positive");
  }
  if (nonzero_positions.size() != nonzero_values.size()) throw ConfigError("nonzero positions/values mismatch");
  std::set<int> seen;
  for (int j : nonzero_positions) {
    if (j < 1 || j >= p || !seen.insert(j).second) throw ConfigError("invalid nonzero position");
  }
  if (n_replicates < 0) throw ConfigError("replicate count must be >= 0");
  if (censoring.kind == CensoringKind::ProportionalExponential && !(censoring.factor > 0.0)) {
    throw ConfigError("censoring factor must be positive");
  }
  if (censoring.kind == CensoringKind::Uniform && !(censoring.upper > censoring.lower && censoring.lower >= 0.0)) {
    throw ConfigError("uniform censoring needs 0 <= lower < upper");
  }
}

std::vector<std::string> scenario_names() { return {"1", "2", "3", "4", "figure1"}; }

SimulationScenario make_scenario(const std::string& name, std::uint64_t seed) {
  SimulationScenario s;
  s.name = name;
  s.seed = seed;
  s.rho = 0.5;
  s.truncation = 3.0;
  s.n_replicates = 100;
  std::mt19937_64 rng(derive_seed(seed, {0x5ce7}));

  int K = 0;
  int n_k = 0;
  double h_lo = 0.5, h_hi = 1.0;
  std::vector<double> extra = {1.0, 1.0, 0.3, 0.3};
  if (name == "1") {
    K = 10, n_k = 100, s.p = 10;
  } else if (name == "2") {
    K = 10, n_k = 100, s.p = 100;
  } else if (name == "3") {
    K = 5, n_k = 200, s.p = 100;
  } else if (name == "4") {
    K = 40, s.p = 100;
    s.gamma_folds = 10;
  } else if (name == "figure1") {
    K = 5, n_k = 200, s.p = 100;
    h_lo = 0.1, h_hi = 0.5;
    s.censoring.kind = CensoringKind::Uniform;
    s.censoring.lower = 1.0;
    s.censoring.upper = 30.0;
    // Four nonzeros in total; the first of them is beta_1.
    extra = {1.0, 0.3, 0.3};
  } else {
    throw ConfigError("unknown scenario '" + name + "' (expected 1, 2, 3, 4 or figure1)");
  }
  s.beta1 = 1.0;

  if (name == "4") {
    std::poisson_distribution<int> pois(40.0);
    for (int k = 0; k < K; ++k) {
      int n = 0;
      while (n < 1) n = pois(rng);
      s.stratum_sizes.push_back(n);
    }
  } else {
    s.stratum_sizes.assign(static_cast<std::size_t>(K), n_k);
  }
  std::uniform_real_distribution<double> hazard(h_lo, h_hi);
  for (int k = 0; k < K; ++k) s.baseline_hazards.push_back(hazard(rng));

  std::vector<int> candidates(static_cast<std::size_t>(s.p - 1));
  std::iota(candidates.begin(), candidates.end(), 1);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  for (std::size_t i = 0; i < extra.size(); ++i) {
    s.nonzero_positions.push_back(candidates[i]);
    s.nonzero_values.push_back(extra[i]);
  }
  s.validate();
  return s;
}

std::vector<SimulationScenario> scenario_presets(std::uint64_t seed) {
  std::vector<SimulationScenario> out;
  for (const auto& n : scenario_names()) out.push_back(make_scenario(n, seed));
  return out;
}

// ---------------------------------------------------------------------------
// Data generation

void survival_times(const Eigen::MatrixXd& covariates, const Eigen::VectorXd& u_event,
                    const Eigen::VectorXd& u_censor, double baseline_hazard,
                    const Eigen::VectorXd& beta, const CensoringModel& censoring,
                    Eigen::VectorXd& event_time, Eigen::VectorXd& censor_time) {
  const Eigen::Index n = covariates.rows();
  event_time.resize(n);
  censor_time.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double rate = baseline_hazard * std::exp(covariates.row(i).dot(beta));
    event_time[i] = -std::log(u_event[i]) / rate;
    if (censoring.kind == CensoringKind::ProportionalExponential) {
      censor_time[i] = -std::log(u_censor[i]) / (censoring.factor * rate);
    } else {
      censor_time[i] = censoring.lower + (censoring.upper - censoring.lower) * (1.0 - u_censor[i]);
    }
  }
}

GeneratedData generate_dataset(const SimulationScenario& scenario, std::uint64_t replicate,
                               bool diagnostics) {
  scenario.validate();
  std::mt19937_64 rng(derive_seed(scenario.seed, {0xda7a, replicate}));
  std::normal_distribution<double> normal(0.0, 1.0);
  const int p = scenario.p;
  const Eigen::MatrixXd chol = ar1_cholesky(p, scenario.rho);
  const Eigen::VectorXd beta = scenario.beta0();
  const double bound = scenario.truncation;

  std::vector<StratumBlock> strata;
  std::vector<Eigen::VectorXd> t_all, c_all;
  Eigen::VectorXd z(p);
  for (int k = 0; k < scenario.num_strata(); ++k) {
    const int n = scenario.stratum_sizes[static_cast<std::size_t>(k)];
    Eigen::MatrixXd x(n, p);
    Eigen::VectorXd ut(n), uc(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < p; ++j) z[j] = normal(rng);
      x.row(i) = (chol * z).cwiseMax(-bound).cwiseMin(bound).transpose();
      ut[i] = open_uniform(rng);
      uc[i] = open_uniform(rng);
    }
    Eigen::VectorXd t, c;
    survival_times(x, ut, uc, scenario.baseline_hazards[static_cast<std::size_t>(k)], beta,
                   scenario.censoring, t, c);
    StratumBlock b;
    b.id = "s" + std::to_string(k + 1);
    b.times = t.cwiseMin(c);
    b.events.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) b.events[static_cast<std::size_t>(i)] = t[i] <= c[i] ? 1 : 0;
    b.covariates = std::move(x);
    strata.push_back(std::move(b));
    if (diagnostics) {
      t_all.push_back(std::move(t));
      c_all.push_back(std::move(c));
    }
  }
  return GeneratedData{StratifiedSurvivalDataset(std::move(strata)), std::move(t_all), std::move(c_all)};
}

// ---------------------------------------------------------------------------
// Methods

const char* to_string(Method m) {
  switch (m) {
    case Method::DblQp: return "dblqp";
    case Method::Msple: return "msple";
    case Method::Lasso: return "lasso";
    case Method::Oracle: return "oracle";
  }
  return "unknown";
}

Method parse_method(const std::string& text) {
  if (text == "dblqp") return Method::DblQp;
  if (text == "msple") return Method::Msple;
  if (text == "lasso") return Method::Lasso;
  if (text == "oracle") return Method::Oracle;
  throw ConfigError("unknown method '" + text + "' (expected dblqp, msple, lasso, oracle)");
}

std::vector<Method> parse_methods(const std::string& csv_list) {
  std::vector<Method> out;
  std::stringstream ss(csv_list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse_method(item));
  }
  if (out.empty()) throw ConfigError("method list is empty");
  return out;
}

namespace {

ReplicateResult base_row(const SimulationScenario& s, int rep, const std::string& method) {
  ReplicateResult r;
  r.scenario = s.name;
  r.seed = s.seed;
  r.beta1 = s.beta1;
  r.replicate = rep;
  r.method = method;
  return r;
}

void set_interval(ReplicateResult& r, double estimate, double se, double z, double truth) {
  r.estimate = estimate;
  r.se = se;
  r.ci_lower = estimate - z * se;
  r.ci_upper = estimate + z * se;
  r.covered = (r.ci_lower <= truth && truth <= r.ci_upper) ? 1 : 0;
}

void mark_failed(ReplicateResult& r, const std::string& what) {
  r.status = what.empty() ? "failed" : what;
  // Keep the CSV single-line.
  std::replace(r.status.begin(), r.status.end(), '\n', ' ');
  r.estimate = r.se = r.ci_lower = r.ci_upper = kNaN;
  r.covered = -1;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

PipelineConfig replicate_pipeline(const SimulationScenario& s, const MonteCarloConfig& cfg, int rep) {
  PipelineConfig pc = cfg.pipeline;
  pc.seed = derive_seed(s.seed, {0xf17, static_cast<std::uint64_t>(rep)});
  if (pc.gamma_folds == 0) pc.gamma_folds = s.gamma_folds;
  return pc;
}

std::vector<ReplicateResult> run_replicate(const SimulationScenario& s, const std::vector<Method>& methods,
                                           const MonteCarloConfig& cfg, int rep) {
  const double z = stats::normal_upper_quantile(cfg.alpha / 2.0);
  const double truth = s.beta1;
  const GeneratedData gen = generate_dataset(s, static_cast<std::uint64_t>(rep));
  const auto& data = gen.data;
  const RiskSetIndex index = build_risk_index(data);
  const PipelineConfig pc = replicate_pipeline(s, cfg, rep);

  std::optional<LambdaSelection> lambda;
  std::string lambda_error;
  auto need_lambda = [&] {
    if (lambda || !lambda_error.empty()) return;
    try {
      lambda = select_lambda(data, index, pc.lambda, derive_seed(pc.seed, {0x1a}));
    } catch (const std::exception& e) {
      lambda_error = e.what();
    }
  };

  std::vector<ReplicateResult> rows;
  for (Method m : methods) {
    ReplicateResult r = base_row(s, rep, to_string(m));
    const auto t0 = std::chrono::steady_clock::now();
    try {
      switch (m) {
        case Method::DblQp: {
          need_lambda();
          if (!lambda) throw Error(lambda_error);
          const PipelineResult pr = fit_dblqp(data, index, pc, &*lambda);
          set_interval(r, pr.fit.b_hat[0], pr.fit.se[0], z, truth);
          r.lambda = pr.fit.lambda;
          r.gamma = pr.fit.gamma;
          if (cfg.on_dblqp) cfg.on_dblqp(rep, gen, pr.fit);
          break;
        }
        case Method::Lasso: {
          need_lambda();
          if (!lambda) throw Error(lambda_error);
          r.estimate = lambda->fit().beta_hat[0];
          r.se = r.ci_lower = r.ci_upper = kNaN;
          r.covered = -1;
          r.lambda = lambda->fit().lambda;
          r.gamma = kNaN;
          break;
        }
        case Method::Msple: {
          const MspleFit f = mspl_estimate(data, index);
          set_interval(r, f.beta[0], f.se[0], z, truth);
          r.lambda = r.gamma = kNaN;
          break;
        }
        case Method::Oracle: {
          const MspleFit f = oracle_estimate(data, index, s.oracle_support());
          set_interval(r, f.beta[0], f.se[0], z, truth);
          r.lambda = r.gamma = kNaN;
          break;
        }
      }
    } catch (const std::exception& e) {
      mark_failed(r, e.what());
    }
    r.seconds = seconds_since(t0);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace

SimulationSummary summarize(const std::vector<ReplicateResult>& results, double beta1) {
  if (results.empty()) throw ContractError("cannot summarise an empty result set");
  SimulationSummary s;
  s.scenario = results.front().scenario;
  s.method = results.front().method;
  s.beta1 = beta1;

  double sum = 0.0, se_sum = 0.0;
  int n = 0, n_se = 0, n_cov = 0, covered = 0;
  for (const auto& r : results) {
    if (!r.ok()) {
      ++s.failures;
      continue;
    }
    ++n;
    sum += r.estimate;
    if (std::isfinite(r.se)) {
      se_sum += r.se;
      ++n_se;
    }
    if (r.covered >= 0) {
      ++n_cov;
      covered += r.covered;
    }
  }
  s.replicates = n;
  const double mean = n > 0 ? sum / n : kNaN;
  s.bias = mean - beta1;
  s.coverage = n_cov > 0 ? static_cast<double>(covered) / n_cov : kNaN;
  s.model_se = n_se > 0 ? se_sum / n_se : kNaN;
  double ss = 0.0;
  for (const auto& r : results) {
    if (r.ok()) ss += (r.estimate - mean) * (r.estimate - mean);
  }
  s.empirical_se = n > 1 ? std::sqrt(ss / (n - 1)) : (n == 1 ? 0.0 : kNaN);
  s.unreliable = s.failures > 0.2 * static_cast<double>(results.size());
  return s;
}

std::vector<SimulationSummary> aggregate(const std::vector<ReplicateResult>& results) {
  std::vector<std::tuple<std::string, double, std::string>> keys;
  std::map<std::tuple<std::string, double, std::string>, std::vector<ReplicateResult>> groups;
  for (const auto& r : results) {
    auto key = std::make_tuple(r.scenario, r.beta1, r.method);
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) keys.push_back(key);
    it->second.push_back(r);
  }
  std::vector<SimulationSummary> out;
  for (const auto& k : keys) out.push_back(summarize(groups[k], std::get<1>(k)));
  return out;
}

MonteCarloResult run_monte_carlo(const SimulationScenario& scenario, const std::vector<Method>& methods,
                                 const MonteCarloConfig& config) {
  scenario.validate();
  if (methods.empty()) throw ConfigError("method list is empty");
  const int n_rep = scenario.n_replicates;
  std::vector<std::vector<ReplicateResult>> per_rep(static_cast<std::size_t>(n_rep));
  parallel_for(n_rep, config.parallelism, [&](int rep) {
    per_rep[static_cast<std::size_t>(rep)] = run_replicate(scenario, methods, config, rep);
  });

  MonteCarloResult out;
  for (auto& rows : per_rep) {
    for (auto& r : rows) out.replicates.push_back(std::move(r));
  }
  if (n_rep == 0) return out;
  for (Method m : methods) {
    std::vector<ReplicateResult> sel;
    for (const auto& r : out.replicates) {
      if (r.method == to_string(m)) sel.push_back(r);
    }
    out.summaries.push_back(summarize(sel, scenario.beta1));
  }
  return out;
}

MonteCarloResult run_gamma_sweep(const SimulationScenario& scenario, const std::vector<double>& gammas,
                                 const MonteCarloConfig& config) {
  scenario.validate();
  if (gammas.empty()) throw ConfigError("gamma grid is empty");
  for (double g : gammas) {
    if (!(g >= 0.0)) throw ConfigError("gamma values must be nonnegative");
  }
  const int n_rep = scenario.n_replicates;
  const double z = stats::normal_upper_quantile(config.alpha / 2.0);
  std::vector<std::vector<ReplicateResult>> per_rep(static_cast<std::size_t>(n_rep));

  parallel_for(n_rep, config.parallelism, [&](int rep) {
    auto& rows = per_rep[static_cast<std::size_t>(rep)];
    const GeneratedData gen = generate_dataset(scenario, static_cast<std::uint64_t>(rep));
    const RiskSetIndex index = build_risk_index(gen.data);
    const PipelineConfig pc = replicate_pipeline(scenario, config, rep);
    std::optional<QpSolver> solver;
    LassoFit lasso;
    std::string error;
    try {
      lasso = select_lambda(gen.data, index, pc.lambda, derive_seed(pc.seed, {0x1a})).fit();
      if (!lasso.converged) throw ConvergenceError(lasso.warning);
      solver.emplace(sigma_hat(gen.data, index, lasso.beta_hat), pc.qp);
    } catch (const std::exception& e) {
      error = e.what();
    }
    for (double g : gammas) {
      ReplicateResult r = base_row(scenario, rep, format_gamma_label(g));
      const auto t0 = std::chrono::steady_clock::now();
      try {
        if (!solver) throw Error(error);
        const DebiasedFit fit = debias(gen.data, index, lasso, *solver, g, pc.parallelism);
        set_interval(r, fit.b_hat[0], fit.se[0], z, scenario.beta1);
        r.lambda = lasso.lambda;
        r.gamma = g;
        if (config.on_dblqp) config.on_dblqp(rep, gen, fit);
      } catch (const std::exception& e) {
        mark_failed(r, e.what());
      }
      r.seconds = seconds_since(t0);
      rows.push_back(std::move(r));
    }
  });

  MonteCarloResult out;
  for (auto& rows : per_rep) {
    for (auto& r : rows) out.replicates.push_back(std::move(r));
  }
  if (n_rep == 0) return out;
  for (double g : gammas) {
    std::vector<ReplicateResult> sel;
    const std::string label = format_gamma_label(g);
    for (const auto& r : out.replicates) {
      if (r.method == label) sel.push_back(r);
    }
    out.summaries.push_back(summarize(sel, scenario.beta1));
  }
  return out;
}

std::vector<double> parse_sweep(const std::string& spec) {
  std::vector<double> parts;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ':')) {
    auto v = csv::parse_double(item);
    if (!v) throw ConfigError("malformed sweep '" + spec + "' (expected start:stop:step)");
    parts.push_back(*v);
  }
  if (parts.size() != 3 || !(parts[2] > 0.0) || parts[1] < parts[0]) {
    throw ConfigError("malformed sweep '" + spec + "' (expected start:stop:step with step > 0)");
  }
  const double start = parts[0], stop = parts[1], step = parts[2];
  const int count = static_cast<int>(std::floor((stop - start) / step + 1e-9)) + 1;
  std::vector<double> out;
  for (int i = 0; i < count; ++i) {
    // Round to kill accumulated binary noise (0.6000000000000001 -> 0.6).
    out.push_back(std::round((start + i * step) * 1e12) / 1e12);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

const std::vector<std::string> kReplicateHeader = {
    "scenario", "seed", "beta1", "replicate", "method", "estimate", "se",
    "ci_lower", "ci_upper", "covered", "lambda", "gamma", "status"};

}  // namespace

void write_replicates_csv(const std::vector<ReplicateResult>& results, std::ostream& out) {
  out << csv::join(kReplicateHeader) << '\n';
  for (const auto& r : results) {
    out << csv::join({csv::escape(r.scenario), std::to_string(r.seed), csv::format_double(r.beta1),
                      std::to_string(r.replicate), csv::escape(r.method), csv::format_double(r.estimate),
                      csv::format_double(r.se), csv::format_double(r.ci_lower),
                      csv::format_double(r.ci_upper), std::to_string(r.covered),
                      csv::format_double(r.lambda), csv::format_double(r.gamma), csv::escape(r.status)})
        << '\n';
  }
}

std::vector<ReplicateResult> read_replicates_csv(std::istream& in) {
  csv::Reader reader(in);
  auto header = reader.next();
  if (!header) throw SchemaError("replicate file is empty");
  if (header->fields != kReplicateHeader) throw SchemaError("replicate file has an unexpected header");

  auto number = [](const std::string& text, long line) {
    if (text == "nan") return kNaN;
    if (text == "inf") return std::numeric_limits<double>::infinity();
    if (text == "-inf") return -std::numeric_limits<double>::infinity();
    auto v = csv::parse_double(text);
    if (!v) throw ValidationError("malformed number '" + text + "'", line);
    return *v;
  };
  std::vector<ReplicateResult> out;
  while (auto rec = reader.next()) {
    const auto& f = rec->fields;
    if (f.size() != kReplicateHeader.size()) throw ValidationError("wrong field count", rec->line);
    ReplicateResult r;
    r.scenario = f[0];
    r.seed = std::stoull(f[1]);
    r.beta1 = number(f[2], rec->line);
    r.replicate = std::stoi(f[3]);
    r.method = f[4];
    r.estimate = number(f[5], rec->line);
    r.se = number(f[6], rec->line);
    r.ci_lower = number(f[7], rec->line);
    r.ci_upper = number(f[8], rec->line);
    r.covered = std::stoi(f[9]);
    r.lambda = number(f[10], rec->line);
    r.gamma = number(f[11], rec->line);
    r.status = f[12];
    out.push_back(std::move(r));
  }
  return out;
}

void write_summary_csv(const std::vector<SimulationSummary>& rows, std::ostream& out) {
  out << "scenario,beta1,method,replicates,failures,bias,coverage,model_se,empirical_se,unreliable\n";
  for (const auto& s : rows) {
    out << csv::join({csv::escape(s.scenario), csv::format_double(s.beta1), csv::escape(s.method),
                      std::to_string(s.replicates), std::to_string(s.failures), csv::format_double(s.bias),
                      csv::format_double(s.coverage), csv::format_double(s.model_se),
                      csv::format_double(s.empirical_se), s.unreliable ? "1" : "0"})
        << '\n';
  }
}

}  // namespace dblcox::sim
