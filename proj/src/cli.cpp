#include "dblcox/cli.hpp"

#include "dblcox/csv.hpp"
#include "dblcox/errors.hpp"
#include "dblcox/pipeline.hpp"
#include "dblcox/report_io.hpp"
#include "dblcox/simulation.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <tuple>

namespace dblcox::cli {

namespace {

namespace fs = std::filesystem;

struct Options {
  // data
  std::string data;
  std::string stratum_col = "stratum";
  std::string time_col = "time";
  std::string status_col = "status";
  std::string covariates;
  // tuning
  std::string lambda_grid;
  int n_lambda = 50;
  double lambda_ratio = 0.05;
  int folds = 5;
  std::string fold_mode = "within-stratum";
  std::string lambda_rule = "refit";
  std::string gamma_grid;
  std::optional<double> gamma;
  int gamma_folds = 0;
  double alpha = 0.05;
  std::optional<double> threshold_alpha;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out = "out";
  std::string config;
  // simulate
  std::string scenario = "1";
  std::optional<int> replicates;
  std::string methods = "dblqp,msple,lasso,oracle";
  std::optional<double> beta1;
  std::string sweep_beta1;
  std::string gamma_sweep;
  // contrast / report
  std::string fit;
  std::string contrasts;
  std::vector<std::string> inputs;
};

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) {
    const auto a = item.find_first_not_of(" \t");
    const auto b = item.find_last_not_of(" \t");
    if (a != std::string::npos) out.push_back(item.substr(a, b - a + 1));
  }
  return out;
}

std::vector<double> parse_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  for (const auto& item : split(text, ',')) {
    const auto v = csv::parse_double(item);
    if (!v || !std::isfinite(*v)) throw ConfigError("malformed value '" + item + "' in " + what);
    out.push_back(*v);
  }
  if (out.empty()) throw ConfigError(what + " is empty");
  return out;
}

std::string config_token(const Json& v, const std::string& key) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number_unsigned()) return std::to_string(v.get<unsigned long long>());
  if (v.is_number_float()) return csv::format_double(v.get<double>());
  if (v.is_array()) {
    std::string s;
    for (const auto& e : v) s += (s.empty() ? "" : ",") + config_token(e, key);
    return s;
  }
  throw ConfigError("config key '" + key + "' has an unsupported value type");
}

/// Load the JSON config; inline scenario objects are returned separately.
std::vector<std::string> config_arguments(const std::string& path, const std::string& command,
                                          std::optional<Json>& inline_scenario) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config file must hold a JSON object");
  std::vector<std::string> tokens;
  for (const auto& [raw_key, value] : doc.items()) {
    std::string key = raw_key;
    std::replace(key.begin(), key.end(), '_', '-');
    if (key == "command") {
      if (!value.is_string() || value.get<std::string>() != command) {
        throw ConfigError("config command does not match '" + command + "'");
      }
      continue;
    }
    if (key == "config") throw ConfigError("config files cannot include other configs");
    if (key == "scenario" && value.is_object()) {
      inline_scenario = value;
      continue;
    }
    if (value.is_null()) continue;
    tokens.push_back("--" + key);
    tokens.push_back(config_token(value, key));
  }
  return tokens;
}

sim::SimulationScenario scenario_from_json(const Json& j, std::uint64_t default_seed) {
  try {
    sim::SimulationScenario s;
    s.name = j.value("name", std::string("custom"));
    s.stratum_sizes = j.at("stratum_sizes").get<std::vector<int>>();
    s.p = j.at("p").get<int>();
    s.beta1 = j.value("beta1", 1.0);
    s.nonzero_positions = j.value("nonzero_positions", std::vector<int>{});
    s.nonzero_values = j.value("nonzero_values", std::vector<double>{});
    s.rho = j.value("rho", 0.5);
    s.truncation = j.value("truncation", 3.0);
    s.baseline_hazards = j.at("baseline_hazards").get<std::vector<double>>();
    s.n_replicates = j.value("n_replicates", 100);
    s.seed = j.value("seed", default_seed);
    s.gamma_folds = j.value("gamma_folds", 0);
    if (j.contains("censoring")) {
      const Json& c = j.at("censoring");
      const std::string kind = c.value("kind", std::string("proportional"));
      if (kind == "proportional") {
        s.censoring.kind = sim::CensoringKind::ProportionalExponential;
      } else if (kind == "uniform") {
        s.censoring.kind = sim::CensoringKind::Uniform;
      } else {
        throw ConfigError("censoring kind must be 'proportional' or 'uniform'");
      }
      s.censoring.factor = c.value("factor", 0.2);
      s.censoring.lower = c.value("lower", 1.0);
      s.censoring.upper = c.value("upper", 30.0);
    }
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed inline scenario: ") + e.what());
  }
}

void check_alpha(double a, const std::string& what) {
  if (!(a > 0.0 && a < 1.0)) throw ConfigError(what + " must lie in (0,1)");
}

void check_exists(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " is required");
  if (!fs::exists(path)) throw ConfigError(what + " '" + path + "' does not exist");
}

PipelineConfig make_pipeline(const Options& o) {
  check_alpha(o.alpha, "alpha");
  PipelineConfig pc;
  pc.lambda.n_lambda = o.n_lambda;
  pc.lambda.ratio_min = o.lambda_ratio;
  if (!o.lambda_grid.empty()) pc.lambda.grid = parse_list(o.lambda_grid, "lambda grid");
  if (pc.lambda.n_lambda < 1) throw ConfigError("n-lambda must be >= 1");
  if (!(pc.lambda.ratio_min > 0.0 && pc.lambda.ratio_min <= 1.0)) {
    throw ConfigError("lambda-ratio must lie in (0,1]");
  }
  pc.lambda.folds = o.folds;
  pc.lambda.mode = parse_fold_mode(o.fold_mode);
  if (!o.gamma_grid.empty()) pc.gamma_grid = parse_list(o.gamma_grid, "gamma grid");
  pc.gamma = o.gamma;
  if (pc.gamma && !(*pc.gamma >= 0.0)) throw ConfigError("gamma must be nonnegative");
  pc.gamma_folds = o.gamma_folds;
  if (pc.gamma_folds < 0) throw ConfigError("gamma-folds must be >= 0");
  pc.threshold_alpha = o.threshold_alpha.value_or(o.alpha);
  check_alpha(pc.threshold_alpha, "threshold-alpha");
  if (o.lambda_rule == "refit") {
    pc.lambda_rule = LambdaRule::Refit;
  } else if (o.lambda_rule == "freeze") {
    pc.lambda_rule = LambdaRule::Freeze;
  } else {
    throw ConfigError("lambda-rule must be 'refit' or 'freeze'");
  }
  pc.seed = o.seed;
  if (o.threads < 1) throw ConfigError("threads must be >= 1");
  pc.parallelism = o.threads;
  return pc;
}

Json tuning_echo(const Options& o) {
  Json j;
  j["lambda_grid"] = o.lambda_grid;
  j["n_lambda"] = o.n_lambda;
  j["lambda_ratio"] = o.lambda_ratio;
  j["folds"] = o.folds;
  j["fold_mode"] = o.fold_mode;
  j["lambda_rule"] = o.lambda_rule;
  j["gamma_grid"] = o.gamma_grid;
  j["gamma"] = o.gamma ? Json(*o.gamma) : Json(nullptr);
  j["gamma_folds"] = o.gamma_folds;
  j["alpha"] = o.alpha;
  j["threshold_alpha"] = o.threshold_alpha ? Json(*o.threshold_alpha) : Json(nullptr);
  j["seed"] = o.seed;
  j["threads"] = o.threads;
  j["out"] = o.out;
  return j;
}

Json json_list(const std::vector<double>& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(std::isfinite(x) ? Json(x) : Json(nullptr));
  return a;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_fit(const Options& o, std::ostream& out) {
  check_exists(o.data, "data file");
  if (!o.contrasts.empty()) check_exists(o.contrasts, "contrast file");
  const PipelineConfig pc = make_pipeline(o);

  CsvSchema schema;
  schema.stratum_col = o.stratum_col;
  schema.time_col = o.time_col;
  schema.status_col = o.status_col;
  schema.covariates = split(o.covariates, ',');
  const auto data = load_csv(o.data, schema);
  const auto& names = data.covariate_names();
  std::vector<ContrastSpec> specs;
  if (!o.contrasts.empty()) {
    specs = load_contrasts(o.contrasts, names);
    for (const auto& s : specs) validate_contrast(s, data.p());
  }

  Json echo = tuning_echo(o);
  echo["data"] = o.data;
  echo["stratum_col"] = o.stratum_col;
  echo["time_col"] = o.time_col;
  echo["status_col"] = o.status_col;
  echo["covariates"] = names;
  echo["contrasts"] = o.contrasts;
  RunManifest manifest(o.out, "fit", echo, o.seed);
  manifest.begin();

  const auto index = build_risk_index(data);
  const PipelineResult res = fit_dblqp(data, index, pc);
  InferenceReport report = build_report(res.fit, names, o.alpha);
  report.warnings = res.warnings;
  for (const auto& s : specs) report.contrasts.push_back(contrast_test(report.estimate, s, o.alpha));

  manifest.set_timing("lambda", res.seconds_lambda);
  manifest.set_timing("gamma", res.seconds_gamma);
  manifest.set_timing("debias", res.seconds_debias);
  manifest.set_tuning("lambda", res.fit.lambda);
  manifest.set_tuning("gamma", res.fit.gamma);
  if (res.gamma_cv) {
    manifest.set_tuning("gamma_grid", json_list(res.gamma_cv->grid));
    manifest.set_tuning("gamma_cv", json_list(res.gamma_cv->cv));
  }
  for (const auto& w : res.warnings) manifest.add_warning(w);

  std::ostringstream csv_body;
  write_report_csv(report, csv_body);
  manifest.add_output("report.csv", csv_body.str());
  manifest.add_output("report.json", dump_json(report_to_json(report)));
  manifest.finish("ok");

  out << "fit: N=" << data.n_total() << " p=" << data.p() << " K=" << data.num_strata()
      << " lambda=" << csv::format_double(res.fit.lambda) << " gamma=" << csv::format_double(res.fit.gamma)
      << "\n";
  for (const auto& w : res.warnings) out << "warning: " << w << "\n";
  for (const auto& c : report.contrasts) {
    out << "contrast " << c.label << ": T=" << csv::format_double(c.statistic) << " df=" << c.df
        << " p=" << csv::format_double(c.p_value) << "\n";
  }
  out << "outputs written to " << o.out << "\n";
  return kSuccess;
}

int cmd_simulate(const Options& o, bool seed_given, const std::optional<Json>& inline_scenario,
                 std::ostream& out) {
  PipelineConfig pc = make_pipeline(o);
  pc.parallelism = 1;  // replicates run concurrently instead

  const std::uint64_t sseed = seed_given ? o.seed : 20240101;
  sim::SimulationScenario scenario =
      inline_scenario ? scenario_from_json(*inline_scenario, sseed) : sim::make_scenario(o.scenario, sseed);
  if (o.replicates) {
    if (*o.replicates < 0) throw ConfigError("replicates must be >= 0");
    scenario.n_replicates = *o.replicates;
  }
  std::vector<double> betas = {o.beta1.value_or(scenario.beta1)};
  if (!o.sweep_beta1.empty()) betas = sim::parse_sweep(o.sweep_beta1);
  std::vector<double> gammas;
  if (!o.gamma_sweep.empty()) {
    gammas = o.gamma_sweep == "default" ? default_gamma_grid() : parse_list(o.gamma_sweep, "gamma sweep");
  }
  const auto methods = sim::parse_methods(o.methods);

  Json echo = tuning_echo(o);
  echo["scenario"] = scenario.name;
  echo["seed"] = scenario.seed;
  echo["replicates"] = scenario.n_replicates;
  echo["methods"] = o.methods;
  echo["beta1"] = json_list(betas);
  echo["gamma_sweep"] = json_list(gammas);
  RunManifest manifest(o.out, "simulate", echo, scenario.seed);
  manifest.begin();

  sim::MonteCarloConfig mc;
  mc.pipeline = pc;
  mc.alpha = o.alpha;
  mc.parallelism = o.threads;

  std::vector<sim::ReplicateResult> rows;
  std::vector<sim::SimulationSummary> summaries;
  const auto t0 = std::chrono::steady_clock::now();
  for (double b : betas) {
    scenario.beta1 = b;
    const auto res = gammas.empty() ? sim::run_monte_carlo(scenario, methods, mc)
                                    : sim::run_gamma_sweep(scenario, gammas, mc);
    rows.insert(rows.end(), res.replicates.begin(), res.replicates.end());
    summaries.insert(summaries.end(), res.summaries.begin(), res.summaries.end());
  }
  manifest.set_timing("simulate", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  for (const auto& s : summaries) {
    if (s.unreliable) {
      manifest.add_warning("unreliable summary for " + s.method + " at beta1=" + csv::format_double(s.beta1) +
                           ": " + std::to_string(s.failures) + " failed replicates");
    }
  }

  std::ostringstream rep_body, sum_body;
  sim::write_replicates_csv(rows, rep_body);
  sim::write_summary_csv(summaries, sum_body);
  manifest.add_output("replicates.csv", rep_body.str());
  manifest.add_output("summary.csv", sum_body.str());
  manifest.add_output("summary.json", dump_json(summary_to_json(summaries)));
  manifest.finish("ok");

  out << "simulate: scenario " << scenario.name << ", " << scenario.n_replicates << " replicates\n";
  for (const auto& s : summaries) {
    out << "  " << s.method << " beta1=" << csv::format_double(s.beta1) << " bias=" << csv::format_double(s.bias)
        << " coverage=" << csv::format_double(s.coverage) << " failures=" << s.failures << "\n";
  }
  out << "outputs written to " << o.out << "\n";
  return kSuccess;
}

int cmd_contrast(const Options& o, std::ostream& out) {
  check_alpha(o.alpha, "alpha");
  check_exists(o.fit, "fit artifact");
  check_exists(o.contrasts, "contrast file");
  const FitArtifact fit = load_fit(o.fit);
  const auto specs = load_contrasts(o.contrasts, fit.covariates);
  for (const auto& s : specs) validate_contrast(s, static_cast<int>(fit.covariates.size()));

  Json echo;
  echo["fit"] = o.fit;
  echo["contrasts"] = o.contrasts;
  echo["alpha"] = o.alpha;
  echo["out"] = o.out;
  RunManifest manifest(o.out, "contrast", echo, o.seed);
  manifest.begin();

  std::vector<ContrastResult> results;
  for (const auto& s : specs) results.push_back(contrast_test(fit.estimate, s, o.alpha));

  std::ostringstream body;
  body << "label,statistic,df,p_value,critical_value,reject\n";
  Json doc = Json::array();
  for (const auto& r : results) {
    body << csv::join({csv::escape(r.label), csv::format_double(r.statistic), std::to_string(r.df),
                       csv::format_double(r.p_value), csv::format_double(r.critical_value), r.reject ? "1" : "0"})
         << '\n';
    doc.push_back(contrast_to_json(r));
    out << "contrast " << r.label << ": T=" << csv::format_double(r.statistic) << " df=" << r.df
        << " p=" << csv::format_double(r.p_value) << (r.reject ? " (reject)" : "") << "\n";
  }
  manifest.add_output("contrasts.csv", body.str());
  manifest.add_output("contrasts.json", dump_json(Json{{"alpha", o.alpha}, {"contrasts", doc}}));
  manifest.finish("ok");
  return kSuccess;
}

int cmd_report(const Options& o, std::ostream& out) {
  if (o.inputs.empty()) throw ConfigError("report needs at least one replicate CSV");
  std::vector<sim::ReplicateResult> rows;
  std::set<std::tuple<std::string, std::uint64_t, double, std::string, int>> seen;
  for (const auto& path : o.inputs) {
    check_exists(path, "replicate file");
    std::ifstream in(path);
    std::vector<sim::ReplicateResult> part;
    try {
      part = sim::read_replicates_csv(in);
    } catch (const Error& e) {
      throw SchemaError("'" + path + "': " + e.what());
    }
    for (auto& r : part) {
      if (!seen.insert({r.scenario, r.seed, r.beta1, r.method, r.replicate}).second) {
        throw ConfigError("duplicate replicate (scenario " + r.scenario + ", method " + r.method +
                          ", replicate " + std::to_string(r.replicate) + ") in '" + path + "'");
      }
      rows.push_back(std::move(r));
    }
  }
  Json echo;
  echo["inputs"] = o.inputs;
  echo["out"] = o.out;
  RunManifest manifest(o.out, "report", echo, 0);
  manifest.begin();
  const auto summaries = sim::aggregate(rows);
  std::ostringstream table, sum_body;
  write_long_table(summaries, table);
  sim::write_summary_csv(summaries, sum_body);
  manifest.add_output("table.csv", table.str());
  manifest.add_output("summary.csv", sum_body.str());
  manifest.add_output("summary.json", dump_json(summary_to_json(summaries)));
  manifest.finish("ok");
  out << "report: " << rows.size() << " replicate rows, " << summaries.size() << " summary rows\n";
  out << "outputs written to " << o.out << "\n";
  return kSuccess;
}

void add_tuning(CLI::App* app, Options& o) {
  app->add_option("--lambda-grid", o.lambda_grid, "Comma-separated lambda values (default: data-driven path)");
  app->add_option("--n-lambda", o.n_lambda, "Length of the data-driven lambda path");
  app->add_option("--lambda-ratio", o.lambda_ratio, "Smallest lambda as a fraction of lambda_max");
  app->add_option("--folds", o.folds, "Folds for lambda cross-validation");
  app->add_option("--fold-mode", o.fold_mode, "Lambda folds: within-stratum or by-stratum");
  app->add_option("--lambda-rule", o.lambda_rule, "Lambda inside gamma CV: refit or freeze");
  app->add_option("--gamma-grid", o.gamma_grid, "Comma-separated gamma values for cross-validation");
  app->add_option("--gamma", o.gamma, "Fixed gamma; skips gamma cross-validation");
  app->add_option("--gamma-folds", o.gamma_folds, "By-stratum folds for gamma (0: min(K, 10))");
  app->add_option("--alpha", o.alpha, "Significance level");
  app->add_option("--threshold-alpha", o.threshold_alpha, "Active-set level inside gamma CV (default: alpha)");
  app->add_option("--seed", o.seed, "Random seed");
  app->add_option("--threads", o.threads, "Worker threads");
}

void add_common(CLI::App* app, Options& o) {
  app->add_option("--out", o.out, "Output directory");
  app->add_option("--config", o.config, "JSON config; command-line flags take precedence");
}

void print_error(std::ostream& err, const std::string& kind, const std::string& message, int code) {
  err << Json{{"error", Json{{"kind", kind}, {"message", message}, {"exit_code", code}}}}.dump() << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Inference for high-dimensional stratified Cox models via de-biased lasso", "dblcox"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  auto* fit = app.add_subcommand("fit", "Fit lasso, select gamma, de-bias and report");
  fit->add_option("--data", o.data, "Input CSV");
  fit->add_option("--stratum-col", o.stratum_col, "Stratum column");
  fit->add_option("--time-col", o.time_col, "Time column");
  fit->add_option("--status-col", o.status_col, "Event indicator column (1 = event)");
  fit->add_option("--covariates", o.covariates, "Comma-separated covariate columns (default: all others)");
  fit->add_option("--contrasts", o.contrasts, "Optional contrast CSV tested after the fit");
  add_tuning(fit, o);
  add_common(fit, o);

  auto* simulate = app.add_subcommand("simulate", "Monte Carlo study on a preset or inline scenario");
  simulate->add_option("--scenario", o.scenario, "Preset: 1, 2, 3, 4 or figure1");
  simulate->add_option("--replicates", o.replicates, "Number of replicates");
  simulate->add_option("--methods", o.methods, "Comma-separated: dblqp, msple, lasso, oracle");
  simulate->add_option("--beta1", o.beta1, "Value of the first coefficient");
  simulate->add_option("--sweep-beta1", o.sweep_beta1, "start:stop:step grid for the first coefficient");
  simulate->add_option("--gamma-sweep", o.gamma_sweep, "Comma-separated fixed gammas, or 'default'");
  add_tuning(simulate, o);
  add_common(simulate, o);

  auto* contrast = app.add_subcommand("contrast", "Chi-square tests of linear contrasts on a saved fit");
  contrast->add_option("--fit", o.fit, "report.json from a previous fit");
  contrast->add_option("--contrasts", o.contrasts, "Contrast CSV (covariate columns, a0, optional block)");
  contrast->add_option("--alpha", o.alpha, "Significance level");
  add_common(contrast, o);

  auto* report = app.add_subcommand("report", "Merge replicate CSVs into figure-ready tables");
  report->add_option("inputs", o.inputs, "Replicate CSV files")->required();
  add_common(report, o);

  try {
    // Config values are spliced in ahead of the command-line flags so the
    // latter win under the take-last policy.
    std::size_t sub = args.size();
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (args[i] == "fit" || args[i] == "simulate" || args[i] == "contrast" || args[i] == "report") {
        sub = i;
        break;
      }
    }
    std::string config_path;
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
      if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
    }
    std::optional<Json> inline_scenario;
    std::vector<std::string> argv = args;
    if (!config_path.empty() && sub < args.size()) {
      const auto extra = config_arguments(config_path, args[sub], inline_scenario);
      argv.insert(argv.begin() + static_cast<std::ptrdiff_t>(sub) + 1, extra.begin(), extra.end());
    }
    std::vector<std::string> reversed(argv.rbegin(), argv.rend());
    app.parse(reversed);

    if (fit->parsed()) return cmd_fit(o, out);
    if (simulate->parsed()) return cmd_simulate(o, simulate->count("--seed") > 0, inline_scenario, out);
    if (contrast->parsed()) return cmd_contrast(o, out);
    return cmd_report(o, out);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kSuccess;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kSuccess;
  } catch (const CLI::ParseError& e) {
    print_error(err, "usage", e.what(), kUsageError);
    return kUsageError;
  } catch (const SchemaError& e) {
    print_error(err, e.kind(), e.what(), kUsageError);
    return kUsageError;
  } catch (const ValidationError& e) {
    print_error(err, e.kind(), e.what(), kUsageError);
    return kUsageError;
  } catch (const ConfigError& e) {
    print_error(err, e.kind(), e.what(), kUsageError);
    return kUsageError;
  } catch (const Error& e) {
    print_error(err, e.kind(), e.what(), kRuntimeFailure);
    return kRuntimeFailure;
  } catch (const std::exception& e) {
    print_error(err, "runtime", e.what(), kRuntimeFailure);
    return kRuntimeFailure;
  }
}

}  // namespace dblcox::cli
