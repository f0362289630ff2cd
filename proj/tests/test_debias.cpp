#include "doctest.h"

#include "dblcox/debias.hpp"
#include "dblcox/errors.hpp"
#include "dblcox/partial_likelihood.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace dblcox;

namespace {

// Standard normal tail by erfc, independent of the library's Boost path.
double upper_tail(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

double upper_quantile(double a) {
  return oracle::bisect([&](double x) { return upper_tail(x) - a; }, 0.0, 40.0);
}

DebiasedEstimate diag_estimate(Eigen::VectorXd b, Eigen::VectorXd theta_diag, int n) {
  DebiasedEstimate e;
  e.b_hat = std::move(b);
  e.theta_hat = theta_diag.asDiagonal();
  e.n_total = n;
  return e;
}

struct Fixture {
  StratifiedSurvivalDataset data = oracle::random_dataset(5, {60, 60, 60}, 6, 0.5);
  RiskSetIndex index = build_risk_index(data);
  LassoFit lasso = fit_lasso(data, index, 0.3 * lambda_max(data, index), Eigen::VectorXd::Zero(6));
};

}  // namespace

TEST_CASE("Wald statistic: b=0.3, Theta=4, N=100") {
  const auto e = diag_estimate(Eigen::Vector2d(0.3, 0.0), Eigen::Vector2d(4.0, 1.0), 100);
  const auto w = wald_test(e, Eigen::Vector2d(1.0, 0.0), 0.0, 0.05);
  CHECK(w.statistic == doctest::Approx(1.5).epsilon(1e-14));
  CHECK(w.p_value == doctest::Approx(2.0 * upper_tail(1.5)).epsilon(1e-12));
  CHECK(w.p_value == doctest::Approx(0.1336).epsilon(1e-3));
  CHECK_FALSE(w.reject);

  const auto at_null = wald_test(e, Eigen::Vector2d(1.0, 0.0), 0.3, 0.05);
  CHECK(at_null.statistic == 0.0);
  CHECK(at_null.p_value == doctest::Approx(1.0));

  const auto scaled = wald_test(e, Eigen::Vector2d(2.0, 0.0), 0.6, 0.05);
  const auto base = wald_test(e, Eigen::Vector2d(1.0, 0.0), 0.3, 0.05);
  CHECK(scaled.statistic == doctest::Approx(base.statistic));
  const auto s2 = wald_test(e, Eigen::Vector2d(2.0, 0.0), 0.0, 0.05);
  CHECK(s2.statistic == doctest::Approx(1.5).epsilon(1e-14));
}

TEST_CASE("Wald test rejects a degenerate loading") {
  const auto e = diag_estimate(Eigen::Vector2d(0.3, 0.0), Eigen::Vector2d(4.0, 0.0), 100);
  CHECK_THROWS_AS(wald_test(e, Eigen::Vector2d(0.0, 1.0), 0.0, 0.05), DegenerateVarianceError);
}

TEST_CASE("confidence interval: b=0.5, Theta=1, N=400") {
  const auto e = diag_estimate(Eigen::Vector2d(0.5, 0.0), Eigen::Vector2d(1.0, 1.0), 400);
  const auto ci = confidence_interval(e, Eigen::Vector2d(1.0, 0.0), 0.05);
  const double half = upper_quantile(0.025) / 20.0;
  CHECK(ci.lower == doctest::Approx(0.5 - half).epsilon(1e-10));
  CHECK(ci.upper == doctest::Approx(0.5 + half).epsilon(1e-10));
  CHECK(ci.lower == doctest::Approx(0.402).epsilon(1e-3));
  CHECK(ci.upper == doctest::Approx(0.598).epsilon(1e-3));
  CHECK(std::exp(ci.lower) < std::exp(0.5));
  CHECK(std::exp(ci.upper) > std::exp(0.5));

  const auto narrow = confidence_interval(e, Eigen::Vector2d(1.0, 0.0), 0.999);
  CHECK(narrow.upper - narrow.lower < 1e-3);
}

TEST_CASE("contrast identities") {
  Eigen::MatrixXd theta(3, 3);
  theta << 2.0, 0.3, 0.1, 0.2, 1.5, -0.2, 0.1, -0.3, 1.0;
  DebiasedEstimate e;
  e.b_hat = Eigen::Vector3d(0.4, -0.2, 0.1);
  e.theta_hat = theta;
  e.n_total = 250;

  ContrastSpec at_truth{"zero", Eigen::MatrixXd::Identity(3, 3), e.b_hat};
  const auto z = contrast_test(e, at_truth, 0.05);
  CHECK(z.statistic == doctest::Approx(0.0));
  CHECK(z.p_value == doctest::Approx(1.0));
  CHECK(z.df == 3);

  const Eigen::Vector3d c(0.5, -1.0, 2.0);
  ContrastSpec one{"one", c.transpose(), Eigen::VectorXd::Constant(1, 0.05)};
  const auto r = contrast_test(e, one, 0.05);
  const auto w = wald_test(e, c, 0.05, 0.05);
  CHECK(r.statistic == doctest::Approx(w.statistic * w.statistic).epsilon(1e-12));
  CHECK(std::abs(r.p_value - w.p_value) < 1e-10);
  CHECK(r.critical_value == doctest::Approx(upper_quantile(0.025) * upper_quantile(0.025)).epsilon(1e-9));
}

TEST_CASE("rank-deficient contrasts name the dependent rows") {
  Eigen::MatrixXd j(3, 4);
  j << 1, 0, 0, 0, 0, 1, 0, 0, 2, -3, 0, 0;
  ContrastSpec spec{"bad", j, Eigen::VectorXd::Zero(3)};
  try {
    validate_contrast(spec, 4);
    FAIL("expected rank failure");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("dependent rows: 3") != std::string::npos);
  }
  ContrastSpec wide{"wide", Eigen::MatrixXd::Identity(3, 5), Eigen::VectorXd::Zero(3)};
  CHECK_THROWS_AS(validate_contrast(wide, 4), ConfigError);
}

TEST_CASE("singular F is a degenerate-variance error") {
  const auto e = diag_estimate(Eigen::Vector3d(0.1, 0.2, 0.3), Eigen::Vector3d(1.0, 0.0, 1.0), 50);
  ContrastSpec spec{"s", Eigen::MatrixXd::Identity(3, 3), Eigen::VectorXd::Zero(3)};
  CHECK_THROWS_AS(contrast_test(e, spec, 0.05), DegenerateVarianceError);
}

TEST_CASE("six pairwise level differences on 94 coefficients") {
  // Five levels against a reference plus one difference between levels.
  const std::vector<std::pair<int, int>> pairs = {{10, -1}, {11, -1}, {12, -1}, {13, -1}, {14, -1}, {10, 15}};
  const auto spec = pairwise_contrast(94, pairs, "age");
  CHECK(spec.J.rows() == 6);
  CHECK(spec.J.cols() == 94);
  Eigen::VectorXd theta_diag = Eigen::VectorXd::LinSpaced(94, 0.5, 2.0);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(94);
  b[10] = 0.2;
  const auto e = diag_estimate(b, theta_diag, 1000);
  const auto r = contrast_test(e, spec, 0.05);
  CHECK(r.df == 6);
  CHECK(r.p_value >= 0.0);
  CHECK(r.p_value <= 1.0);
}

TEST_CASE("gamma >= 1 leaves the lasso estimate unchanged") {
  Fixture f;
  REQUIRE(f.lasso.converged);
  const auto fit = debias(f.data, f.index, f.lasso, 1.0);
  CHECK(fit.theta_hat.isZero(0.0));
  CHECK((fit.b_hat.array() == f.lasso.beta_hat.array()).all());
}

TEST_CASE("gamma = 0 equals the direct linear solve") {
  Fixture f;
  const auto fit = debias(f.data, f.index, f.lasso, 0.0);
  const Eigen::MatrixXd sig = oracle::sigma_hat(f.data, f.lasso.beta_hat);
  const Eigen::VectorXd g = oracle::score(f.data, f.lasso.beta_hat);
  const Eigen::VectorXd expected = f.lasso.beta_hat - sig.ldlt().solve(g);
  CHECK((fit.b_hat - expected).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("de-biasing identity is reproduced bit-for-bit") {
  Fixture f;
  const auto fit = debias(f.data, f.index, f.lasso, 0.05);
  const Eigen::VectorXd again = fit.beta_hat - fit.theta_hat * fit.score;
  CHECK((again.array() == fit.b_hat.array()).all());
  for (Eigen::Index j = 0; j < fit.se.size(); ++j) {
    if (fit.theta_hat(j, j) > 0.0) CHECK(fit.se[j] > 0.0);
    CHECK(fit.se[j] == doctest::Approx(std::sqrt(std::max(fit.theta_hat(j, j), 0.0) / fit.n_total)));
  }
}

TEST_CASE("zero score leaves beta unchanged") {
  Fixture f;
  const auto unpenalised = fit_lasso(f.data, f.index, 0.0, Eigen::VectorXd::Zero(6));
  const auto fit = debias(f.data, f.index, unpenalised, 0.1);
  CHECK(fit.score.lpNorm<Eigen::Infinity>() < 1e-7);
  CHECK((fit.b_hat - fit.beta_hat).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("rows feasible at gamma stay feasible for larger gamma") {
  Fixture f;
  const auto fit = debias(f.data, f.index, f.lasso, 0.02);
  for (double g2 : {0.05, 0.3}) {
    for (int j = 0; j < 6; ++j) {
      Eigen::VectorXd r = fit.sigma_hat * fit.theta_hat.row(j).transpose();
      r[j] -= 1.0;
      CHECK(r.lpNorm<Eigen::Infinity>() <= 0.02 + 1e-8);
      CHECK(r.lpNorm<Eigen::Infinity>() <= g2 + 1e-8);
    }
  }
}

TEST_CASE("active set matches the threshold rule") {
  Fixture f;
  const auto fit = debias(f.data, f.index, f.lasso, 0.05);
  const auto a = active_set(fit, 0.05);
  CHECK(a.threshold == doctest::Approx(upper_quantile(0.05 / 12.0)).epsilon(1e-9));
  for (int j = 0; j < 6; ++j) {
    const double stat = std::sqrt(fit.n_total) * std::abs(fit.b_hat[j]) / std::sqrt(fit.theta_hat(j, j));
    const bool in = std::find(a.indices.begin(), a.indices.end(), j) != a.indices.end();
    CHECK(in == (stat > a.threshold));
  }
  const auto t = thresholded(fit, a);
  for (int j = 0; j < 6; ++j) {
    const bool in = std::find(a.indices.begin(), a.indices.end(), j) != a.indices.end();
    CHECK(t[j] == (in ? fit.b_hat[j] : 0.0));
  }
  ActiveSet none;
  CHECK(thresholded(fit, none).isZero(0.0));
}

TEST_CASE("unconverged lasso fits are refused") {
  Fixture f;
  LassoFit bad = f.lasso;
  bad.converged = false;
  CHECK_THROWS_AS(debias(f.data, f.index, bad, 0.1), ConvergenceError);
}

TEST_CASE("MSPLE with one covariate matches the bisection root") {
  const auto d = oracle::random_dataset(17, {40, 30}, 1, 0.8);
  const auto idx = build_risk_index(d);
  const auto fit = mspl_estimate(d, idx);
  const double root = oracle::bisect(
      [&](double b) { return oracle::score(d, Eigen::VectorXd::Constant(1, b))[0]; }, -10.0, 10.0);
  CHECK(std::abs(fit.beta[0] - root) < 1e-8);
  CHECK(std::abs(oracle::score(d, fit.beta)[0]) < 1e-8);
  const double se = std::sqrt(1.0 / (oracle::hessian(d, fit.beta)(0, 0) * d.n_total()));
  CHECK(fit.se[0] == doctest::Approx(se).epsilon(1e-8));
}

TEST_CASE("MSPLE first-order condition and the oracle estimator") {
  const auto d = oracle::random_dataset(18, {50, 50}, 4, 0.5);
  const auto idx = build_risk_index(d);
  const auto ms = mspl_estimate(d, idx);
  CHECK(oracle::score(d, ms.beta).lpNorm<Eigen::Infinity>() < 1e-8);
  const auto full = oracle_estimate(d, idx, {0, 1, 2, 3});
  CHECK((full.beta - ms.beta).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((full.se - ms.se).lpNorm<Eigen::Infinity>() < 1e-12);
  const auto sub = oracle_estimate(d, idx, {2, 0});
  CHECK(sub.beta[1] == 0.0);
  CHECK(sub.beta[3] == 0.0);
  const std::vector<int> cols = {2, 0};
  const auto reduced = d.select_columns(cols);
  const Eigen::VectorXd g = oracle::score(reduced, Eigen::Vector2d(sub.beta[2], sub.beta[0]));
  CHECK(g.lpNorm<Eigen::Infinity>() < 1e-8);
  CHECK_THROWS_AS(oracle_estimate(d, idx, {}), ContractError);
}

TEST_CASE("gamma cross-validation: single point, errors and determinism") {
  const auto d = oracle::random_dataset(19, {40, 40, 40, 40}, 5, 0.5);
  const auto folds = assign_folds(d, FoldMode::ByStratum, 4, 3);
  GammaCvOptions opt;
  opt.lambda.n_lambda = 8;
  const auto one = select_gamma_cv(d, {0.07}, folds, opt);
  CHECK(one.gamma == 0.07);
  CHECK_THROWS_AS(select_gamma_cv(d, {}, folds, opt), ConfigError);
  CHECK_THROWS_AS(select_gamma_cv(d, {0.1, 1.5}, folds, opt), ConfigError);
  const auto within = assign_folds(d, FoldMode::WithinStratum, 4, 3);
  CHECK_THROWS_AS(select_gamma_cv(d, {0.0, 0.1}, within, opt), ConfigError);

  const std::vector<double> grid = {0.0, 0.01, 0.1, 0.5};
  const auto a = select_gamma_cv(d, grid, folds, opt);
  const auto b = select_gamma_cv(d, grid, folds, opt);
  CHECK(a.gamma == b.gamma);
  CHECK(a.cv == b.cv);
  CHECK(a.gamma == grid[a.index]);
  for (double v : a.cv) CHECK(v >= *std::min_element(a.cv.begin(), a.cv.end()));
}

TEST_CASE("gamma cross-validation loss follows the hard-threshold recipe") {
  const auto d = oracle::random_dataset(20, {30, 30, 30}, 3, 0.6);
  const auto folds = assign_folds(d, FoldMode::ByStratum, 3, 8);
  GammaCvOptions opt;
  opt.rule = LambdaRule::Freeze;
  opt.frozen_lambda = 0.02;
  const std::vector<double> grid = {0.05, 1.0};
  const auto res = select_gamma_cv(d, grid, folds, opt);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double expected = 0.0;
    for (int q = 0; q < 3; ++q) {
      const auto train = folds.training(d, q);
      const auto test = folds.testing(d, q);
      const auto ti = build_risk_index(train);
      const auto lasso = fit_lasso(train, ti, 0.02, Eigen::VectorXd::Zero(3));
      const auto fit = debias(train, ti, lasso, grid[g]);
      const auto bt = thresholded(fit, active_set(fit, 0.05));
      expected += test.n_total() * oracle::nll(test, bt);
    }
    CHECK(res.cv[g] == doctest::Approx(expected).epsilon(1e-10));
  }
}
