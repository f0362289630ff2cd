#include "doctest.h"

#include "dblcox/errors.hpp"
#include "dblcox/partial_likelihood.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace dblcox;

namespace {

// K=1, Y=(1,2), delta=(1,1), X=(1,0).
StratifiedSurvivalDataset two_subjects() {
  StratumBlock b;
  b.id = "s";
  b.times = Eigen::Vector2d(1.0, 2.0);
  b.events = {1, 1};
  b.covariates = Eigen::MatrixXd(2, 1);
  b.covariates << 1.0, 0.0;
  return StratifiedSurvivalDataset({b});
}

double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).lpNorm<Eigen::Infinity>() / std::max(1.0, b.lpNorm<Eigen::Infinity>());
}

}  // namespace

TEST_CASE("hand-evaluated two-subject example") {
  const auto d = two_subjects();
  const auto idx = build_risk_index(d);
  const Eigen::VectorXd b0 = Eigen::VectorXd::Zero(1);
  const auto bundle = evaluate(d, idx, b0, {.hessian = true, .sigma_hat = true});
  CHECK(bundle.value == doctest::Approx(-std::log(2.0) / 2.0).epsilon(1e-14));
  CHECK(bundle.gradient[0] == doctest::Approx(-0.25).epsilon(1e-14));
  CHECK((*bundle.hessian)(0, 0) == doctest::Approx(0.125).epsilon(1e-14));
  CHECK((*bundle.sigma_hat)(0, 0) == doctest::Approx(0.125).epsilon(1e-14));

  const auto base = breslow_baseline(d, idx, b0);
  REQUIRE(base.strata.size() == 1);
  const auto& h = base.strata[0];
  REQUIRE(h.jump_times.size() == 2);
  CHECK(h.jump_times[0] == 1.0);
  CHECK(h.cumulative[0] == doctest::Approx(0.5));
  CHECK(h.cumulative[1] == doctest::Approx(1.5));
  CHECK(h.at(0.5) == 0.0);
  CHECK(h.at(1.5) == doctest::Approx(0.5));
  CHECK(h.at(2.0) == doctest::Approx(1.5));
}

TEST_CASE("no events gives zero value, score, hessian and sigma") {
  auto d0 = oracle::random_dataset(1, {6, 4}, 3);
  std::vector<StratumBlock> strata = d0.strata();
  for (auto& s : strata) std::fill(s.events.begin(), s.events.end(), 0);
  const StratifiedSurvivalDataset d(strata);
  const auto idx = build_risk_index(d);
  const Eigen::VectorXd b = Eigen::VectorXd::Constant(3, 0.7);
  const auto bundle = evaluate(d, idx, b, {.hessian = true, .sigma_hat = true});
  CHECK(bundle.value == 0.0);
  CHECK(bundle.gradient.isZero(0.0));
  CHECK(bundle.hessian->isZero(0.0));
  CHECK(bundle.sigma_hat->isZero(0.0));
  const auto base = breslow_baseline(d, idx, b);
  for (const auto& h : base.strata) CHECK(h.at(1e9) == 0.0);
}

TEST_CASE("value at zero matches risk-set counting") {
  const auto d = oracle::random_dataset(21, {9, 14, 5}, 2);
  double expected = 0.0;
  for (const auto& s : d.strata()) {
    for (int i = 0; i < s.size(); ++i) {
      if (!s.events[static_cast<std::size_t>(i)]) continue;
      int at_risk = 0;
      for (int j = 0; j < s.size(); ++j) at_risk += s.times[j] >= s.times[i];
      expected += std::log(static_cast<double>(s.size()) / at_risk);
    }
  }
  expected = -expected / d.n_total();
  const auto idx = build_risk_index(d);
  CHECK(neg_log_partial_likelihood(d, idx, Eigen::VectorXd::Zero(2)) == doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("agrees with the double-loop definitions, with ties") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto d0 = oracle::random_dataset(seed, {12, 8, 15}, 4);
    std::vector<StratumBlock> strata = d0.strata();
    // Round times to create ties.
    for (auto& s : strata) s.times = (s.times.array() * 4.0).ceil() / 4.0;
    const StratifiedSurvivalDataset d(strata);
    const auto idx = build_risk_index(d);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 0.6);
    Eigen::VectorXd b(4);
    for (int j = 0; j < 4; ++j) b[j] = z(rng);
    const auto bundle = evaluate(d, idx, b, {.hessian = true, .sigma_hat = true});
    CHECK(bundle.value == doctest::Approx(oracle::nll(d, b)).epsilon(1e-12));
    CHECK(rel_err(bundle.gradient, oracle::score(d, b)) < 1e-12);
    CHECK(rel_err(*bundle.hessian, oracle::hessian(d, b)) < 1e-12);
    CHECK(rel_err(*bundle.sigma_hat, oracle::sigma_hat(d, b)) < 1e-12);
  }
}

TEST_CASE("score and hessian match finite differences on 20 random instances") {
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    const auto d = oracle::random_dataset(seed, {10, 15, 7}, 5);
    const auto idx = build_risk_index(d);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 0.5);
    Eigen::VectorXd b(5);
    for (int j = 0; j < 5; ++j) b[j] = z(rng);
    const auto g = score(d, idx, b);
    const auto fd_g = oracle::fd_gradient([&](const Eigen::VectorXd& x) { return oracle::nll(d, x); }, b);
    CHECK((g - fd_g).norm() / std::max(fd_g.norm(), 1e-12) < 1e-6);
    const auto h = hessian(d, idx, b);
    const auto fd_h = oracle::fd_jacobian([&](const Eigen::VectorXd& x) { return oracle::score(d, x); }, b);
    CHECK((h - fd_h).norm() / std::max(fd_h.norm(), 1e-12) < 1e-5);
  }
}

TEST_CASE("convex along segments and PSD curvature") {
  const auto d = oracle::random_dataset(77, {20, 20}, 4);
  const auto idx = build_risk_index(d);
  std::mt19937_64 rng(77);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd b1(4), b2(4), v(4);
    for (int j = 0; j < 4; ++j) b1[j] = z(rng), b2[j] = z(rng), v[j] = z(rng);
    const double t = u(rng);
    const double lhs = neg_log_partial_likelihood(d, idx, t * b1 + (1 - t) * b2);
    const double rhs = t * neg_log_partial_likelihood(d, idx, b1) + (1 - t) * neg_log_partial_likelihood(d, idx, b2);
    CHECK(lhs <= rhs + 1e-10);
    const auto bundle = evaluate(d, idx, b1, {.hessian = true, .sigma_hat = true});
    CHECK(v.dot(*bundle.hessian * v) >= -1e-10);
    CHECK(v.dot(*bundle.sigma_hat * v) >= -1e-10);
    CHECK((*bundle.hessian - bundle.hessian->transpose()).lpNorm<Eigen::Infinity>() <= 1e-12);
    CHECK((*bundle.sigma_hat - bundle.sigma_hat->transpose()).lpNorm<Eigen::Infinity>() <= 1e-12);
  }
}

TEST_CASE("shifting covariates within a stratum changes nothing") {
  const auto d = oracle::random_dataset(8, {12, 9}, 3);
  std::vector<StratumBlock> strata = d.strata();
  strata[1].covariates.rowwise() += Eigen::RowVector3d(5.0, -2.0, 0.25);
  const StratifiedSurvivalDataset shifted(strata);
  const Eigen::Vector3d b(0.3, -0.4, 0.8);
  const auto a = evaluate(d, build_risk_index(d), b, {.hessian = true, .sigma_hat = true});
  const auto s = evaluate(shifted, build_risk_index(shifted), b, {.hessian = true, .sigma_hat = true});
  CHECK(s.value == doctest::Approx(a.value).epsilon(1e-12));
  CHECK((s.gradient - a.gradient).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((*s.hessian - *a.hessian).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((*s.sigma_hat - *a.sigma_hat).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("large linear predictors stay finite") {
  const auto d = oracle::random_dataset(9, {30}, 2);
  const auto idx = build_risk_index(d);
  const Eigen::Vector2d b(400.0, -350.0);
  const auto bundle = evaluate(d, idx, b, {.hessian = true, .sigma_hat = true});
  CHECK(std::isfinite(bundle.value));
  CHECK(bundle.gradient.allFinite());
  CHECK(bundle.hessian->allFinite());
}

TEST_CASE("weighted averages lie within the covariate range") {
  const auto d = oracle::random_dataset(10, {25}, 2);
  const auto idx = build_risk_index(d);
  const auto avg = weighted_averages(d, idx, Eigen::Vector2d(0.5, -1.0));
  const auto& s = avg.strata[0];
  const auto& x = d.stratum(0).covariates;
  for (Eigen::Index e = 0; e < s.eta.rows(); ++e) {
    CHECK(s.mu0[e] > 0.0);
    for (int j = 0; j < 2; ++j) {
      CHECK(s.eta(e, j) <= x.col(j).maxCoeff() + 1e-12);
      CHECK(s.eta(e, j) >= x.col(j).minCoeff() - 1e-12);
    }
  }
}

TEST_CASE("Breslow baselines decouple across strata and are nondecreasing") {
  const auto d = oracle::random_dataset(12, {15, 10}, 2);
  std::vector<StratumBlock> strata = d.strata();
  strata[0].covariates *= 3.0;
  const StratifiedSurvivalDataset scaled(strata);
  const Eigen::Vector2d b(0.4, 0.2);
  const auto a = breslow_baseline(d, build_risk_index(d), b);
  const auto s = breslow_baseline(scaled, build_risk_index(scaled), b);
  CHECK(a.strata[1].cumulative == s.strata[1].cumulative);
  for (const auto& h : a.strata) {
    for (std::size_t i = 1; i < h.cumulative.size(); ++i) CHECK(h.cumulative[i] >= h.cumulative[i - 1]);
  }
}

TEST_CASE("hessian block equals the sub-matrix of the full hessian") {
  const auto d = oracle::random_dataset(13, {20, 10}, 5);
  const auto idx = build_risk_index(d);
  const Eigen::VectorXd b = Eigen::VectorXd::LinSpaced(5, -0.5, 0.5);
  const Eigen::MatrixXd h = hessian(d, idx, b);
  const std::vector<int> cols = {4, 1, 2};
  const Eigen::MatrixXd blk = hessian_block(d, idx, b, cols);
  for (int a = 0; a < 3; ++a) {
    for (int c = 0; c < 3; ++c) CHECK(blk(a, c) == doctest::Approx(h(cols[a], cols[c])).epsilon(1e-12));
  }
}

TEST_CASE("dimension mismatch is a contract error") {
  const auto d = oracle::random_dataset(14, {5}, 3);
  const auto idx = build_risk_index(d);
  CHECK_THROWS_AS(neg_log_partial_likelihood(d, idx, Eigen::VectorXd::Zero(2)), ContractError);
}
