#include "doctest.h"

#include "dblcox/errors.hpp"
#include "dblcox/qp_solver.hpp"
#include "oracles.hpp"

#include <Eigen/QR>

#include <random>
#include <tuple>

using namespace dblcox;

namespace {

Eigen::MatrixXd random_pd(std::uint64_t seed, int p, int rank = -1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  const int r = rank < 0 ? p + 3 : rank;
  Eigen::MatrixXd a(r, p);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < p; ++j) a(i, j) = z(rng);
  }
  return a.transpose() * a / r;
}

double feasibility(const Eigen::MatrixXd& s, int j, double gamma, const Eigen::VectorXd& m) {
  Eigen::VectorXd r = s * m;
  r[j] -= 1.0;
  return r.lpNorm<Eigen::Infinity>() - gamma;
}

}  // namespace

TEST_CASE("gamma >= 1 returns zero") {
  const auto s = random_pd(1, 4);
  for (double g : {1.0, 2.5}) {
    const auto sol = solve_qp({s, 2, g});
    CHECK(sol.status == QpStatus::Optimal);
    CHECK(sol.m.isZero(0.0));
    CHECK(sol.objective == 0.0);
  }
}

TEST_CASE("gamma = 0 returns the column of the inverse") {
  const auto s = random_pd(2, 5);
  const Eigen::MatrixXd inv = s.inverse();
  for (int j = 0; j < 5; ++j) {
    const auto sol = solve_qp({s, j, 0.0});
    REQUIRE(sol.status == QpStatus::Optimal);
    CHECK((sol.m - inv.col(j)).lpNorm<Eigen::Infinity>() < 1e-10);
  }
}

TEST_CASE("diag(2,1), first row, gamma 0.5") {
  Eigen::MatrixXd s = Eigen::Vector2d(2.0, 1.0).asDiagonal();
  const auto sol = solve_qp({s, 0, 0.5});
  REQUIRE(sol.status == QpStatus::Optimal);
  CHECK(sol.m[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(std::abs(sol.m[1]) < 1e-14);
  CHECK(sol.objective == doctest::Approx(0.125).epsilon(1e-12));
}

TEST_CASE("identity gives (1 - gamma) e_j") {
  const Eigen::MatrixXd s = Eigen::MatrixXd::Identity(4, 4);
  for (double g : {0.0, 0.1, 0.5, 0.99}) {
    const auto est = solve_all_rows(s, g);
    CHECK((est.theta_hat - (1.0 - g) * Eigen::MatrixXd::Identity(4, 4)).lpNorm<Eigen::Infinity>() < 1e-12);
  }
  CHECK(solve_all_rows(s, 1.0).theta_hat.isZero(0.0));
}

TEST_CASE("random 3x3 rows match the projected-gradient oracle") {
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    const auto s = random_pd(seed, 3);
    const auto est = solve_all_rows(s, 0.1);
    for (int j = 0; j < 3; ++j) {
      const Eigen::VectorXd m = oracle::box_qp(s, j, 0.1);
      CHECK((est.theta_hat.row(j).transpose() - m).lpNorm<Eigen::Infinity>() < 1e-6);
    }
  }
}

TEST_CASE("larger random instances match the oracle objective across gamma") {
  for (std::uint64_t seed = 20; seed < 24; ++seed) {
    const auto s = random_pd(seed, 8);
    for (double g : {0.01, 0.05, 0.2, 0.6}) {
      for (int j : {0, 3, 7}) {
        const auto sol = solve_qp({s, j, g});
        REQUIRE(sol.status == QpStatus::Optimal);
        const Eigen::VectorXd m = oracle::box_qp(s, j, g);
        CHECK(sol.objective == doctest::Approx(m.dot(s * m)).epsilon(1e-7));
        CHECK(feasibility(s, j, g, sol.m) <= 1e-8);
      }
    }
  }
}

TEST_CASE("optimal objective is non-increasing in gamma") {
  const auto s = random_pd(30, 10);
  for (int j = 0; j < 10; j += 3) {
    double prev = std::numeric_limits<double>::infinity();
    for (double g = 0.0; g <= 1.0; g += 0.05) {
      const auto sol = solve_qp({s, j, g});
      REQUIRE(sol.status == QpStatus::Optimal);
      CHECK(sol.objective <= prev + 1e-12);
      prev = sol.objective;
    }
  }
}

TEST_CASE("stored certificates reproduce from scratch") {
  const auto s = random_pd(31, 12, 6);  // singular: exercises the ridge lift
  const QpSolver solver(s);
  CHECK(solver.lifted());
  for (double g : {0.02, 0.1, 0.4}) {
    for (int j = 0; j < 12; ++j) {
      const auto sol = solver.solve(j, g);
      const auto cert = certify(s, j, g, sol.m, sol.lower, sol.upper, sol.ridge);
      CHECK(std::abs(cert.feasibility_gap - sol.feasibility_gap) <= 1e-10);
      CHECK(std::abs(cert.kkt_residual - sol.kkt_residual) <= 1e-10);
      CHECK(feasibility(s, j, g, sol.m) == doctest::Approx(sol.feasibility_gap).epsilon(1e-10));
      if (sol.status == QpStatus::Optimal) {
        CHECK(sol.feasibility_gap <= 1e-8);
        CHECK(sol.kkt_residual <= 1e-6);
      }
      CHECK(sol.objective >= 0.0);
    }
  }
}

TEST_CASE("solutions follow coordinate permutations") {
  // Invariant under swapping coordinates 0 and 2.
  Eigen::Matrix3d s;
  s << 2.0, 0.5, 0.3, 0.5, 1.5, 0.5, 0.3, 0.5, 2.0;
  const auto a = solve_qp({s, 0, 0.15});
  const auto b = solve_qp({s, 2, 0.15});
  CHECK(a.m[0] == doctest::Approx(b.m[2]).epsilon(1e-12));
  CHECK(a.m[1] == doctest::Approx(b.m[1]).epsilon(1e-12));
  CHECK(a.m[2] == doctest::Approx(b.m[0]).epsilon(1e-12));
}

TEST_CASE("singular sigma at gamma 0 is infeasible and named") {
  const auto s = random_pd(40, 6, 3);
  const auto sol = solve_qp({s, 1, 0.0});
  CHECK(sol.status == QpStatus::Infeasible);
  try {
    solve_all_rows(s, 0.0);
    FAIL("expected infeasibility");
  } catch (const InfeasibleError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("gamma=0") != std::string::npos);
    CHECK(msg.find("rows") != std::string::npos);
  }
}

TEST_CASE("singular sigma is solved whenever the least-squares point is feasible") {
  // m = pinv(S) e_j attains the residual e_j - S pinv(S) e_j, so any gamma
  // above its sup-norm is feasible.
  for (auto [seed, p, r] : {std::tuple{40, 6, 3}, std::tuple{41, 20, 10}}) {
    const auto s = random_pd(static_cast<std::uint64_t>(seed), p, r);
    const Eigen::MatrixXd pinv = s.completeOrthogonalDecomposition().pseudoInverse();
    const QpSolver solver(s);
    for (int j = 0; j < p; ++j) {
      const Eigen::VectorXd e = Eigen::VectorXd::Unit(p, j);
      const double bound = (e - s * pinv * e).lpNorm<Eigen::Infinity>();
      const double gamma = bound + 0.02;
      if (gamma >= 1.0) continue;
      const auto sol = solver.solve(j, gamma);
      CHECK(sol.status == QpStatus::Optimal);
      CHECK(sol.objective <= (pinv * e).dot(s * pinv * e) + 1e-10);
    }
  }
}

TEST_CASE("parallel rows equal serial rows") {
  const auto s = random_pd(50, 15);
  const auto a = solve_all_rows(s, 0.05, 1);
  const auto b = solve_all_rows(s, 0.05, 4);
  CHECK((a.theta_hat.array() == b.theta_hat.array()).all());
}

TEST_CASE("input validation") {
  Eigen::MatrixXd s = Eigen::MatrixXd::Identity(3, 3);
  s(0, 1) = 0.5;
  CHECK_THROWS_AS(QpSolver{s}, ContractError);
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(3, 3);
  CHECK_THROWS_AS(solve_qp({id, 3, 0.1}), ContractError);
  CHECK_THROWS_AS(solve_qp({id, 0, -0.1}), ContractError);
}

TEST_CASE("zero sigma") {
  const Eigen::MatrixXd z = Eigen::MatrixXd::Zero(3, 3);
  CHECK(solve_qp({z, 0, 1.0}).status == QpStatus::Optimal);
  CHECK(solve_qp({z, 0, 0.5}).status == QpStatus::Infeasible);
}
