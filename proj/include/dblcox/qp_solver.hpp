#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

namespace dblcox {

struct QpOptions {
  double feasibility_tol = 1e-8;
  double kkt_tol = 1e-6;
  int max_iter = 0;  // 0 selects 20 * (2p + 10)
};

/// Row problem: min_m m' S m  subject to  ||S m - e_j||_inf <= gamma.  `j` is 0-based.
struct QpProblem {
  Eigen::MatrixXd sigma;
  int j = 0;
  double gamma = 0.0;
};

enum class QpStatus { Optimal, Infeasible, MaxIter };

const char* to_string(QpStatus status);

/**
 * Solution of one row problem together with its optimality certificate.
 *
 * Multipliers refer to the constraints (S m)_i - e_ji + gamma >= 0 (lower)
 * and -(S m)_i + e_ji + gamma >= 0 (upper) for the objective
 * (1/2) m' (S + ridge I) m; stationarity reads (S + ridge I) m = S (lower - upper).
 * For gamma = 0 the constraints are equalities and `lower` holds the
 * (unsigned) equality multipliers.
 */
struct QpSolution {
  Eigen::VectorXd m;
  double objective = 0.0;        // m' S m
  double feasibility_gap = 0.0;  // ||S m - e_j||_inf - gamma
  double kkt_residual = 0.0;
  QpStatus status = QpStatus::Optimal;
  int iterations = 0;
  double ridge = 0.0;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  std::string message;
};

struct QpCertificate {
  double feasibility_gap = 0.0;
  double kkt_residual = 0.0;
};

/// Recompute the feasibility gap and KKT residual of a candidate solution.
QpCertificate certify(const Eigen::MatrixXd& sigma, int j, double gamma, const Eigen::VectorXd& m,
                      const Eigen::VectorXd& lower, const Eigen::VectorXd& upper, double ridge);

/**
 * Goldfarb-Idnani dual active-set solver for the row problems of one matrix.
 *
 * The Cholesky factor of the objective is computed once and shared by every
 * (j, gamma) solve. When S is numerically singular the objective (never the
 * constraints) is lifted to S + eps I with eps = 1e-9 trace(S) / p.
 * `solve` is const and reentrant.
 */
class QpSolver {
 public:
  explicit QpSolver(Eigen::MatrixXd sigma, QpOptions options = {});

  QpSolution solve(int j, double gamma) const;

  int dim() const { return static_cast<int>(sigma_.rows()); }
  double ridge() const { return ridge_; }
  bool lifted() const { return ridge_ > 0.0; }
  const Eigen::MatrixXd& sigma() const { return sigma_; }

 private:
  QpSolution solve_inequality(int j, double gamma) const;
  QpSolution solve_equality(int j) const;
  void finish(QpSolution& sol, int j, double gamma) const;

  Eigen::MatrixXd sigma_;
  QpOptions options_;
  double ridge_ = 0.0;
  bool zero_ = false;
  Eigen::MatrixXd j0_;  // L^{-T} where S + ridge I = L L'
};

QpSolution solve_qp(const QpProblem& problem, const QpOptions& options = {});

/**
 * Rows m^(1..p) of the precision estimate together with their certificates.
 * Row j of `theta_hat` is the solution of the row-j problem.
 */
struct PrecisionEstimate {
  Eigen::MatrixXd theta_hat;
  double gamma = 0.0;
  Eigen::VectorXd feasibility_gap;
  Eigen::VectorXd kkt_residual;
  std::vector<QpStatus> status;
  double ridge = 0.0;

  bool ok() const;
  std::vector<int> failed_rows() const;
};

/// Solve all p rows (optionally across `parallelism` threads). Never throws on
/// infeasible rows; inspect `failed_rows()`.
PrecisionEstimate solve_all_rows_unchecked(const QpSolver& solver, double gamma, int parallelism = 1);

/// As above but throws InfeasibleError naming the failing rows.
PrecisionEstimate solve_all_rows(const Eigen::MatrixXd& sigma, double gamma, int parallelism = 1,
                                 const QpOptions& options = {});
PrecisionEstimate solve_all_rows(const QpSolver& solver, double gamma, int parallelism = 1);

}  // namespace dblcox
