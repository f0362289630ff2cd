#include "dblcox/qp_solver.hpp"

#include "dblcox/csv.hpp"
#include "dblcox/errors.hpp"
#include "dblcox/parallel.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>

namespace dblcox {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// A normal whose component outside the active span is below this fraction of
// its length (in the transformed space) counts as linearly dependent.
constexpr double kDependentTol = 1e-10;

/**
 * Factor state of the Goldfarb-Idnani method: J = L^{-T} Q and the upper
 * triangular R with the first iq columns of Q'L^{-1}N_active = [R; 0].
 */
struct GiState {
  Eigen::MatrixXd J;
  Eigen::MatrixXd R;
  Eigen::VectorXd u;   // multipliers of active constraints; u[iq] is the pending one
  std::vector<int> A;  // active constraint ids; equality ids are negative
  int iq = 0;
};

// True when the transformed normal d has no component outside the first iq columns.
bool dependent(const Eigen::VectorXd& d, int iq) {
  const auto n = d.size();
  return d.tail(n - iq).norm() <= kDependentTol * d.norm();
}

// Append the constraint whose transformed normal is d; false if it is
// linearly dependent on the active set.
bool add_constraint(GiState& s, Eigen::VectorXd& d) {
  const int n = static_cast<int>(d.size());
  if (dependent(d, s.iq)) return false;
  for (int j = n - 1; j >= s.iq + 1; --j) {
    double cc = d[j - 1];
    double ss = d[j];
    const double h = std::hypot(cc, ss);
    if (h == 0.0) continue;
    d[j] = 0.0;
    ss /= h;
    cc /= h;
    if (cc < 0.0) {
      cc = -cc;
      ss = -ss;
      d[j - 1] = -h;
    } else {
      d[j - 1] = h;
    }
    const double xny = ss / (1.0 + cc);
    for (int k = 0; k < n; ++k) {
      const double t1 = s.J(k, j - 1);
      const double t2 = s.J(k, j);
      s.J(k, j - 1) = t1 * cc + t2 * ss;
      s.J(k, j) = xny * (t1 + s.J(k, j - 1)) - t2;
    }
  }
  ++s.iq;
  for (int i = 0; i < s.iq; ++i) s.R(i, s.iq - 1) = d[i];
  return true;
}

void delete_constraint(GiState& s, int n_eq, int id) {
  const int n = static_cast<int>(s.J.rows());
  int qq = -1;
  for (int i = n_eq; i < s.iq; ++i) {
    if (s.A[static_cast<std::size_t>(i)] == id) {
      qq = i;
      break;
    }
  }
  if (qq < 0) return;
  for (int i = qq; i < s.iq - 1; ++i) {
    s.A[static_cast<std::size_t>(i)] = s.A[static_cast<std::size_t>(i + 1)];
    s.u[i] = s.u[i + 1];
    s.R.col(i) = s.R.col(i + 1);
  }
  s.A[static_cast<std::size_t>(s.iq - 1)] = s.A[static_cast<std::size_t>(s.iq)];
  s.u[s.iq - 1] = s.u[s.iq];
  s.A[static_cast<std::size_t>(s.iq)] = 0;
  s.u[s.iq] = 0.0;
  for (int j = 0; j < s.iq; ++j) s.R(j, s.iq - 1) = 0.0;
  --s.iq;
  if (s.iq == 0) return;

  for (int j = qq; j < s.iq; ++j) {
    double cc = s.R(j, j);
    double ss = s.R(j + 1, j);
    const double h = std::hypot(cc, ss);
    if (h == 0.0) continue;
    cc /= h;
    ss /= h;
    s.R(j + 1, j) = 0.0;
    if (cc < 0.0) {
      s.R(j, j) = -h;
      cc = -cc;
      ss = -ss;
    } else {
      s.R(j, j) = h;
    }
    const double xny = ss / (1.0 + cc);
    for (int k = j + 1; k < s.iq; ++k) {
      const double t1 = s.R(j, k);
      const double t2 = s.R(j + 1, k);
      s.R(j, k) = t1 * cc + t2 * ss;
      s.R(j + 1, k) = xny * (t1 + s.R(j, k)) - t2;
    }
    for (int k = 0; k < n; ++k) {
      const double t1 = s.J(k, j);
      const double t2 = s.J(k, j + 1);
      s.J(k, j) = t1 * cc + t2 * ss;
      s.J(k, j + 1) = xny * (s.J(k, j) + t1) - t2;
    }
  }
}

// r = R^{-1} d over the leading iq entries.
void solve_r(const GiState& s, const Eigen::VectorXd& d, Eigen::VectorXd& r) {
  for (int i = s.iq - 1; i >= 0; --i) {
    double sum = 0.0;
    for (int j = i + 1; j < s.iq; ++j) sum += s.R(i, j) * r[j];
    r[i] = (d[i] - sum) / s.R(i, i);
  }
}

}  // namespace

const char* to_string(QpStatus status) {
  switch (status) {
    case QpStatus::Optimal: return "optimal";
    case QpStatus::Infeasible: return "infeasible";
    case QpStatus::MaxIter: return "max_iter";
  }
  return "unknown";
}

QpCertificate certify(const Eigen::MatrixXd& sigma, int j, double gamma, const Eigen::VectorXd& m,
                      const Eigen::VectorXd& lower, const Eigen::VectorXd& upper, double ridge) {
  const Eigen::Index p = sigma.rows();
  Eigen::VectorXd resid = sigma * m;
  resid[j] -= 1.0;
  QpCertificate c;
  c.feasibility_gap = resid.lpNorm<Eigen::Infinity>() - gamma;

  const Eigen::VectorXd station = sigma * m + ridge * m - sigma * (lower - upper);
  double kkt = station.lpNorm<Eigen::Infinity>();
  kkt = std::max(kkt, std::max(0.0, c.feasibility_gap));
  if (gamma > 0.0) {
    for (Eigen::Index i = 0; i < p; ++i) {
      const double slack_lo = resid[i] + gamma;
      const double slack_hi = gamma - resid[i];
      kkt = std::max({kkt, -lower[i], -upper[i], std::abs(lower[i] * slack_lo),
                      std::abs(upper[i] * slack_hi)});
    }
  }
  c.kkt_residual = kkt;
  return c;
}

QpSolver::QpSolver(Eigen::MatrixXd sigma, QpOptions options)
    : sigma_(std::move(sigma)), options_(options) {
  const Eigen::Index p = sigma_.rows();
  if (p == 0 || sigma_.cols() != p) throw ContractError("sigma must be a nonempty square matrix");
  if (!sigma_.allFinite()) throw ContractError("sigma must be finite");
  const double asym = (sigma_ - sigma_.transpose()).lpNorm<Eigen::Infinity>();
  if (asym > 1e-12 * std::max(1.0, sigma_.lpNorm<Eigen::Infinity>())) {
    throw ContractError("sigma must be symmetric");
  }
  const double trace = sigma_.trace();
  if (!(trace > 0.0)) {
    zero_ = true;
    return;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sigma_, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (lo <= 1e-10 * hi) ridge_ = 1e-9 * trace / static_cast<double>(p);

  Eigen::MatrixXd g = sigma_;
  g.diagonal().array() += ridge_;
  Eigen::LLT<Eigen::MatrixXd> llt(g);
  if (llt.info() != Eigen::Success) {
    // Negative eigenvalues beyond rounding: not a valid information matrix.
    throw ContractError("sigma is not positive semidefinite");
  }
  j0_ = llt.matrixU().solve(Eigen::MatrixXd::Identity(p, p));
}

QpSolution QpSolver::solve(int j, double gamma) const {
  if (j < 0 || j >= dim()) throw ContractError("row index out of range");
  if (!(gamma >= 0.0)) throw ContractError("gamma must be nonnegative");

  QpSolution sol;
  const Eigen::Index p = dim();
  if (zero_ || gamma >= 1.0) {
    // m = 0 is admissible (and optimal) exactly when gamma >= 1.
    sol.m = Eigen::VectorXd::Zero(p);
    sol.lower = Eigen::VectorXd::Zero(p);
    sol.upper = Eigen::VectorXd::Zero(p);
    if (gamma < 1.0) {
      sol.status = QpStatus::Infeasible;
      sol.message = "sigma is zero; no m satisfies the constraints";
    }
    finish(sol, j, gamma);
    return sol;
  }
  if (gamma == 0.0) {
    if (lifted()) {
      sol.m = Eigen::VectorXd::Zero(p);
      sol.lower = Eigen::VectorXd::Zero(p);
      sol.upper = Eigen::VectorXd::Zero(p);
      sol.status = QpStatus::Infeasible;
      sol.message = "gamma = 0 requires an invertible sigma";
      finish(sol, j, gamma);
      return sol;
    }
    return solve_equality(j);
  }
  return solve_inequality(j, gamma);
}

void QpSolver::finish(QpSolution& sol, int j, double gamma) const {
  sol.ridge = ridge_;
  sol.objective = std::max(0.0, sol.m.dot(sigma_ * sol.m));
  const QpCertificate c = certify(sigma_, j, gamma, sol.m, sol.lower, sol.upper, ridge_);
  sol.feasibility_gap = c.feasibility_gap;
  sol.kkt_residual = c.kkt_residual;
  if (sol.status == QpStatus::Optimal &&
      (c.feasibility_gap > options_.feasibility_tol || c.kkt_residual > options_.kkt_tol)) {
    sol.status = QpStatus::MaxIter;
    sol.message = "certificate outside tolerance";
  }
}

QpSolution QpSolver::solve_equality(int j) const {
  const int n = dim();
  GiState s;
  s.J = j0_;
  s.R = Eigen::MatrixXd::Zero(n, n);
  s.u = Eigen::VectorXd::Zero(n + 1);
  s.A.assign(static_cast<std::size_t>(n + 1), 0);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n), d(n), z(n), r(n);

  QpSolution sol;
  for (int i = 0; i < n; ++i) {
    const auto np = sigma_.col(i);
    d.noalias() = s.J.transpose() * np;
    z.noalias() = s.J.rightCols(n - s.iq) * d.tail(n - s.iq);
    solve_r(s, d, r);
    double t2 = 0.0;
    if (!dependent(d, s.iq)) t2 = -(np.dot(x) - (i == j ? 1.0 : 0.0)) / d.tail(n - s.iq).squaredNorm();
    x += t2 * z;
    s.u[s.iq] = t2;
    s.u.head(s.iq) -= t2 * r.head(s.iq);
    s.A[static_cast<std::size_t>(s.iq)] = -i - 1;
    if (!add_constraint(s, d)) {
      sol.status = QpStatus::Infeasible;
      sol.message = "equality constraints are linearly dependent";
      break;
    }
  }
  sol.iterations = n;
  sol.m = x;
  sol.lower = Eigen::VectorXd::Zero(n);
  sol.upper = Eigen::VectorXd::Zero(n);
  if (sol.status == QpStatus::Optimal) {
    for (int k = 0; k < s.iq; ++k) sol.lower[-s.A[static_cast<std::size_t>(k)] - 1] = s.u[k];
  }
  finish(sol, j, 0.0);
  return sol;
}

QpSolution QpSolver::solve_inequality(int j, double gamma) const {
  const int n = dim();
  const int mi = 2 * n;
  const int max_iter = options_.max_iter > 0 ? options_.max_iter : 20 * (mi + 10);
  const double viol_tol = 0.01 * options_.feasibility_tol;

  GiState s;
  s.J = j0_;
  s.R = Eigen::MatrixXd::Zero(n, n);
  s.u = Eigen::VectorXd::Zero(n + 1);
  s.A.assign(static_cast<std::size_t>(n + 1), 0);

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n), x_old(n), d(n), z(n), r(n), np(n);
  Eigen::VectorXd u_old(n + 1), slack(mi), sx(n);
  std::vector<int> a_old(static_cast<std::size_t>(n + 1));
  std::vector<int> iai(static_cast<std::size_t>(mi));
  std::vector<char> iaexcl(static_cast<std::size_t>(mi));
  for (int i = 0; i < mi; ++i) iai[static_cast<std::size_t>(i)] = i;

  // Constraint c < n is the lower bound on row c, c >= n the upper bound on row c - n.
  auto normal = [&](int c, Eigen::VectorXd& out) {
    if (c < n) {
      out = sigma_.col(c);
    } else {
      out = -sigma_.col(c - n);
    }
  };
  auto slack_of = [&](int c, const Eigen::VectorXd& sigma_x) {
    const int row = c < n ? c : c - n;
    const double resid = sigma_x[row] - (row == j ? 1.0 : 0.0);
    return (c < n ? resid : -resid) + gamma;
  };

  QpSolution sol;
  int iter = 0;
  int ip = 0;
  bool done = false;
  while (!done) {
    // Step 1: slacks of all constraints at the current primal point.
    if (++iter > max_iter) {
      sol.status = QpStatus::MaxIter;
      sol.message = "iteration limit reached";
      break;
    }
    for (int i = 0; i < s.iq; ++i) iai[static_cast<std::size_t>(s.A[static_cast<std::size_t>(i)])] = -1;
    sx.noalias() = sigma_ * x;
    for (int c = 0; c < mi; ++c) {
      iaexcl[static_cast<std::size_t>(c)] = 1;
      slack[c] = slack_of(c, sx);
    }
    u_old.head(s.iq) = s.u.head(s.iq);
    std::copy(s.A.begin(), s.A.begin() + s.iq, a_old.begin());
    x_old = x;

    bool pick_again = true;
    while (pick_again) {
      pick_again = false;
      // Step 2: most violated inactive constraint.
      double worst = -viol_tol;
      ip = -1;
      for (int c = 0; c < mi; ++c) {
        if (slack[c] < worst && iai[static_cast<std::size_t>(c)] != -1 && iaexcl[static_cast<std::size_t>(c)]) {
          worst = slack[c];
          ip = c;
        }
      }
      if (ip < 0) {
        done = true;
        break;
      }
      normal(ip, np);
      s.u[s.iq] = 0.0;
      s.A[static_cast<std::size_t>(s.iq)] = ip;

      // Steps 2a-2c: move until constraint ip is satisfied or a blocking
      // constraint has to leave the active set.
      while (true) {
        if (++iter > max_iter) break;
        d.noalias() = s.J.transpose() * np;
        z.noalias() = s.J.rightCols(n - s.iq) * d.tail(n - s.iq);
        solve_r(s, d, r);

        int l = -1;
        double t1 = kInf;
        for (int k = 0; k < s.iq; ++k) {
          if (r[k] > 0.0) {
            const double tmp = s.u[k] / r[k];
            if (tmp < t1) {
              t1 = tmp;
              l = s.A[static_cast<std::size_t>(k)];
            }
          }
        }
        const double t2 = dependent(d, s.iq) ? kInf : -slack[ip] / d.tail(n - s.iq).squaredNorm();
        const double t = std::min(t1, t2);
        if (t >= kInf) {
          sol.status = QpStatus::Infeasible;
          sol.message = "constraints are inconsistent";
          done = true;
          break;
        }
        if (t2 >= kInf) {
          // Dual-only step.
          s.u.head(s.iq) -= t * r.head(s.iq);
          s.u[s.iq] += t;
          iai[static_cast<std::size_t>(l)] = l;
          delete_constraint(s, 0, l);
          continue;
        }
        x += t * z;
        s.u.head(s.iq) -= t * r.head(s.iq);
        s.u[s.iq] += t;
        if (t == t2) {
          if (!add_constraint(s, d)) {
            // Degenerate: restore the previous active set and try another constraint.
            iaexcl[static_cast<std::size_t>(ip)] = 0;
            delete_constraint(s, 0, ip);
            for (int c = 0; c < mi; ++c) iai[static_cast<std::size_t>(c)] = c;
            for (int i = 0; i < s.iq; ++i) {
              s.A[static_cast<std::size_t>(i)] = a_old[static_cast<std::size_t>(i)];
              iai[static_cast<std::size_t>(s.A[static_cast<std::size_t>(i)])] = -1;
              s.u[i] = u_old[i];
            }
            x = x_old;
            pick_again = true;
          } else {
            iai[static_cast<std::size_t>(ip)] = -1;
          }
          break;
        }
        // Partial step: drop the blocking constraint and continue with ip.
        iai[static_cast<std::size_t>(l)] = l;
        delete_constraint(s, 0, l);
        sx.noalias() = sigma_ * x;
        slack[ip] = slack_of(ip, sx);
      }
      if (iter > max_iter && !done) {
        sol.status = QpStatus::MaxIter;
        sol.message = "iteration limit reached";
        done = true;
      }
    }
  }

  sol.iterations = iter;
  sol.m = x;
  sol.lower = Eigen::VectorXd::Zero(n);
  sol.upper = Eigen::VectorXd::Zero(n);
  for (int k = 0; k < s.iq; ++k) {
    const int c = s.A[static_cast<std::size_t>(k)];
    if (c < n) {
      sol.lower[c] = s.u[k];
    } else {
      sol.upper[c - n] = s.u[k];
    }
  }
  finish(sol, j, gamma);
  return sol;
}

QpSolution solve_qp(const QpProblem& problem, const QpOptions& options) {
  if (!(problem.gamma >= 0.0)) throw ContractError("gamma must be nonnegative");
  return QpSolver(problem.sigma, options).solve(problem.j, problem.gamma);
}

bool PrecisionEstimate::ok() const { return failed_rows().empty(); }

std::vector<int> PrecisionEstimate::failed_rows() const {
  std::vector<int> rows;
  for (std::size_t j = 0; j < status.size(); ++j) {
    if (status[j] != QpStatus::Optimal) rows.push_back(static_cast<int>(j));
  }
  return rows;
}

PrecisionEstimate solve_all_rows_unchecked(const QpSolver& solver, double gamma, int parallelism) {
  const int p = solver.dim();
  PrecisionEstimate est;
  est.gamma = gamma;
  est.ridge = solver.ridge();
  est.theta_hat = Eigen::MatrixXd::Zero(p, p);
  est.feasibility_gap = Eigen::VectorXd::Zero(p);
  est.kkt_residual = Eigen::VectorXd::Zero(p);
  est.status.assign(static_cast<std::size_t>(p), QpStatus::Optimal);
  parallel_for(p, parallelism, [&](int j) {
    const QpSolution sol = solver.solve(j, gamma);
    est.theta_hat.row(j) = sol.m.transpose();
    est.feasibility_gap[j] = sol.feasibility_gap;
    est.kkt_residual[j] = sol.kkt_residual;
    est.status[static_cast<std::size_t>(j)] = sol.status;
  });
  return est;
}

PrecisionEstimate solve_all_rows(const QpSolver& solver, double gamma, int parallelism) {
  PrecisionEstimate est = solve_all_rows_unchecked(solver, gamma, parallelism);
  const auto failed = est.failed_rows();
  if (!failed.empty()) {
    std::string rows;
    for (int r : failed) rows += (rows.empty() ? "" : ",") + std::to_string(r + 1);
    throw InfeasibleError("row problems failed at gamma=" + csv::format_double(gamma) + " (rows " + rows +
                          ")");
  }
  return est;
}

PrecisionEstimate solve_all_rows(const Eigen::MatrixXd& sigma, double gamma, int parallelism,
                                 const QpOptions& options) {
  return solve_all_rows(QpSolver(sigma, options), gamma, parallelism);
}

}  // namespace dblcox
