#include "dblcox/partial_likelihood.hpp"

#include "dblcox/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dblcox {

namespace {

void check_beta(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                const Eigen::VectorXd& beta) {
  if (beta.size() != data.p()) {
    throw ContractError("beta has length " + std::to_string(beta.size()) + ", expected " +
                        std::to_string(data.p()));
  }
  if (static_cast<int>(index.strata.size()) != data.num_strata()) {
    throw ContractError("risk index does not match dataset");
  }
  if (!beta.allFinite()) throw ContractError("beta must be finite");
}

Eigen::MatrixXd lower_to_full(Eigen::MatrixXd m) {
  m.triangularView<Eigen::StrictlyUpper>() = m.transpose().triangularView<Eigen::StrictlyUpper>();
  return m;
}

/**
 * Single reverse sweep over each stratum's sorted times. Covariates are
 * centred per stratum first; every returned quantity is location invariant
 * so this only improves conditioning. `cols` restricts the Hessian block.
 */
DerivativeBundle sweep(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                       const Eigen::VectorXd& beta, DerivativeRequest req,
                       std::span<const int> cols) {
  check_beta(data, index, beta);
  const int p = data.p();
  const int q = static_cast<int>(cols.size());
  const double inv_n = 1.0 / static_cast<double>(data.n_total());

  DerivativeBundle out;
  out.beta = beta;
  double value = 0.0;
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd hess;
  Eigen::MatrixXd sig;
  if (req.hessian) hess = Eigen::MatrixXd::Zero(q, q);
  if (req.sigma_hat) sig = Eigen::MatrixXd::Zero(p, p);

  Eigen::VectorXd s1(p), eta_bar(p), resid(p), xq(q), eq(q);
  Eigen::MatrixXd s2;
  for (int k = 0; k < data.num_strata(); ++k) {
    const auto& st = data.stratum(k);
    const auto& ri = index.strata[static_cast<std::size_t>(k)];
    if (ri.event_positions.empty()) continue;
    const int n = st.size();

    const Eigen::RowVectorXd centre = st.covariates.colwise().mean();
    const Eigen::MatrixXd xc = st.covariates.rowwise() - centre;
    const Eigen::VectorXd lin = xc * beta;

    // Running maximum of the linear predictor over the risk set; sums are
    // rescaled when it grows so no risk set underflows to zero weight.
    double shift = -std::numeric_limits<double>::infinity();
    double s0 = 0.0;
    s1.setZero();
    if (req.hessian) s2 = Eigen::MatrixXd::Zero(q, q);

    int pos = n - 1;
    while (pos >= 0) {
      const int start = ri.group_start[static_cast<std::size_t>(pos)];
      int group_events = 0;
      for (int t = start; t <= pos; ++t) {
        const int row = ri.order[static_cast<std::size_t>(t)];
        if (lin[row] > shift) {
          const double f = std::exp(shift - lin[row]);
          s0 *= f;
          s1 *= f;
          if (req.hessian) s2.triangularView<Eigen::Lower>() *= f;
          shift = lin[row];
        }
        const double wi = std::exp(lin[row] - shift);
        s0 += wi;
        s1.noalias() += wi * xc.row(row).transpose();
        if (req.hessian) {
          for (int a = 0; a < q; ++a) xq[a] = xc(row, cols[static_cast<std::size_t>(a)]);
          s2.selfadjointView<Eigen::Lower>().rankUpdate(xq, wi);
        }
        group_events += st.events[static_cast<std::size_t>(row)];
      }
      if (group_events > 0) {
        eta_bar = s1 / s0;
        const double log_denom = shift + std::log(s0) - std::log(static_cast<double>(n));
        for (int t = start; t <= pos; ++t) {
          const int row = ri.order[static_cast<std::size_t>(t)];
          if (st.events[static_cast<std::size_t>(row)] == 0) continue;
          value -= lin[row] - log_denom;
          resid = xc.row(row).transpose() - eta_bar;
          grad -= resid;
          if (req.sigma_hat) sig.selfadjointView<Eigen::Lower>().rankUpdate(resid, 1.0);
        }
        if (req.hessian) {
          for (int a = 0; a < q; ++a) eq[a] = eta_bar[cols[static_cast<std::size_t>(a)]];
          const double d = static_cast<double>(group_events);
          hess.triangularView<Eigen::Lower>() += (d / s0) * s2;
          hess.selfadjointView<Eigen::Lower>().rankUpdate(eq, -d);
        }
      }
      pos = start - 1;
    }
  }

  out.value = value * inv_n;
  out.gradient = grad * inv_n;
  if (req.hessian) out.hessian = lower_to_full(hess * inv_n);
  if (req.sigma_hat) out.sigma_hat = lower_to_full(sig * inv_n);
  return out;
}

std::vector<int> all_columns(int p) {
  std::vector<int> cols(static_cast<std::size_t>(p));
  std::iota(cols.begin(), cols.end(), 0);
  return cols;
}

}  // namespace

DerivativeBundle evaluate(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                          const Eigen::VectorXd& beta, DerivativeRequest request) {
  const auto cols = all_columns(request.hessian ? data.p() : 0);
  return sweep(data, index, beta, request, cols);
}

double neg_log_partial_likelihood(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                                  const Eigen::VectorXd& beta) {
  return sweep(data, index, beta, {.gradient = false}, {}).value;
}

Eigen::VectorXd score(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                      const Eigen::VectorXd& beta) {
  return sweep(data, index, beta, {}, {}).gradient;
}

Eigen::MatrixXd hessian(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                        const Eigen::VectorXd& beta) {
  return *evaluate(data, index, beta, {.hessian = true}).hessian;
}

Eigen::MatrixXd sigma_hat(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                          const Eigen::VectorXd& beta) {
  return *sweep(data, index, beta, {.sigma_hat = true}, {}).sigma_hat;
}

Eigen::MatrixXd hessian_block(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                              const Eigen::VectorXd& beta, std::span<const int> cols) {
  for (int c : cols) {
    if (c < 0 || c >= data.p()) throw ContractError("hessian column out of range");
  }
  return *sweep(data, index, beta, {.hessian = true}, cols).hessian;
}

WeightedAverages weighted_averages(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                                   const Eigen::VectorXd& beta, bool second_moment) {
  check_beta(data, index, beta);
  const int p = data.p();
  WeightedAverages out;
  for (int k = 0; k < data.num_strata(); ++k) {
    const auto& st = data.stratum(k);
    const auto& ri = index.strata[static_cast<std::size_t>(k)];
    const int n = st.size();
    const auto n_ev = static_cast<Eigen::Index>(ri.event_positions.size());
    StratumAverages sa;
    sa.mu0.resize(n_ev);
    sa.mu1.resize(n_ev, p);
    sa.eta.resize(n_ev, p);

    const Eigen::VectorXd lin = st.covariates * beta;
    const double shift = n > 0 ? lin.maxCoeff() : 0.0;
    const Eigen::VectorXd w = (lin.array() - shift).exp().matrix();
    const double scale = std::exp(shift) / static_cast<double>(n);

    for (Eigen::Index e = 0; e < n_ev; ++e) {
      const int pos = ri.event_positions[static_cast<std::size_t>(e)];
      const int start = ri.group_start[static_cast<std::size_t>(pos)];
      double s0 = 0.0;
      Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
      Eigen::MatrixXd s2;
      if (second_moment) s2 = Eigen::MatrixXd::Zero(p, p);
      for (int t = start; t < n; ++t) {
        const int row = ri.order[static_cast<std::size_t>(t)];
        s0 += w[row];
        s1 += w[row] * st.covariates.row(row).transpose();
        if (second_moment) s2 += w[row] * st.covariates.row(row).transpose() * st.covariates.row(row);
      }
      sa.event_rows.push_back(ri.order[static_cast<std::size_t>(pos)]);
      sa.mu0[e] = s0 * scale;
      sa.mu1.row(e) = (s1 * scale).transpose();
      sa.eta.row(e) = (s1 / s0).transpose();
      if (second_moment) sa.mu2.push_back(s2 * scale);
    }
    out.strata.push_back(std::move(sa));
  }
  return out;
}

double StratumHazard::at(double t) const {
  auto it = std::upper_bound(jump_times.begin(), jump_times.end(), t);
  if (it == jump_times.begin()) return 0.0;
  return cumulative[static_cast<std::size_t>(std::distance(jump_times.begin(), it) - 1)];
}

BaselineHazard breslow_baseline(const StratifiedSurvivalDataset& data, const RiskSetIndex& index,
                                const Eigen::VectorXd& beta) {
  check_beta(data, index, beta);
  BaselineHazard out;
  for (int k = 0; k < data.num_strata(); ++k) {
    const auto& st = data.stratum(k);
    const auto& ri = index.strata[static_cast<std::size_t>(k)];
    const int n = st.size();
    const Eigen::VectorXd lin = st.covariates * beta;
    const double shift = lin.maxCoeff();
    const Eigen::VectorXd w = (lin.array() - shift).exp().matrix();

    // Jumps are d / sum_{at risk} exp(b'X), accumulated in ascending time.
    std::vector<double> jump_t, jump_h;
    double s0 = 0.0;
    int pos = n - 1;
    while (pos >= 0) {
      const int start = ri.group_start[static_cast<std::size_t>(pos)];
      int d = 0;
      for (int t = start; t <= pos; ++t) {
        const int row = ri.order[static_cast<std::size_t>(t)];
        s0 += w[row];
        d += st.events[static_cast<std::size_t>(row)];
      }
      if (d > 0) {
        jump_t.push_back(st.times[ri.order[static_cast<std::size_t>(start)]]);
        jump_h.push_back(static_cast<double>(d) * std::exp(-shift) / s0);
      }
      pos = start - 1;
    }
    StratumHazard h;
    double cum = 0.0;
    for (std::size_t i = jump_t.size(); i-- > 0;) {
      cum += jump_h[i];
      h.jump_times.push_back(jump_t[i]);
      h.cumulative.push_back(cum);
    }
    out.strata.push_back(std::move(h));
  }
  return out;
}

}  // namespace dblcox
