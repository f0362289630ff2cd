#include "dblcox/survdata.hpp"

#include "dblcox/csv.hpp"
#include "dblcox/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_map>

namespace dblcox {

int StratumBlock::event_count() const {
  return static_cast<int>(std::count(events.begin(), events.end(), 1));
}

StratifiedSurvivalDataset::StratifiedSurvivalDataset(std::vector<StratumBlock> strata,
                                                     std::vector<std::string> covariate_names)
    : strata_(std::move(strata)), names_(std::move(covariate_names)) {
  if (strata_.empty()) throw ContractError("dataset needs at least one stratum");
  p_ = static_cast<int>(strata_.front().covariates.cols());
  for (const auto& s : strata_) {
    const int n = s.size();
    if (n < 1) throw ContractError("stratum '" + s.id + "' is empty");
    if (static_cast<int>(s.events.size()) != n || s.covariates.rows() != n) {
      throw ContractError("stratum '" + s.id + "' has inconsistent row counts");
    }
    if (s.covariates.cols() != p_) {
      throw ContractError("stratum '" + s.id + "' has " + std::to_string(s.covariates.cols()) +
                          " covariates, expected " + std::to_string(p_));
    }
    for (int i = 0; i < n; ++i) {
      if (!(s.times[i] > 0.0) || !std::isfinite(s.times[i])) {
        throw ValidationError("stratum '" + s.id + "': time must be positive and finite");
      }
      if (s.events[static_cast<std::size_t>(i)] != 0 && s.events[static_cast<std::size_t>(i)] != 1) {
        throw ValidationError("stratum '" + s.id + "': status must be 0 or 1");
      }
    }
    if (!s.covariates.allFinite()) {
      throw ValidationError("stratum '" + s.id + "': covariates must be finite");
    }
    n_total_ += n;
  }
  if (names_.empty()) {
    for (int j = 0; j < p_; ++j) names_.push_back("x" + std::to_string(j + 1));
  }
  if (static_cast<int>(names_.size()) != p_) {
    throw ContractError("covariate name count does not match p");
  }
}

int StratifiedSurvivalDataset::n_events() const {
  int total = 0;
  for (const auto& s : strata_) total += s.event_count();
  return total;
}

StratifiedSurvivalDataset StratifiedSurvivalDataset::select_strata(std::span<const int> strata) const {
  std::vector<StratumBlock> out;
  out.reserve(strata.size());
  for (int k : strata) {
    if (k < 0 || k >= num_strata()) throw ContractError("stratum index out of range");
    out.push_back(strata_[static_cast<std::size_t>(k)]);
  }
  return StratifiedSurvivalDataset(std::move(out), names_);
}

StratifiedSurvivalDataset StratifiedSurvivalDataset::select_rows(
    const std::vector<std::vector<int>>& rows) const {
  if (static_cast<int>(rows.size()) != num_strata()) {
    throw ContractError("row selection must list every stratum");
  }
  std::vector<StratumBlock> out;
  for (std::size_t k = 0; k < strata_.size(); ++k) {
    const auto& sel = rows[k];
    if (sel.empty()) continue;
    const auto& src = strata_[k];
    StratumBlock b;
    b.id = src.id;
    b.times.resize(static_cast<Eigen::Index>(sel.size()));
    b.covariates.resize(static_cast<Eigen::Index>(sel.size()), p_);
    b.events.reserve(sel.size());
    for (std::size_t r = 0; r < sel.size(); ++r) {
      const int i = sel[r];
      if (i < 0 || i >= src.size()) throw ContractError("row index out of range");
      b.times[static_cast<Eigen::Index>(r)] = src.times[i];
      b.events.push_back(src.events[static_cast<std::size_t>(i)]);
      b.covariates.row(static_cast<Eigen::Index>(r)) = src.covariates.row(i);
    }
    out.push_back(std::move(b));
  }
  if (out.empty()) throw ContractError("row selection is empty");
  return StratifiedSurvivalDataset(std::move(out), names_);
}

StratifiedSurvivalDataset StratifiedSurvivalDataset::select_columns(std::span<const int> cols) const {
  std::vector<std::string> names;
  std::vector<StratumBlock> out;
  for (int c : cols) {
    if (c < 0 || c >= p_) throw ContractError("column index out of range");
    names.push_back(names_[static_cast<std::size_t>(c)]);
  }
  for (const auto& s : strata_) {
    StratumBlock b;
    b.id = s.id;
    b.times = s.times;
    b.events = s.events;
    b.covariates.resize(s.size(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) {
      b.covariates.col(static_cast<Eigen::Index>(j)) = s.covariates.col(cols[j]);
    }
    out.push_back(std::move(b));
  }
  return StratifiedSurvivalDataset(std::move(out), std::move(names));
}

// ---------------------------------------------------------------------------
// CSV

StratifiedSurvivalDataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open data file '" + path + "'");
  return load_csv(in, schema);
}

StratifiedSurvivalDataset load_csv(std::istream& in, const CsvSchema& schema) {
  csv::Reader reader(in);
  auto header_rec = reader.next();
  if (!header_rec) throw SchemaError("data file has no header row");
  const auto& header = header_rec->fields;

  auto require = [&](const std::string& name) {
    int idx = csv::find_column(header, name);
    if (idx < 0) throw SchemaError("missing column '" + name + "'");
    return idx;
  };
  const int stratum_idx = require(schema.stratum_col);
  const int time_idx = require(schema.time_col);
  const int status_idx = require(schema.status_col);

  std::vector<std::string> cov_names = schema.covariates;
  if (cov_names.empty()) {
    for (int i = 0; i < static_cast<int>(header.size()); ++i) {
      if (i != stratum_idx && i != time_idx && i != status_idx) {
        cov_names.push_back(header[static_cast<std::size_t>(i)]);
      }
    }
  }
  std::vector<int> cov_idx;
  for (const auto& name : cov_names) cov_idx.push_back(require(name));
  const int p = static_cast<int>(cov_idx.size());

  struct Pending {
    std::string id;
    std::vector<double> times;
    std::vector<int> events;
    std::vector<double> covs;  // row-major
  };
  std::vector<Pending> groups;
  std::unordered_map<std::string, std::size_t> group_of;

  while (auto rec = reader.next()) {
    const auto& f = rec->fields;
    const long line = rec->line;
    if (f.size() != header.size()) {
      throw ValidationError("expected " + std::to_string(header.size()) + " fields, found " +
                                std::to_string(f.size()),
                            line);
    }
    const std::string& id = f[static_cast<std::size_t>(stratum_idx)];
    if (id.empty()) throw ValidationError("missing stratum label", line);

    auto t = csv::parse_double(f[static_cast<std::size_t>(time_idx)]);
    if (!t) throw ValidationError("time is missing or not numeric", line);
    if (!(*t > 0.0) || !std::isfinite(*t)) throw ValidationError("time must be positive", line);

    const std::string& st = f[static_cast<std::size_t>(status_idx)];
    auto sv = csv::parse_double(st);
    if (!sv || (*sv != 0.0 && *sv != 1.0)) throw ValidationError("status must be 0 or 1", line);

    auto [it, inserted] = group_of.try_emplace(id, groups.size());
    if (inserted) groups.push_back(Pending{id, {}, {}, {}});
    Pending& g = groups[it->second];
    g.times.push_back(*t);
    g.events.push_back(static_cast<int>(*sv));
    for (int j = 0; j < p; ++j) {
      const auto& cell = f[static_cast<std::size_t>(cov_idx[static_cast<std::size_t>(j)])];
      auto v = csv::parse_double(cell);
      if (!v || !std::isfinite(*v)) {
        throw ValidationError("covariate '" + cov_names[static_cast<std::size_t>(j)] +
                                  "' is missing or not numeric",
                              line);
      }
      g.covs.push_back(*v);
    }
  }
  if (groups.empty()) throw ValidationError("data file has no rows");

  std::vector<StratumBlock> strata;
  strata.reserve(groups.size());
  for (auto& g : groups) {
    const auto n = static_cast<Eigen::Index>(g.times.size());
    StratumBlock b;
    b.id = g.id;
    b.times = Eigen::Map<const Eigen::VectorXd>(g.times.data(), n);
    b.events = std::move(g.events);
    b.covariates = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        g.covs.data(), n, p);
    strata.push_back(std::move(b));
  }
  return StratifiedSurvivalDataset(std::move(strata), cov_names);
}

void write_csv(const StratifiedSurvivalDataset& data, std::ostream& out) {
  std::vector<std::string> header = {"stratum", "time", "status"};
  for (const auto& n : data.covariate_names()) header.push_back(csv::escape(n));
  out << csv::join(header) << '\n';
  for (const auto& s : data.strata()) {
    for (int i = 0; i < s.size(); ++i) {
      std::vector<std::string> row = {csv::escape(s.id), csv::format_double(s.times[i]),
                                      std::to_string(s.events[static_cast<std::size_t>(i)])};
      for (int j = 0; j < data.p(); ++j) row.push_back(csv::format_double(s.covariates(i, j)));
      out << csv::join(row) << '\n';
    }
  }
}

void write_csv(const StratifiedSurvivalDataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  write_csv(data, out);
}

// ---------------------------------------------------------------------------
// Risk sets

RiskSetIndex build_risk_index(const StratifiedSurvivalDataset& data) {
  RiskSetIndex index;
  index.strata.reserve(static_cast<std::size_t>(data.num_strata()));
  for (const auto& s : data.strata()) {
    const int n = s.size();
    StratumRiskIndex r;
    r.order.resize(static_cast<std::size_t>(n));
    std::iota(r.order.begin(), r.order.end(), 0);
    std::stable_sort(r.order.begin(), r.order.end(),
                     [&](int a, int b) { return s.times[a] < s.times[b]; });
    r.group_start.resize(static_cast<std::size_t>(n));
    for (int pos = 0; pos < n; ++pos) {
      const auto up = static_cast<std::size_t>(pos);
      if (pos > 0 && s.times[r.order[up]] == s.times[r.order[up - 1]]) {
        r.group_start[up] = r.group_start[up - 1];
      } else {
        r.group_start[up] = pos;
      }
      if (s.events[static_cast<std::size_t>(r.order[up])] == 1) r.event_positions.push_back(pos);
    }
    index.strata.push_back(std::move(r));
  }
  return index;
}

// ---------------------------------------------------------------------------
// Folds

const char* to_string(FoldMode mode) {
  return mode == FoldMode::ByStratum ? "by-stratum" : "within-stratum";
}

FoldMode parse_fold_mode(const std::string& text) {
  if (text == "by-stratum") return FoldMode::ByStratum;
  if (text == "within-stratum") return FoldMode::WithinStratum;
  throw ConfigError("unknown fold mode '" + text + "' (expected by-stratum or within-stratum)");
}

int FoldAssignment::fold_of(int stratum, int row) const {
  if (mode == FoldMode::ByStratum) return stratum_fold[static_cast<std::size_t>(stratum)];
  return row_fold[static_cast<std::size_t>(stratum)][static_cast<std::size_t>(row)];
}

std::vector<std::vector<int>> FoldAssignment::rows_for(const StratifiedSurvivalDataset& data,
                                                       int fold, bool in_fold) const {
  std::vector<std::vector<int>> rows(static_cast<std::size_t>(data.num_strata()));
  for (int k = 0; k < data.num_strata(); ++k) {
    for (int i = 0; i < data.stratum(k).size(); ++i) {
      if ((fold_of(k, i) == fold) == in_fold) rows[static_cast<std::size_t>(k)].push_back(i);
    }
  }
  return rows;
}

StratifiedSurvivalDataset FoldAssignment::training(const StratifiedSurvivalDataset& data,
                                                   int fold) const {
  return data.select_rows(rows_for(data, fold, false));
}

StratifiedSurvivalDataset FoldAssignment::testing(const StratifiedSurvivalDataset& data,
                                                  int fold) const {
  return data.select_rows(rows_for(data, fold, true));
}

int FoldAssignment::test_size(const StratifiedSurvivalDataset& data, int fold) const {
  int n = 0;
  for (const auto& r : rows_for(data, fold, true)) n += static_cast<int>(r.size());
  return n;
}

FoldAssignment assign_folds(const StratifiedSurvivalDataset& data, FoldMode mode, int num_folds,
                            std::uint64_t seed) {
  if (num_folds < 2) throw ConfigError("fold count must be at least 2");
  FoldAssignment fa;
  fa.mode = mode;
  fa.num_folds = num_folds;
  fa.seed = seed;
  std::mt19937_64 rng(seed);

  if (mode == FoldMode::ByStratum) {
    const int K = data.num_strata();
    if (num_folds > K) {
      throw ConfigError("by-stratum folds need K >= M (K=" + std::to_string(K) +
                        ", M=" + std::to_string(num_folds) + ")");
    }
    std::vector<int> perm(static_cast<std::size_t>(K));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    fa.stratum_fold.assign(static_cast<std::size_t>(K), 0);
    for (int i = 0; i < K; ++i) fa.stratum_fold[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = i % num_folds;
    return fa;
  }

  if (data.n_total() < num_folds) {
    throw ConfigError("fewer observations than folds");
  }
  // Offsets carry over between strata so folds stay balanced overall.
  int offset = 0;
  fa.row_fold.resize(static_cast<std::size_t>(data.num_strata()));
  for (int k = 0; k < data.num_strata(); ++k) {
    const int n = data.stratum(k).size();
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto& folds = fa.row_fold[static_cast<std::size_t>(k)];
    folds.assign(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
      folds[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = (offset + i) % num_folds;
    }
    offset = (offset + n) % num_folds;
  }
  return fa;
}

}  // namespace dblcox
