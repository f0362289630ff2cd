#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace dblcox {

/**
 * Observations from a single stratum.
 *
 * Rows of `covariates` line up with `times` and `events`. Times are strictly
 * positive, events are 0 (censored) or 1 (event).
 */
struct StratumBlock {
  std::string id;
  Eigen::VectorXd times;
  std::vector<int> events;
  Eigen::MatrixXd covariates;  // n_k x p

  int size() const { return static_cast<int>(times.size()); }
  int event_count() const;
};

/**
 * Immutable stratified survival sample.
 *
 * Validated on construction: at least one stratum, every stratum nonempty,
 * all strata share the covariate count p, times positive and finite,
 * statuses binary, covariates finite.
 */
class StratifiedSurvivalDataset {
 public:
  explicit StratifiedSurvivalDataset(std::vector<StratumBlock> strata,
                                     std::vector<std::string> covariate_names = {});

  const std::vector<StratumBlock>& strata() const { return strata_; }
  const StratumBlock& stratum(int k) const { return strata_[static_cast<std::size_t>(k)]; }
  int num_strata() const { return static_cast<int>(strata_.size()); }
  int p() const { return p_; }
  int n_total() const { return n_total_; }
  int n_events() const;
  const std::vector<std::string>& covariate_names() const { return names_; }

  /// Keep only the listed strata, in the order given.
  StratifiedSurvivalDataset select_strata(std::span<const int> strata) const;

  /// Keep the listed rows of each stratum; strata left empty are dropped.
  StratifiedSurvivalDataset select_rows(const std::vector<std::vector<int>>& rows) const;

  /// Keep the listed covariate columns, in the order given.
  StratifiedSurvivalDataset select_columns(std::span<const int> cols) const;

 private:
  std::vector<StratumBlock> strata_;
  std::vector<std::string> names_;
  int p_ = 0;
  int n_total_ = 0;
};

/// Column mapping for CSV ingestion. Empty `covariates` means "every other column".
struct CsvSchema {
  std::string stratum_col = "stratum";
  std::string time_col = "time";
  std::string status_col = "status";
  std::vector<std::string> covariates;
};

/**
 * Read a stratified survival CSV.
 *
 * Strata appear in order of first occurrence and rows keep file order within
 * each stratum. Throws SchemaError for a missing column and ValidationError
 * (carrying the file line) for non-positive times, non-binary statuses or
 * empty/non-numeric cells.
 */
StratifiedSurvivalDataset load_csv(const std::string& path, const CsvSchema& schema = {});
StratifiedSurvivalDataset load_csv(std::istream& in, const CsvSchema& schema = {});

/// Write with columns stratum,time,status,<covariates>; reloads bit-exact.
void write_csv(const StratifiedSurvivalDataset& data, std::ostream& out);
void write_csv(const StratifiedSurvivalDataset& data, const std::string& path);

/**
 * Sorted risk sets of one stratum.
 *
 * `order[s]` is the row at sorted position s (ascending time, ties in row
 * order). The at-risk set of the subject at sorted position s is the range
 * [group_start[s], n), which is shared by every member of a tie group.
 */
struct StratumRiskIndex {
  std::vector<int> order;
  std::vector<int> group_start;
  std::vector<int> event_positions;  // ascending sorted positions with an event

  int size() const { return static_cast<int>(order.size()); }
  int at_risk_count(int sorted_pos) const {
    return size() - group_start[static_cast<std::size_t>(sorted_pos)];
  }
};

struct RiskSetIndex {
  std::vector<StratumRiskIndex> strata;
};

RiskSetIndex build_risk_index(const StratifiedSurvivalDataset& data);

enum class FoldMode { ByStratum, WithinStratum };

const char* to_string(FoldMode mode);
FoldMode parse_fold_mode(const std::string& text);

/**
 * Partition of the sample into M cross-validation folds.
 *
 * In by-stratum mode `stratum_fold[k]` is the fold of stratum k; in
 * within-stratum mode `row_fold[k][i]` is the fold of row i of stratum k.
 */
struct FoldAssignment {
  FoldMode mode = FoldMode::ByStratum;
  int num_folds = 0;
  std::uint64_t seed = 0;
  std::vector<int> stratum_fold;
  std::vector<std::vector<int>> row_fold;

  int fold_of(int stratum, int row) const;
  StratifiedSurvivalDataset training(const StratifiedSurvivalDataset& data, int fold) const;
  StratifiedSurvivalDataset testing(const StratifiedSurvivalDataset& data, int fold) const;
  /// Number of observations held out in `fold`.
  int test_size(const StratifiedSurvivalDataset& data, int fold) const;

 private:
  std::vector<std::vector<int>> rows_for(const StratifiedSurvivalDataset& data, int fold,
                                         bool in_fold) const;
};

/// Throws ConfigError when M < 2, when M > K in by-stratum mode, or when
/// there are fewer observations than folds.
FoldAssignment assign_folds(const StratifiedSurvivalDataset& data, FoldMode mode, int num_folds,
                            std::uint64_t seed);

}  // namespace dblcox
