#include "doctest.h"

#include "dblcox/errors.hpp"
#include "dblcox/survdata.hpp"
#include "oracles.hpp"

#include <set>
#include <sstream>

using namespace dblcox;

namespace {

StratifiedSurvivalDataset one_stratum(std::vector<double> times, std::vector<int> events) {
  StratumBlock b;
  b.id = "a";
  b.times = Eigen::Map<Eigen::VectorXd>(times.data(), static_cast<Eigen::Index>(times.size()));
  b.events = events;
  b.covariates = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(times.size()), 1);
  return StratifiedSurvivalDataset({b});
}

StratifiedSurvivalDataset sized(std::vector<int> sizes) { return oracle::random_dataset(7, sizes, 2); }

}  // namespace

TEST_CASE("load_csv groups rows by stratum") {
  std::istringstream in("stratum,time,status,x\nA,1,1,0.5\nB,2,0,1\nA,3,0,-1\nB,4,1,2\n");
  const auto d = load_csv(in);
  CHECK(d.num_strata() == 2);
  CHECK(d.p() == 1);
  CHECK(d.n_total() == 4);
  CHECK(d.stratum(0).id == "A");
  CHECK(d.stratum(0).size() == 2);
  CHECK(d.stratum(1).size() == 2);
  CHECK(d.stratum(0).times[1] == 3.0);
  CHECK(d.stratum(1).covariates(1, 0) == 2.0);
  CHECK(d.covariate_names() == std::vector<std::string>{"x"});
}

TEST_CASE("load_csv honours the schema and covariate order") {
  std::istringstream in("b,a,site,t,d\n1,2,s1,5,1\n3,4,s1,6,0\n");
  CsvSchema schema{"site", "t", "d", {"a", "b"}};
  const auto d = load_csv(in, schema);
  CHECK(d.covariate_names() == std::vector<std::string>{"a", "b"});
  CHECK(d.stratum(0).covariates(0, 0) == 2.0);
  CHECK(d.stratum(0).covariates(1, 1) == 3.0);
}

TEST_CASE("load_csv rejects a zero time and cites the line") {
  std::istringstream in("stratum,time,status,x\nA,1,1,0\nA,0.0,1,0\n");
  try {
    load_csv(in);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(e.line() == 3);
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("load_csv rejects missing values, bad status and missing columns") {
  std::istringstream empty_cell("stratum,time,status,x\nA,1,1,\n");
  CHECK_THROWS_AS(load_csv(empty_cell), ValidationError);
  std::istringstream bad_status("stratum,time,status,x\nA,1,2,0\n");
  CHECK_THROWS_AS(load_csv(bad_status), ValidationError);
  std::istringstream no_status("stratum,time,x\nA,1,0\n");
  CHECK_THROWS_AS(load_csv(no_status), SchemaError);
  std::istringstream negative("stratum,time,status,x\nA,-1,1,0\n");
  CHECK_THROWS_AS(load_csv(negative), ValidationError);
}

TEST_CASE("CSV round trip is bit-exact") {
  const auto d = oracle::random_dataset(11, {5, 7, 3}, 4);
  std::stringstream buf;
  write_csv(d, buf);
  const auto back = load_csv(buf);
  REQUIRE(back.num_strata() == d.num_strata());
  for (int k = 0; k < d.num_strata(); ++k) {
    CHECK(back.stratum(k).id == d.stratum(k).id);
    CHECK(back.stratum(k).events == d.stratum(k).events);
    CHECK((back.stratum(k).times.array() == d.stratum(k).times.array()).all());
    CHECK((back.stratum(k).covariates.array() == d.stratum(k).covariates.array()).all());
  }
}

TEST_CASE("dataset invariants are enforced") {
  StratumBlock a;
  a.id = "a";
  a.times = Eigen::VectorXd::Ones(2);
  a.events = {1, 0};
  a.covariates = Eigen::MatrixXd::Zero(2, 2);
  StratumBlock b = a;
  b.covariates = Eigen::MatrixXd::Zero(2, 3);
  CHECK_THROWS(StratifiedSurvivalDataset({a, b}));
  CHECK_THROWS(StratifiedSurvivalDataset(std::vector<StratumBlock>{}));
  StratumBlock c = a;
  c.events = {1, 2};
  CHECK_THROWS_AS(StratifiedSurvivalDataset({c}), ValidationError);
  StratumBlock e = a;
  e.covariates(0, 0) = std::nan("");
  CHECK_THROWS_AS(StratifiedSurvivalDataset({e}), ValidationError);
}

TEST_CASE("risk index for two subjects sorts ascending") {
  const auto d = one_stratum({2.0, 1.0}, {1, 1});
  const auto idx = build_risk_index(d);
  const auto& s = idx.strata[0];
  CHECK(s.order == std::vector<int>{1, 0});
  CHECK(s.at_risk_count(0) == 2);
  CHECK(s.at_risk_count(1) == 1);
  CHECK(s.event_positions == std::vector<int>{0, 1});
}

TEST_CASE("tied event times share the full risk set") {
  const auto d = one_stratum({1.0, 1.0}, {1, 1});
  const auto idx = build_risk_index(d);
  const auto& s = idx.strata[0];
  CHECK(s.order == std::vector<int>{0, 1});
  CHECK(s.at_risk_count(0) == 2);
  CHECK(s.at_risk_count(1) == 2);
}

TEST_CASE("single subject has a risk set of one") {
  const auto d = one_stratum({3.0}, {1});
  const auto idx = build_risk_index(d);
  const auto& s = idx.strata[0];
  CHECK(s.at_risk_count(0) == 1);
}

TEST_CASE("risk set sizes match brute-force counting and are non-increasing") {
  const auto d = oracle::random_dataset(3, {40, 25}, 1);
  const auto idx = build_risk_index(d);
  for (int k = 0; k < d.num_strata(); ++k) {
    const auto& blk = d.stratum(k);
    const auto& s = idx.strata[static_cast<std::size_t>(k)];
    int prev = blk.size() + 1;
    for (int pos = 0; pos < s.size(); ++pos) {
      const double t = blk.times[s.order[static_cast<std::size_t>(pos)]];
      int count = 0;
      for (int j = 0; j < blk.size(); ++j) count += blk.times[j] >= t;
      CHECK(s.at_risk_count(pos) == count);
      CHECK(count <= prev);
      prev = count;
    }
  }
}

TEST_CASE("by-stratum folds: K=40, M=10 gives four strata per fold") {
  const auto d = sized(std::vector<int>(40, 3));
  const auto f = assign_folds(d, FoldMode::ByStratum, 10, 99);
  std::vector<int> count(10, 0);
  for (int k = 0; k < 40; ++k) ++count[static_cast<std::size_t>(f.stratum_fold[static_cast<std::size_t>(k)])];
  for (int c : count) CHECK(c == 4);
}

TEST_CASE("by-stratum folds: K=M puts each stratum in its own fold") {
  const auto d = sized(std::vector<int>(5, 4));
  const auto f = assign_folds(d, FoldMode::ByStratum, 5, 1);
  std::set<int> seen(f.stratum_fold.begin(), f.stratum_fold.end());
  CHECK(seen.size() == 5);
  for (int q = 0; q < 5; ++q) CHECK(f.testing(d, q).num_strata() == 1);
}

TEST_CASE("within-stratum folds split 100 rows into 20 per fold") {
  const auto d = sized({100, 100});
  const auto f = assign_folds(d, FoldMode::WithinStratum, 5, 5);
  for (int k = 0; k < 2; ++k) {
    std::vector<int> count(5, 0);
    for (int i = 0; i < 100; ++i) ++count[static_cast<std::size_t>(f.fold_of(k, i))];
    for (int c : count) CHECK(c == 20);
  }
}

TEST_CASE("folds partition the data and are seed-deterministic") {
  const auto d = sized({13, 7, 9, 4});
  for (auto mode : {FoldMode::ByStratum, FoldMode::WithinStratum}) {
    const auto f = assign_folds(d, mode, 3, 42);
    const auto g = assign_folds(d, mode, 3, 42);
    int total = 0;
    for (int q = 0; q < 3; ++q) {
      CHECK(f.test_size(d, q) > 0);
      total += f.test_size(d, q);
      CHECK(f.training(d, q).n_total() + f.testing(d, q).n_total() == d.n_total());
    }
    CHECK(total == d.n_total());
    for (int k = 0; k < d.num_strata(); ++k) {
      for (int i = 0; i < d.stratum(k).size(); ++i) CHECK(f.fold_of(k, i) == g.fold_of(k, i));
    }
  }
}

TEST_CASE("fold configuration errors") {
  const auto d = sized({5, 5, 5});
  CHECK_THROWS_AS(assign_folds(d, FoldMode::ByStratum, 4, 1), ConfigError);
  CHECK_THROWS_AS(assign_folds(d, FoldMode::WithinStratum, 1, 1), ConfigError);
  CHECK_THROWS_AS(assign_folds(d, FoldMode::WithinStratum, 16, 1), ConfigError);
  CHECK(parse_fold_mode("by-stratum") == FoldMode::ByStratum);
  CHECK_THROWS_AS(parse_fold_mode("random"), ConfigError);
}

TEST_CASE("column and row selection") {
  const auto d = oracle::random_dataset(5, {4, 3}, 3);
  const std::vector<int> cols = {2, 0};
  const auto c = d.select_columns(cols);
  CHECK(c.p() == 2);
  CHECK(c.stratum(1).covariates(2, 0) == d.stratum(1).covariates(2, 2));
  const auto r = d.select_rows({{0, 3}, {}});
  CHECK(r.num_strata() == 1);
  CHECK(r.n_total() == 2);
}
