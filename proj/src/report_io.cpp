#include "dblcox/report_io.hpp"

#include "dblcox/csv.hpp"
#include "dblcox/errors.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include <fcntl.h>
#include <unistd.h>

namespace dblcox {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Json number(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

double read_number(const Json& v) { return v.is_null() ? kNaN : v.get<double>(); }

Json vector_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number(v[i]));
  return a;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

}  // namespace

void write_report_csv(const InferenceReport& report, std::ostream& out) {
  out << "covariate,estimate,lasso,se,z,p_value,ci_lower,ci_upper,hazard_ratio,hr_lower,hr_upper\n";
  for (const auto& r : report.coefficients) {
    out << csv::join({csv::escape(r.name), csv::format_double(r.estimate), csv::format_double(r.lasso),
                      csv::format_double(r.se), csv::format_double(r.z), csv::format_double(r.p_value),
                      csv::format_double(r.lower), csv::format_double(r.upper),
                      csv::format_double(r.hazard_ratio), csv::format_double(r.hr_lower),
                      csv::format_double(r.hr_upper)})
        << '\n';
  }
}

Json contrast_to_json(const ContrastResult& r) {
  return Json{{"label", r.label},
              {"statistic", number(r.statistic)},
              {"df", r.df},
              {"p_value", number(r.p_value)},
              {"critical_value", number(r.critical_value)},
              {"reject", r.reject}};
}

Json report_to_json(const InferenceReport& report) {
  Json doc;
  doc["alpha"] = report.alpha;
  doc["lambda"] = number(report.lambda);
  doc["gamma"] = number(report.gamma);
  doc["n_total"] = report.estimate.n_total;
  doc["covariates"] = report.covariates;
  Json coefs = Json::array();
  for (const auto& r : report.coefficients) {
    coefs.push_back(Json{{"covariate", r.name},
                         {"estimate", number(r.estimate)},
                         {"lasso", number(r.lasso)},
                         {"se", number(r.se)},
                         {"z", number(r.z)},
                         {"p_value", number(r.p_value)},
                         {"ci_lower", number(r.lower)},
                         {"ci_upper", number(r.upper)},
                         {"hazard_ratio", number(r.hazard_ratio)},
                         {"hr_lower", number(r.hr_lower)},
                         {"hr_upper", number(r.hr_upper)}});
  }
  doc["coefficients"] = std::move(coefs);
  Json contrasts = Json::array();
  for (const auto& c : report.contrasts) contrasts.push_back(contrast_to_json(c));
  doc["contrasts"] = std::move(contrasts);
  doc["warnings"] = report.warnings;

  Json theta = Json::array();
  for (Eigen::Index i = 0; i < report.estimate.theta_hat.rows(); ++i) {
    theta.push_back(vector_json(report.estimate.theta_hat.row(i).transpose()));
  }
  doc["estimate"] = Json{{"b_hat", vector_json(report.estimate.b_hat)}, {"theta_hat", std::move(theta)}};
  return doc;
}

FitArtifact fit_from_json(const Json& doc) {
  try {
    FitArtifact fit;
    fit.alpha = doc.at("alpha").get<double>();
    fit.covariates = doc.at("covariates").get<std::vector<std::string>>();
    const auto p = static_cast<Eigen::Index>(fit.covariates.size());
    const Json& est = doc.at("estimate");
    const Json& b = est.at("b_hat");
    const Json& theta = est.at("theta_hat");
    if (static_cast<Eigen::Index>(b.size()) != p || static_cast<Eigen::Index>(theta.size()) != p) {
      throw SchemaError("fit artifact dimensions disagree with the covariate list");
    }
    fit.estimate.n_total = doc.at("n_total").get<int>();
    fit.estimate.b_hat.resize(p);
    fit.estimate.theta_hat.resize(p, p);
    for (Eigen::Index i = 0; i < p; ++i) {
      fit.estimate.b_hat[i] = read_number(b[static_cast<std::size_t>(i)]);
      const Json& row = theta[static_cast<std::size_t>(i)];
      if (static_cast<Eigen::Index>(row.size()) != p) throw SchemaError("theta_hat is not square");
      for (Eigen::Index j = 0; j < p; ++j) fit.estimate.theta_hat(i, j) = read_number(row[static_cast<std::size_t>(j)]);
    }
    return fit;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed fit artifact: ") + e.what());
  }
}

FitArtifact load_fit(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open fit artifact '" + path + "'");
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("fit artifact '" + path + "' is not valid JSON: " + e.what());
  }
  return fit_from_json(doc);
}

std::vector<ContrastSpec> load_contrasts(std::istream& in, const std::vector<std::string>& covariates) {
  csv::Reader reader(in);
  const auto header = reader.next();
  if (!header) throw SchemaError("contrast file is empty");
  const auto& h = header->fields;
  const int a0_col = csv::find_column(h, "a0");
  if (a0_col < 0) throw SchemaError("contrast file has no a0 column");
  const int block_col = csv::find_column(h, "block");

  std::vector<int> target(h.size(), -1);
  for (std::size_t c = 0; c < h.size(); ++c) {
    if (static_cast<int>(c) == a0_col || static_cast<int>(c) == block_col) continue;
    const int j = csv::find_column(covariates, h[c]);
    if (j < 0) throw SchemaError("contrast column '" + h[c] + "' is not a fitted covariate");
    target[c] = j;
  }

  const auto p = static_cast<Eigen::Index>(covariates.size());
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::pair<Eigen::VectorXd, double>>> rows;
  while (auto rec = reader.next()) {
    if (rec->fields.size() != h.size()) {
      throw ValidationError("expected " + std::to_string(h.size()) + " fields, found " +
                                std::to_string(rec->fields.size()),
                            rec->line);
    }
    Eigen::VectorXd row = Eigen::VectorXd::Zero(p);
    double a0 = 0.0;
    for (std::size_t c = 0; c < h.size(); ++c) {
      if (static_cast<int>(c) == block_col) continue;
      const auto v = csv::parse_double(rec->fields[c]);
      if (!v || !std::isfinite(*v)) {
        throw ValidationError("malformed number '" + rec->fields[c] + "' in column '" + h[c] + "'", rec->line);
      }
      if (static_cast<int>(c) == a0_col) {
        a0 = *v;
      } else {
        row[target[c]] = *v;
      }
    }
    const std::string block = block_col >= 0 ? rec->fields[static_cast<std::size_t>(block_col)] : "contrast";
    auto [it, inserted] = rows.try_emplace(block);
    if (inserted) order.push_back(block);
    it->second.emplace_back(std::move(row), a0);
  }
  if (order.empty()) throw SchemaError("contrast file has no rows");

  std::vector<ContrastSpec> out;
  for (const auto& name : order) {
    const auto& r = rows[name];
    ContrastSpec spec;
    spec.label = name;
    spec.J.resize(static_cast<Eigen::Index>(r.size()), p);
    spec.a0.resize(static_cast<Eigen::Index>(r.size()));
    for (std::size_t i = 0; i < r.size(); ++i) {
      spec.J.row(static_cast<Eigen::Index>(i)) = r[i].first.transpose();
      spec.a0[static_cast<Eigen::Index>(i)] = r[i].second;
    }
    out.push_back(std::move(spec));
  }
  return out;
}

std::vector<ContrastSpec> load_contrasts(const std::string& path, const std::vector<std::string>& covariates) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open contrast file '" + path + "'");
  return load_contrasts(in, covariates);
}

Json summary_to_json(const std::vector<sim::SimulationSummary>& rows) {
  Json out = Json::array();
  for (const auto& s : rows) {
    out.push_back(Json{{"scenario", s.scenario},
                       {"beta1", s.beta1},
                       {"method", s.method},
                       {"replicates", s.replicates},
                       {"failures", s.failures},
                       {"bias", number(s.bias)},
                       {"coverage", number(s.coverage)},
                       {"model_se", number(s.model_se)},
                       {"empirical_se", number(s.empirical_se)},
                       {"unreliable", s.unreliable}});
  }
  return out;
}

void write_long_table(const std::vector<sim::SimulationSummary>& rows, std::ostream& out) {
  out << "scenario,beta1,method,metric,value\n";
  for (const auto& s : rows) {
    const std::vector<std::pair<const char*, double>> metrics = {
        {"replicates", s.replicates},     {"failures", s.failures},
        {"bias", s.bias},                 {"coverage", s.coverage},
        {"model_se", s.model_se},         {"empirical_se", s.empirical_se},
        {"unreliable", s.unreliable ? 1.0 : 0.0}};
    for (const auto& [name, value] : metrics) {
      out << csv::join({csv::escape(s.scenario), csv::format_double(s.beta1), csv::escape(s.method), name,
                        csv::format_double(value)})
          << '\n';
    }
  }
}

std::string dump_json(const Json& doc) { return doc.dump(2) + "\n"; }

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

void write_file_synced(const std::string& path, const std::string& content) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw std::runtime_error("cannot open '" + path + "' for writing");
  std::size_t done = 0;
  while (done < content.size()) {
    const ssize_t n = ::write(fd, content.data() + done, content.size() - done);
    if (n < 0) {
      ::close(fd);
      throw std::runtime_error("write to '" + path + "' failed");
    }
    done += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0) {
    ::close(fd);
    throw std::runtime_error("fsync of '" + path + "' failed");
  }
  if (::close(fd) != 0) throw std::runtime_error("close of '" + path + "' failed");
}

RunManifest::RunManifest(std::string out_dir, std::string command, Json config, std::uint64_t seed)
    : dir_(std::move(out_dir)) {
  doc_["command"] = std::move(command);
  doc_["version"] = kVersion;
  doc_["seed"] = seed;
  doc_["config"] = std::move(config);
  doc_["status"] = "running";
  doc_["started"] = utc_now();
  doc_["timings"] = Json::object();
  doc_["tuning"] = Json::object();
  doc_["warnings"] = Json::array();
  doc_["outputs"] = Json::array();
}

void RunManifest::begin() {
  std::filesystem::create_directories(dir_);
  flush();
}

void RunManifest::add_output(const std::string& name, const std::string& content) {
  write_file_synced((std::filesystem::path(dir_) / name).string(), content);
  doc_["outputs"].push_back(Json{{"file", name}, {"bytes", content.size()}, {"sha256", sha256_hex(content)}});
  flush();
}

void RunManifest::set_timing(const std::string& stage, double seconds) { doc_["timings"][stage] = seconds; }

void RunManifest::set_tuning(const std::string& key, Json value) { doc_["tuning"][key] = std::move(value); }

void RunManifest::add_warning(const std::string& w) { doc_["warnings"].push_back(w); }

void RunManifest::finish(const std::string& status) {
  doc_["status"] = status;
  doc_["finished"] = utc_now();
  flush();
}

void RunManifest::flush() {
  write_file_synced((std::filesystem::path(dir_) / "manifest.json").string(), dump_json(doc_));
}

}  // namespace dblcox
