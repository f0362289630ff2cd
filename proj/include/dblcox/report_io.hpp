#pragma once

#include "dblcox/debias.hpp"
#include "dblcox/pipeline.hpp"
#include "dblcox/simulation.hpp"

#include "json.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace dblcox {

inline constexpr const char* kVersion = "0.1.0";

using Json = nlohmann::ordered_json;

/// One row per coefficient.
void write_report_csv(const InferenceReport& report, std::ostream& out);

/// Full report; the "estimate" member carries b, Theta and N so contrasts can be run later.
Json report_to_json(const InferenceReport& report);

/// A fit reloaded from report JSON.
struct FitArtifact {
  DebiasedEstimate estimate;
  std::vector<std::string> covariates;
  double alpha = 0.05;
};

FitArtifact fit_from_json(const Json& doc);
FitArtifact load_fit(const std::string& path);

/**
 * Contrast file: a header naming covariates, an `a0` column and an optional
 * `block` column. Rows sharing a block form one contrast, in first-seen
 * order; covariates absent from the header get zero loadings.
 */
std::vector<ContrastSpec> load_contrasts(std::istream& in, const std::vector<std::string>& covariates);
std::vector<ContrastSpec> load_contrasts(const std::string& path, const std::vector<std::string>& covariates);

Json contrast_to_json(const ContrastResult& r);

Json summary_to_json(const std::vector<sim::SimulationSummary>& rows);

/// Long table keyed by (scenario, beta1, method, metric).
void write_long_table(const std::vector<sim::SimulationSummary>& rows, std::ostream& out);

/// JSON text with NaN/inf mapped to null and a trailing newline.
std::string dump_json(const Json& doc);

/// Hex SHA-256 of a byte string.
std::string sha256_hex(const std::string& bytes);

/// Write, flush and fsync; throws std::runtime_error on I/O failure.
void write_file_synced(const std::string& path, const std::string& content);

/**
 * Run manifest. `begin` writes it before any output; each `add_output`
 * writes a file and records its checksum; `finish` rewrites the manifest.
 */
class RunManifest {
 public:
  RunManifest(std::string out_dir, std::string command, Json config, std::uint64_t seed);

  void begin();
  void add_output(const std::string& name, const std::string& content);
  void set_timing(const std::string& stage, double seconds);
  void set_tuning(const std::string& key, Json value);
  void add_warning(const std::string& w);
  void finish(const std::string& status);

  const Json& document() const { return doc_; }

 private:
  void flush();

  std::string dir_;
  Json doc_;
};

}  // namespace dblcox
