#pragma once

#include <filesystem>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "iwvi/config.hpp"

namespace iwvi {

/// One metric value from one experiment cell.
struct ResultRow {
  std::string experiment;
  std::string family;
  int M = 0;
  int repetition = 0;
  std::string metric;
  double value = 0.0;
  double std_error = 0.0;
  std::string extra;  // semicolon-separated key=value pairs
};

/// The configured dataset file does not exist.
class DatasetMissing : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kCsvHeader = "experiment,family,M,repetition,metric,value,stderr,extra";

/// Shortest decimal form that round-trips; "inf", "-inf" and "nan" otherwise.
std::string format_double(double x);
/// RFC 4180: fields containing a comma, quote, CR or LF are quoted and
/// embedded quotes doubled.
std::string csv_field(const std::string& field);
void write_csv(std::ostream& out, const std::vector<ResultRow>& rows);

std::vector<ResultRow> run_oneD(const ExperimentConfig& config);
std::vector<ResultRow> run_dirichlet(const ExperimentConfig& config);
std::vector<ResultRow> run_clutter(const ExperimentConfig& config);
std::vector<ResultRow> run_logreg(const ExperimentConfig& config);
std::vector<ResultRow> run_experiment(const ExperimentConfig& config);

struct RunOutput {
  std::filesystem::path config_path;
  std::filesystem::path csv_path;
  std::filesystem::path manifest_path;
  std::size_t n_rows = 0;
  double wall_seconds = 0.0;
};

/// Runs the experiment and writes config.json, results.csv and
/// manifest.json into `out_dir`, creating it if needed. Nothing is
/// written elsewhere.
RunOutput run_to_directory(const ExperimentConfig& config, const std::filesystem::path& out_dir);

std::string library_version();

}  // namespace iwvi
