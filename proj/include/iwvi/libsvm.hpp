#pragma once

#include <filesystem>
#include <istream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "iwvi/models.hpp"
#include "iwvi/rng.hpp"

namespace iwvi {

/// A binary-labelled sparse dataset (labels in {-1, +1}).
struct SparseDataset {
  SparseRows features;
  Eigen::VectorXd labels;
  std::vector<std::string> warnings;
};

class LibsvmParseError : public std::runtime_error {
 public:
  LibsvmParseError(int line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

/// Parses "<label> <idx>:<val> ..." lines with 1-based indices. Labels that
/// are already {-1, +1} are kept; otherwise exactly two distinct labels are
/// required and the larger maps to +1. Indices may appear in any order;
/// a repeated index keeps the last value and records a warning. The column
/// count is the largest index seen unless `dim` is given.
SparseDataset parse_libsvm(std::istream& in, std::optional<int> dim = std::nullopt);
/// Throws std::filesystem::filesystem_error if the file cannot be opened.
SparseDataset load_libsvm(const std::filesystem::path& path, std::optional<int> dim = std::nullopt);

/// Centres and scales each column to unit variance (constant columns are
/// centred only). The result is stored densely in sparse form.
SparseRows standardize_columns(const SparseRows& features);
/// Appends a column of ones.
SparseRows append_bias_column(const SparseRows& features);

/// Gaussian features, weights w ~ N(0, 1), labels ~ Bernoulli(sigma(x^T w)).
SparseDataset synthetic_logistic(int n, int d, RngStream& rng);

}  // namespace iwvi
