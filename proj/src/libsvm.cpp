#include "iwvi/libsvm.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace iwvi {

namespace {

double parse_double(const std::string& token, int line, const char* what) {
  try {
    std::size_t used = 0;
    const double value = std::stod(token, &used);
    if (used != token.size()) throw std::invalid_argument(token);
    return value;
  } catch (const std::exception&) {
    throw LibsvmParseError(line, std::string("malformed ") + what + " '" + token + "'");
  }
}

int parse_index(const std::string& token, int line) {
  int value = 0;
  const auto* begin = token.data();
  const auto* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || value < 1)
    throw LibsvmParseError(line, "malformed feature index '" + token + "'");
  return value;
}

}  // namespace

SparseDataset parse_libsvm(std::istream& in, std::optional<int> dim) {
  SparseDataset out;
  std::vector<double> raw_labels;
  std::vector<std::map<int, double>> rows;
  int max_index = 0;

  std::string text;
  int line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (const auto hash = text.find('#'); hash != std::string::npos) text.erase(hash);
    std::istringstream tokens(text);
    std::string token;
    if (!(tokens >> token)) continue;  // blank line
    raw_labels.push_back(parse_double(token, line_no, "label"));
    std::map<int, double> row;
    while (tokens >> token) {
      const auto colon = token.find(':');
      if (colon == std::string::npos) throw LibsvmParseError(line_no, "expected <index>:<value>, got '" + token + "'");
      const int index = parse_index(token.substr(0, colon), line_no);
      const double value = parse_double(token.substr(colon + 1), line_no, "feature value");
      if (row.contains(index)) {
        out.warnings.push_back("line " + std::to_string(line_no) + ": duplicate index " + std::to_string(index) +
                               ", keeping the last value");
      }
      row[index] = value;
      max_index = std::max(max_index, index);
    }
    rows.push_back(std::move(row));
  }

  const int cols = dim.value_or(max_index);
  if (max_index > cols)
    throw LibsvmParseError(line_no, "feature index " + std::to_string(max_index) + " exceeds dimension " +
                                        std::to_string(cols));

  const std::set<double> distinct(raw_labels.begin(), raw_labels.end());
  const bool signed_labels = std::all_of(distinct.begin(), distinct.end(), [](double y) { return y == 1.0 || y == -1.0; });
  if (!signed_labels && distinct.size() != 2)
    throw LibsvmParseError(line_no, "labels are not binary (" + std::to_string(distinct.size()) + " distinct values)");
  const double positive = signed_labels ? 1.0 : *distinct.rbegin();

  out.labels.resize(static_cast<Eigen::Index>(raw_labels.size()));
  for (std::size_t i = 0; i < raw_labels.size(); ++i) out.labels[i] = raw_labels[i] == positive ? 1.0 : -1.0;

  std::vector<Eigen::Triplet<double>> triplets;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (const auto& [index, value] : rows[i]) triplets.emplace_back(static_cast<int>(i), index - 1, value);
  }
  out.features.resize(static_cast<Eigen::Index>(rows.size()), cols);
  out.features.setFromTriplets(triplets.begin(), triplets.end());
  out.features.makeCompressed();
  return out;
}

SparseDataset load_libsvm(const std::filesystem::path& path, std::optional<int> dim) {
  std::ifstream in(path);
  if (!in) {
    throw std::filesystem::filesystem_error("cannot open dataset", path,
                                            std::make_error_code(std::errc::no_such_file_or_directory));
  }
  return parse_libsvm(in, dim);
}

SparseRows standardize_columns(const SparseRows& features) {
  Eigen::MatrixXd dense = Eigen::MatrixXd(features);
  const double n = static_cast<double>(dense.rows());
  for (Eigen::Index j = 0; j < dense.cols(); ++j) {
    auto col = dense.col(j);
    const double mean = col.sum() / n;
    col.array() -= mean;
    const double sd = std::sqrt(col.squaredNorm() / n);
    if (sd > 0.0) col /= sd;
  }
  return dense.sparseView();
}

SparseRows append_bias_column(const SparseRows& features) {
  std::vector<Eigen::Triplet<double>> triplets;
  for (Eigen::Index i = 0; i < features.outerSize(); ++i) {
    for (SparseRows::InnerIterator it(features, i); it; ++it) triplets.emplace_back(it.row(), it.col(), it.value());
    triplets.emplace_back(i, features.cols(), 1.0);
  }
  SparseRows out(features.rows(), features.cols() + 1);
  out.setFromTriplets(triplets.begin(), triplets.end());
  out.makeCompressed();
  return out;
}

SparseDataset synthetic_logistic(int n, int d, RngStream& rng) {
  if (n < 0 || d < 1) throw std::invalid_argument("synthetic dataset needs n >= 0 and d >= 1");
  Eigen::VectorXd w(d);
  for (int j = 0; j < d; ++j) w[j] = rng.normal();
  Eigen::MatrixXd x(n, d);
  SparseDataset out;
  out.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) x(i, j) = rng.normal();
    const double p = 1.0 / (1.0 + std::exp(-x.row(i).dot(w)));
    out.labels[i] = rng.uniform() < p ? 1.0 : -1.0;
  }
  out.features = x.sparseView();
  out.features.makeCompressed();
  return out;
}

}  // namespace iwvi
