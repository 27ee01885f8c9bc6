#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "iwvi/elliptical.hpp"

namespace iwvi {

enum class Experiment { OneD, Dirichlet, Clutter, LogReg };

std::string_view experiment_name(Experiment e);
Experiment parse_experiment(std::string_view name);

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every knob of the experiment harness. Defaults that depend on the
/// experiment (repetitions, M set) are filled by parse_config.
struct ExperimentConfig {
  Experiment experiment = Experiment::OneD;
  std::vector<Family> families = {Family::Gaussian, Family::StudentT};
  std::vector<int> M_set;
  int repetitions = 1;
  std::uint64_t seed = 0;

  // variational optimization
  bool optimize = true;
  bool optimize_nu = true;
  double scale0 = 1.0;
  int n_fixed_noise = 10'000;  // fixed M-tuples for L-BFGS
  int lbfgs_max_iter = 500;
  int lbfgs_memory = 10;
  double lbfgs_grad_tol = 1e-6;

  // evaluation
  int eval_batches = 10'000;
  int eval_samples = 10'000;  // draws of R_M for the density histogram

  // dirichlet
  int K = 3;
  double alpha_shape = 10.0;

  // clutter
  int d = 2;
  int n_obs = 10;

  // logreg
  std::string dataset_path;  // empty: synthetic data
  bool standardize = true;
  bool add_bias = true;
  int synthetic_n = 100;
  int synthetic_d = 20;
  double step_min = 1e-4;
  double step_max = 1.0;
  int n_steps = 9;
  int iters = 10'000;
  std::vector<int> snapshot_at = {2'000, 10'000};
  int snapshot_batches = 10'000;
  bool adam = false;

  // oneD
  std::vector<double> mixture_weights = {0.3, 0.7};
  std::vector<double> mixture_means = {-2.0, 2.0};
  std::vector<double> mixture_sds = {0.5, 0.8};
  double candidate_mean_a = 0.0;
  double candidate_mean_b = 2.0;
  double candidate_sd = 0.9;
  double candidate_nu = 4.0;
  double grid_min = -8.0;
  double grid_max = 8.0;
  int grid_points = 161;
  int n_inner = 4'000;
  int rm_bins = 60;
};

/// Command-line values that override the config file.
struct ConfigOverrides {
  std::optional<std::string> experiment;
  std::optional<std::vector<int>> M_set;
  std::optional<std::string> family;
  std::optional<std::uint64_t> seed;
};

/// Validates a JSON object into a config. Unknown keys, wrong types, and
/// out-of-range values throw ConfigError naming the key.
ExperimentConfig parse_config(const nlohmann::json& doc, const ConfigOverrides& overrides = {});
ExperimentConfig load_config(const std::string& path, const ConfigOverrides& overrides = {});

/// The effective configuration, every field present.
nlohmann::json to_json(const ExperimentConfig& config);

/// "1,5,20" -> {1, 5, 20}
std::vector<int> parse_int_list(std::string_view text);

}  // namespace iwvi
