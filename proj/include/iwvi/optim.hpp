#pragma once

#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "iwvi/elliptical.hpp"
#include "iwvi/estimators.hpp"
#include "iwvi/models.hpp"

namespace iwvi {

/// Objective returning its value and writing the gradient into `grad`.
using ValueGrad = std::function<double(const Eigen::VectorXd& w, Eigen::VectorXd& grad)>;

struct TraceRecord {
  int iteration = 0;
  double objective = 0.0;
  double grad_norm = 0.0;
  std::int64_t wall_ms = 0;
  double step_size = 0.0;
  bool skipped = false;  // SGD: non-finite gradient, no step taken
};

struct LbfgsOptions {
  int memory = 10;
  int max_iter = 500;
  double grad_tol = 1e-6;
  double armijo_c1 = 1e-4;
  double backtrack = 0.5;
  int max_backtracks = 40;
};

enum class StopReason { GradientTolerance, MaxIterations, LineSearchFailed };
std::string_view stop_reason_name(StopReason reason);

struct LbfgsResult {
  Eigen::VectorXd w;
  double objective = 0.0;
  std::vector<TraceRecord> trace;  // accepted iterations, starting at 0
  StopReason reason = StopReason::MaxIterations;
};

/// Maximizes `objective` with two-loop-recursion L-BFGS and Armijo
/// backtracking on the negated objective. A failed line search ends the
/// run and is reported in `reason`. Throws if the objective at w0 is not
/// finite.
LbfgsResult lbfgs_maximize(const ValueGrad& objective, Eigen::VectorXd w0, const LbfgsOptions& opts = {});

/// The IW-ELBO over a frozen set of n_tuples x M reparameterization inputs,
/// as a deterministic function of the raw parameter vector.
class FixedNoiseObjective {
 public:
  FixedNoiseObjective(TargetPtr model, Family family, NoiseSet noise, bool optimize_nu = true);
  FixedNoiseObjective(TargetPtr model, Family family, int M, int n_tuples, std::uint64_t seed,
                      bool optimize_nu = true);

  double operator()(const Eigen::VectorXd& w, Eigen::VectorXd& grad) const;
  double value(const Eigen::VectorXd& w) const;

  int dim() const { return model_->dim(); }
  Family family() const { return family_; }
  int M() const { return noise_.M; }
  const NoiseSet& noise() const { return noise_; }

 private:
  TargetPtr model_;
  Family family_;
  NoiseSet noise_;
  bool optimize_nu_;
};

/// mu = 0, A = scale0 * I, and nu = 10 for Student-T.
Eigen::VectorXd init_params(Family family, int dim, double scale0 = 1.0);

/// One stochastic gradient: draws fresh noise from `rng`, returns the
/// objective value on that draw and writes the gradient.
using StochasticGradient = std::function<double(const Eigen::VectorXd& w, RngStream& rng, Eigen::VectorXd& grad)>;
/// Independent estimate of the objective at `w`, used for snapshots.
using SnapshotEvaluator = std::function<IwEstimate(const Eigen::VectorXd& w, int iteration)>;

struct SgdOptions {
  double step_size = 1e-2;
  int iters = 10'000;
  std::vector<int> snapshot_at = {2'000, 10'000};
  bool adam = false;  // plain SGD unless set
};

struct Snapshot {
  int iteration = 0;
  IwEstimate estimate;
};

struct SgdResult {
  Eigen::VectorXd w;
  std::vector<TraceRecord> trace;
  std::vector<Snapshot> snapshots;
  int skipped_steps = 0;
};

/// Gradient ascent w <- w + step * g with a fresh draw per step (step k
/// uses stream (seed, k)). Steps with non-finite gradients are skipped and
/// flagged.
SgdResult sgd_maximize(const StochasticGradient& gradient, Eigen::VectorXd w0, const SgdOptions& opts,
                       std::uint64_t seed, const SnapshotEvaluator& snapshot = {});

/// Single-M-tuple IW-ELBO gradient sampler for SGD.
StochasticGradient iw_elbo_sampler(TargetPtr model, Family family, int M, bool optimize_nu = true);

struct SweepRow {
  Family family = Family::Gaussian;
  int M = 1;
  double step_size = 0.0;
  std::uint64_t seed = 0;
  int iteration = 0;
  double value = 0.0;  // -inf when the run diverged
  double std_error = 0.0;
  bool diverged = false;
};

struct SweepConfig {
  std::vector<Family> families = {Family::Gaussian, Family::StudentT};
  std::vector<int> M_set = {1, 5, 20, 100};
  std::vector<double> steps;
  std::vector<std::uint64_t> seeds = {0};
  int iters = 10'000;
  std::vector<int> snapshot_at = {2'000, 10'000};
  int snapshot_batches = kDefaultBatches;
  double scale0 = 1.0;
  bool optimize_nu = true;
  bool adam = false;
};

/// `count` step sizes geometrically spaced from `lo` to `hi`.
std::vector<double> geometric_grid(double lo, double hi, int count);

/// Runs SGD for every (family, M, step, seed) cell and records the snapshot
/// IW-ELBOs. Rows come out in that nesting order, snapshots innermost.
std::vector<SweepRow> step_size_sweep(TargetPtr model, const SweepConfig& config);

}  // namespace iwvi
