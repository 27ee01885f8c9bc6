#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "iwvi/elliptical.hpp"
#include "iwvi/models.hpp"
#include "iwvi/rng.hpp"

namespace iwvi {

/// Number of independent batches used by estimators unless told otherwise.
inline constexpr int kDefaultBatches = 10'000;

// Log-space helpers. All are max-shifted.
double log_sum_exp(std::span<const double> values);
double log_mean_exp(std::span<const double> values);
/// Normalized weights exp(v_m) / sum exp(v). Throws if every entry is -inf.
Eigen::VectorXd softmax(std::span<const double> values);

/// A Monte Carlo estimate: mean of per-batch values and its standard error.
struct IwEstimate {
  double value = 0.0;
  double std_error = 0.0;
  int n_batches = 0;
  int M = 0;
  std::uint64_t seed = 0;
  bool degenerate = false;  // some batch had every log weight at -inf
};

/// M draws from q and their log importance weights.
struct LogWeightBatch {
  std::vector<Eigen::VectorXd> z;
  std::vector<double> log_w;
};

/// log w(z) = log p(z, x) - log q(z)
double log_weight(const Eigen::VectorXd& z, const EllipticalParams& q, const TargetModel& model);

LogWeightBatch draw_log_weights(const EllipticalParams& q, const TargetModel& model, int M, RngStream& rng);

/// IW-ELBO estimate: the average over `n_batches` independent M-tuples of
/// log((1/M) sum_m w(z_m)). Batch b draws from stream (seed, b).
IwEstimate iw_elbo(const EllipticalParams& q, const TargetModel& model, int M, int n_batches,
                   std::uint64_t seed);

/// The plain ELBO, averaging log w over single draws on the same streams.
IwEstimate elbo(const EllipticalParams& q, const TargetModel& model, int n_batches, std::uint64_t seed);

/// A frozen set of reparameterization inputs: n_tuples blocks of M draws.
struct NoiseSet {
  int M = 1;
  std::vector<NoiseDraw> draws;  // tuple-major

  int n_tuples() const { return M == 0 ? 0 : static_cast<int>(draws.size()) / M; }
  std::span<const NoiseDraw> tuple(int i) const {
    return {draws.data() + static_cast<std::ptrdiff_t>(i) * M, static_cast<std::size_t>(M)};
  }
};

/// Tuple i is drawn from stream (seed, i). For Student-T the law of v is
/// uniform whatever radial.nu is, but the realized values depend on it, so
/// build the set once and keep it fixed while nu moves.
NoiseSet make_noise_set(const RadialSpec& radial, int M, int n_tuples, std::uint64_t seed);

/// Empirical IW-ELBO over a fixed noise set. When `grad` is non-null it
/// receives the raw-parameter gradient. The result is a pure function of
/// (q, noise).
double fixed_noise_iw_elbo(const EllipticalParams& q, const TargetModel& model, const NoiseSet& noise,
                           Eigen::VectorXd* grad);

/// Gradient of the fixed-noise empirical IW-ELBO: per tuple,
/// sum_m softmax(log w)_m * d log w_m / dw, averaged over tuples.
Eigen::VectorXd iw_elbo_grad(const EllipticalParams& q, const TargetModel& model, const NoiseSet& noise);

using TestFunction = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct SnisEstimate {
  Eigen::VectorXd estimate;
  Eigen::VectorXd std_error;
};

/// Self-normalized importance sampling: per batch sum_m w_m t(z_m) / sum w,
/// averaged over batches.
SnisEstimate snis_expect(const TestFunction& t, const EllipticalParams& q, const TargetModel& model, int M,
                         int n_batches, std::uint64_t seed);

/// One draw of z_{1:M} from q_M: M candidates from q, one selected with
/// probability proportional to its weight and moved to the front; the rest
/// keep their order. Selection inverts the cumulative weights with a single
/// uniform, ties resolved toward the lower index.
std::vector<Eigen::VectorXd> sample_qM(const EllipticalParams& q, const TargetModel& model, int M,
                                       RngStream& rng);

struct DensityEstimate {
  double density = 0.0;
  double std_error = 0.0;
};

/// q_M(z1) = p(z1, x) E_{z_{2:M} ~ q}[1 / ((1/M) sum_m w(z_m))] for d = 1,
/// with the inner expectation over n_inner replicates. The replicates are
/// shared across grid points.
std::vector<DensityEstimate> qm_marginal_density_grid(std::span<const double> grid, const EllipticalParams& q,
                                                      const TargetModel& model, int M, int n_inner,
                                                      std::uint64_t seed);
DensityEstimate qm_marginal_density_1d(double z1, const EllipticalParams& q, const TargetModel& model, int M,
                                       int n_inner, std::uint64_t seed);

struct GapDiagnostics {
  IwEstimate iw;
  /// log p(x) - IW-ELBO, the joint divergence KL(q_M || p_M).
  double kl_joint = 0.0;
  double kl_joint_se = 0.0;
  /// The same divergence estimated per batch as
  /// log p(x) - log R_M + (R_M / p(x) - 1); the added term has mean zero.
  double kl_joint_cv = 0.0;
  double kl_joint_cv_se = 0.0;
  /// V[R / p(x)], from all M * n_batches single weights.
  double var_R = 0.0;
  /// V[R] / (2 p(x)^2), the limit of M * kl_joint.
  double asym_const = 0.0;
};

/// Needs model.oracle(); throws std::invalid_argument without one.
GapDiagnostics gap_diagnostics(const EllipticalParams& q, const TargetModel& model, int M, int n_batches,
                               std::uint64_t seed);

struct MarginalKl {
  double kl = 0.0;
  double qm_mass = 0.0;  // trapezoid integral of q_M before renormalizing
};

/// KL(q_M(z1) || p(z1 | x)) for d = 1 by trapezoid rule on `grid`. Throws
/// std::runtime_error when q_M integrates to more than 0.02 away from 1.
MarginalKl marginal_kl_1d(const EllipticalParams& q, const TargetModel& model, int M,
                          std::span<const double> grid, int n_inner, std::uint64_t seed);

/// ||estimate - oracle||_F
double moment_error(const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& oracle);

double trapezoid(std::span<const double> x, std::span<const double> y);

}  // namespace iwvi
