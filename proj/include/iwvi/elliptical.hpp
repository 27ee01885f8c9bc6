#pragma once

#include <optional>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "iwvi/rng.hpp"

namespace iwvi {

enum class Family { Gaussian, StudentT };

std::string_view family_name(Family family);
Family parse_family(std::string_view name);

/// Degrees of freedom are kept above this floor so that the covariance of a
/// Student-T variational distribution exists.
inline constexpr double kNuFloor = 2.0;
inline constexpr double kNuInit = 10.0;
/// Ceiling on nu. Beyond it the law is a Gaussian to double precision and
/// the chi quantile computations lose accuracy; the raw parameter saturates.
inline constexpr double kNuMax = 1e8;

/// Radial law of a spherical distribution in R^dim. Gaussian: chi_dim.
/// Student-T: sqrt(nu) t / s with t ~ chi_dim and s ~ chi_nu independent.
struct RadialSpec {
  Family kind = Family::Gaussian;
  double nu = kNuInit;  // ignored for Gaussian
  int dim = 1;

  static RadialSpec gaussian(int dim) { return {Family::Gaussian, kNuInit, dim}; }
  static RadialSpec student_t(double nu, int dim) { return {Family::StudentT, nu, dim}; }
};

/// log g(a), where the spherical density is q(eps) = g(||eps||^2). Closed
/// forms for both families, so a = 0 is regular.
double log_density_generator(double a, const RadialSpec& radial);
double density_generator(double a, const RadialSpec& radial);

/// Location, upper-triangular scale factor A (with A^T A = Sigma) and radial
/// law of an elliptical distribution.
///
/// The raw (unconstrained) parameter vector is laid out as
///   [ mu (d) | strictly-upper entries of A, row-major (d(d-1)/2) |
///     log diag(A) (d) | log(nu - 2) (Student-T only) ].
/// The raw vector is what is stored, so flatten(unflatten(raw)) == raw
/// bitwise.
class EllipticalParams {
 public:
  /// From a location and an upper-triangular factor with positive diagonal.
  EllipticalParams(Eigen::VectorXd mu, const Eigen::MatrixXd& scale_factor, RadialSpec radial);

  static EllipticalParams unflatten(const Eigen::VectorXd& raw, Family family, int dim);
  static int raw_size(Family family, int dim);
  /// Offsets into the raw vector.
  static int offdiag_offset(int dim) { return dim; }
  static int logdiag_offset(int dim) { return dim + dim * (dim - 1) / 2; }
  static int nu_offset(int dim) { return 2 * dim + dim * (dim - 1) / 2; }

  const Eigen::VectorXd& flatten() const { return raw_; }
  int dim() const { return radial_.dim; }
  Family family() const { return radial_.kind; }
  const RadialSpec& radial() const { return radial_; }
  double nu() const { return radial_.nu; }
  /// d nu / d(raw nu entry): nu - 2, or 0 once the ceiling is reached.
  double dnu_draw() const;
  const Eigen::VectorXd& mu() const { return mu_; }
  const Eigen::MatrixXd& scale_factor() const { return a_; }
  /// Sigma = A^T A (the covariance is E[r^2] / d times this).
  Eigen::MatrixXd sigma() const { return a_.transpose() * a_; }
  double log_det_scale() const;  // sum of log diag(A) = log |Sigma|^{1/2}

  bool operator==(const EllipticalParams& other) const;

 private:
  EllipticalParams() = default;
  void rebuild_from_raw();

  Eigen::VectorXd raw_;
  Eigen::VectorXd mu_;
  Eigen::MatrixXd a_;
  RadialSpec radial_;
};

/// One reparameterization input. `u` is a unit direction; `t` a chi_d draw;
/// `v` a uniform (Student-T only) whose inverse chi_nu CDF gives the
/// denominator of the radial ratio.
struct NoiseDraw {
  Eigen::VectorXd u;
  double t = 0.0;
  std::optional<double> v;
};

/// Draws (u, t) and, for Student-T, samples s ~ chi_nu directly and sets
/// v = F_nu(s), so that (s, v) has the law of (F_nu^{-1}(v), v).
NoiseDraw sample_noise(const RadialSpec& radial, RngStream& rng);

double log_density(const Eigen::VectorXd& z, const EllipticalParams& params);

/// z = A^T eps + mu
Eigen::VectorXd reparam_gaussian(const Eigen::VectorXd& eps, const EllipticalParams& params);
/// z = (sqrt(nu) t / F_nu^{-1}(v)) A^T u + mu
Eigen::VectorXd reparam_student_t(const NoiseDraw& noise, const EllipticalParams& params);
/// Family dispatch; Gaussian uses eps = t u.
Eigen::VectorXd reparameterize(const NoiseDraw& noise, const EllipticalParams& params);

/// z ~ q
Eigen::VectorXd sample(const EllipticalParams& params, RngStream& rng);

struct DensityDraw {
  Eigen::VectorXd z;
  double log_q = 0.0;
};

/// The same draw as sample(), with log q(z) taken from the radial variable
/// instead of solved back from z. Solving back fails once the scale drops
/// below the rounding error of mu.
DensityDraw sample_with_log_density(const EllipticalParams& params, RngStream& rng);

/// Everything the estimators need about one transformed draw. With
/// z = c A^T u + mu, `scale` is c and `dscale_dnu` its derivative in nu
/// through the implicit inverse CDF.
struct ReparamPoint {
  Eigen::VectorXd z;
  Eigen::VectorXd direction;  // A^T u
  double scale = 0.0;
  double dscale_dnu = 0.0;
  double radial_denominator = 0.0;  // F_nu^{-1}(v); Student-T only
  double log_q = 0.0;               // log q(z), from the noise directly
};

/// Transforms `noise`. Gradient quantities are filled when `with_grad`.
ReparamPoint transform(const NoiseDraw& noise, const EllipticalParams& params, bool with_grad);

/// Gradient of upstream^T T(noise; w) with respect to the raw parameters.
Eigen::VectorXd reparam_grad(const NoiseDraw& noise, const EllipticalParams& params,
                             const Eigen::VectorXd& upstream);
Eigen::VectorXd reparam_grad(const ReparamPoint& point, const NoiseDraw& noise,
                             const EllipticalParams& params, const Eigen::VectorXd& upstream);

/// Total raw-parameter gradient of log q(T(noise; w); w).
Eigen::VectorXd log_q_reparam_grad(const ReparamPoint& point, const EllipticalParams& params);

}  // namespace iwvi
