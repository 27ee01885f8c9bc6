#pragma once

#include <optional>

#include <Eigen/Dense>

#include "iwvi/rng.hpp"

namespace iwvi {

/// ln Gamma(a) for a > 0. Throws std::domain_error otherwise.
double log_gamma(double a);

/// psi(a) = d/da ln Gamma(a), a > 0.
double digamma(double a);

/// Regularized lower incomplete gamma P(a, x). x may be +inf.
double reg_inc_gamma(double a, double x);

/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x), computed
/// without cancellation in the upper tail.
double reg_inc_gamma_upper(double a, double x);

// chi distribution with nu degrees of freedom

double chi_log_pdf(double r, double nu);
double chi_pdf(double r, double nu);
/// F_nu(r) = P(nu / 2, r^2 / 2).
double chi_cdf(double r, double nu);
/// 1 - F_nu(r).
double chi_ccdf(double r, double nu);

struct ChiCdfGrad {
  double d_r;   // the chi pdf at r
  double d_nu;  // central difference in nu
};

/// Partial derivatives of F_nu(r). The nu-derivative uses a central
/// difference with step max(1e-5, 1e-5 * nu).
ChiCdfGrad chi_cdf_grad(double r, double nu);

/// F_nu^{-1}(v) for v in (0, 1).
double chi_inv_cdf(double v, double nu);

/// chi_nu draw as sqrt(2 * Gamma(nu / 2)).
double sample_chi(double nu, RngStream& rng);

/// Uniform direction on the unit sphere in R^d (normalised Gaussian).
Eigen::VectorXd sample_sphere(int d, RngStream& rng);

/// Radial law chi_nu as a value type.
class ChiLaw {
 public:
  explicit ChiLaw(double nu);
  double nu() const { return nu_; }
  double cdf(double r) const { return chi_cdf(r, nu_); }
  double pdf(double r) const { return chi_pdf(r, nu_); }
  double inv_cdf(double v) const { return chi_inv_cdf(v, nu_); }
  double sample(RngStream& rng) const { return sample_chi(nu_, rng); }
  /// E[r] = sqrt(2) Gamma((nu + 1) / 2) / Gamma(nu / 2)
  double mean() const;

 private:
  double nu_;
};

}  // namespace iwvi
