#include "iwvi/specfn.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/detail/igamma_large.hpp>

namespace iwvi {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

void require_positive(double a, const char* what) {
  if (!(a > 0.0)) throw std::domain_error(std::string(what) + " must be positive");
}

void check_incomplete_args(double a, double x) {
  require_positive(a, "shape");
  if (!(x >= 0.0)) throw std::domain_error("incomplete gamma argument must be nonnegative");
}

// For x > 1000 Boost evaluates P and Q by a large-x series even when x is
// within a few standard deviations of a, where it needs O(sqrt(a)) terms.
// There we call its uniform (Temme) expansion directly, in the same zone
// where Boost itself would choose it for smaller x. Returns the smaller
// tail: P(a, x) when x < a, Q(a, x) otherwise.
bool in_temme_zone(double a, double x) {
  if (!(a > 200.0 && x > 1000.0)) return false;
  const double sigma = (x - a) / a;
  return 20.0 / a > sigma * sigma;
}

double temme_smaller_tail(double a, double x) {
  using Tag = boost::integral_constant<int, 53>;
  return boost::math::detail::igamma_temme_large(a, x, boost::math::policies::policy<>(),
                                                  static_cast<const Tag*>(nullptr));
}

// Above this shape the library inverse slows down by two orders of magnitude,
// while Wilson-Hilferty is already accurate to several digits.
constexpr double kLargeShape = 500.0;

// Inverse of P(a, .) (or Q(a, .) when `upper`) at probability p, for large a:
// Wilson-Hilferty start, then Newton on whichever tail is being inverted.
// Returns NaN if the iteration does not settle.
double gamma_inv_large_shape(double a, double p, bool upper) {
  const double z = (upper ? 1.0 : -1.0) * std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
  const double c = 1.0 / (9.0 * a);
  double x = a * std::pow(1.0 - c + z * std::sqrt(c), 3);
  for (int it = 0; it < 20; ++it) {
    const double f = upper ? p - reg_inc_gamma_upper(a, x) : reg_inc_gamma(a, x) - p;
    const double dx = f / boost::math::gamma_p_derivative(a, x);
    if (!std::isfinite(dx)) break;
    x -= dx;
    if (std::abs(dx) <= 4.0 * kEps * x) return x;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

double log_gamma(double a) {
  require_positive(a, "log_gamma argument");
  return std::lgamma(a);
}

double digamma(double a) {
  require_positive(a, "digamma argument");
  return boost::math::digamma(a);
}

double reg_inc_gamma(double a, double x) {
  check_incomplete_args(a, x);
  if (x == 0.0) return 0.0;
  if (std::isinf(x)) return 1.0;
  if (in_temme_zone(a, x)) return x < a ? temme_smaller_tail(a, x) : 1.0 - temme_smaller_tail(a, x);
  return boost::math::gamma_p(a, x);
}

double reg_inc_gamma_upper(double a, double x) {
  check_incomplete_args(a, x);
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  if (in_temme_zone(a, x)) return x < a ? 1.0 - temme_smaller_tail(a, x) : temme_smaller_tail(a, x);
  return boost::math::gamma_q(a, x);
}

double chi_log_pdf(double r, double nu) {
  require_positive(nu, "degrees of freedom");
  if (r < 0.0) throw std::domain_error("chi pdf: r must be nonnegative");
  if (r == 0.0) {
    if (nu > 1.0) return -std::numeric_limits<double>::infinity();
    if (nu < 1.0) return std::numeric_limits<double>::infinity();
  }
  return (1.0 - 0.5 * nu) * std::numbers::ln2 - log_gamma(0.5 * nu) + (nu - 1.0) * std::log(r) -
         0.5 * r * r;
}

double chi_pdf(double r, double nu) { return std::exp(chi_log_pdf(r, nu)); }

double chi_cdf(double r, double nu) {
  require_positive(nu, "degrees of freedom");
  if (!(r >= 0.0)) throw std::domain_error("chi cdf: r must be nonnegative");
  return reg_inc_gamma(0.5 * nu, 0.5 * r * r);
}

double chi_ccdf(double r, double nu) {
  require_positive(nu, "degrees of freedom");
  if (!(r >= 0.0)) throw std::domain_error("chi cdf: r must be nonnegative");
  return reg_inc_gamma_upper(0.5 * nu, 0.5 * r * r);
}

ChiCdfGrad chi_cdf_grad(double r, double nu) {
  require_positive(nu, "degrees of freedom");
  if (!(r >= 0.0)) throw std::domain_error("chi cdf: r must be nonnegative");
  if (r == 0.0) {
    if (nu <= 1.0) throw std::domain_error("chi pdf is not finite at r = 0 for nu <= 1");
    return {0.0, 0.0};
  }
  const double h = std::max(1e-5, 1e-5 * nu);
  // Differencing the smaller tail keeps the relative error down.
  double d_nu;
  if (chi_cdf(r, nu) <= 0.5) {
    d_nu = (chi_cdf(r, nu + h) - chi_cdf(r, nu - h)) / (2.0 * h);
  } else {
    d_nu = -(chi_ccdf(r, nu + h) - chi_ccdf(r, nu - h)) / (2.0 * h);
  }
  return {chi_pdf(r, nu), d_nu};
}

double chi_inv_cdf(double v, double nu) {
  require_positive(nu, "degrees of freedom");
  if (!(v > 0.0 && v < 1.0)) throw std::domain_error("chi inverse cdf: v must lie in (0, 1)");
  const double a = 0.5 * nu;
  const bool upper = v > 0.5;
  // the complement is exact for v > 1/2
  const double p = upper ? 1.0 - v : v;
  double x = std::numeric_limits<double>::quiet_NaN();
  if (a > kLargeShape) x = gamma_inv_large_shape(a, p, upper);
  if (!std::isfinite(x)) x = upper ? boost::math::gamma_q_inv(a, p) : boost::math::gamma_p_inv(a, p);
  return std::sqrt(2.0 * x);
}

double sample_chi(double nu, RngStream& rng) {
  require_positive(nu, "degrees of freedom");
  return std::sqrt(2.0 * rng.gamma(0.5 * nu));
}

Eigen::VectorXd sample_sphere(int d, RngStream& rng) {
  if (d < 1) throw std::domain_error("sphere dimension must be at least 1");
  Eigen::VectorXd u(d);
  double norm = 0.0;
  do {
    for (int i = 0; i < d; ++i) u[i] = rng.normal();
    norm = u.norm();
  } while (norm == 0.0);
  return u / norm;
}

ChiLaw::ChiLaw(double nu) : nu_(nu) { require_positive(nu, "degrees of freedom"); }

double ChiLaw::mean() const {
  return std::numbers::sqrt2 * std::exp(log_gamma(0.5 * (nu_ + 1.0)) - log_gamma(0.5 * nu_));
}

}  // namespace iwvi
