#include "iwvi/elliptical.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "iwvi/specfn.hpp"

namespace iwvi {

namespace {

void check_dim(const Eigen::VectorXd& z, const EllipticalParams& params) {
  if (z.size() != params.dim()) throw std::invalid_argument("dimension mismatch with variational parameters");
}

// d/dnu and d/da of the Student-T log density generator
struct StudentGeneratorPartials {
  double d_nu;
  double d_a;
};

StudentGeneratorPartials student_generator_partials(double a, double nu, int d) {
  const double half = 0.5 * (nu + d);
  return {0.5 * digamma(half) - 0.5 * digamma(0.5 * nu) - d / (2.0 * nu) - 0.5 * std::log1p(a / nu) +
              half * a / (nu * (nu + a)),
          -half / (nu + a)};
}

}  // namespace

std::string_view family_name(Family family) {
  return family == Family::Gaussian ? "gaussian" : "student_t";
}

Family parse_family(std::string_view name) {
  if (name == "gaussian") return Family::Gaussian;
  if (name == "student_t") return Family::StudentT;
  throw std::invalid_argument("unknown family '" + std::string(name) + "'");
}

double log_density_generator(double a, const RadialSpec& radial) {
  if (!(a >= 0.0)) throw std::domain_error("density generator argument must be nonnegative");
  const double d = radial.dim;
  if (radial.kind == Family::Gaussian) {
    return -0.5 * d * std::log(2.0 * std::numbers::pi) - 0.5 * a;
  }
  const double nu = radial.nu;
  return log_gamma(0.5 * (nu + d)) - log_gamma(0.5 * nu) - 0.5 * d * std::log(nu * std::numbers::pi) -
         0.5 * (nu + d) * std::log1p(a / nu);
}

double density_generator(double a, const RadialSpec& radial) {
  return std::exp(log_density_generator(a, radial));
}

// EllipticalParams

EllipticalParams::EllipticalParams(Eigen::VectorXd mu, const Eigen::MatrixXd& scale_factor,
                                   RadialSpec radial) {
  const int d = static_cast<int>(mu.size());
  if (d < 1) throw std::invalid_argument("dimension must be at least 1");
  if (radial.dim != d) throw std::invalid_argument("radial spec dimension does not match mu");
  if (scale_factor.rows() != d || scale_factor.cols() != d)
    throw std::invalid_argument("scale factor must be d x d");
  if (radial.kind == Family::StudentT && !(radial.nu > kNuFloor && radial.nu <= kNuMax))
    throw std::domain_error("Student-T degrees of freedom must lie in (2, 1e8]");

  raw_.resize(raw_size(radial.kind, d));
  raw_.head(d) = mu;
  int k = offdiag_offset(d);
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j) raw_[k++] = scale_factor(i, j);
  }
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < i; ++j) {
      if (scale_factor(i, j) != 0.0) throw std::invalid_argument("scale factor must be upper triangular");
    }
    if (!(scale_factor(i, i) > 0.0)) throw std::invalid_argument("scale factor diagonal must be positive");
    raw_[logdiag_offset(d) + i] = std::log(scale_factor(i, i));
  }
  if (radial.kind == Family::StudentT) raw_[nu_offset(d)] = std::log(radial.nu - kNuFloor);
  radial_ = radial;
  rebuild_from_raw();
}

EllipticalParams EllipticalParams::unflatten(const Eigen::VectorXd& raw, Family family, int dim) {
  if (dim < 1) throw std::invalid_argument("dimension must be at least 1");
  if (raw.size() != raw_size(family, dim)) throw std::invalid_argument("raw parameter vector has wrong length");
  EllipticalParams params;
  params.raw_ = raw;
  params.radial_.kind = family;
  params.radial_.dim = dim;
  params.rebuild_from_raw();
  return params;
}

int EllipticalParams::raw_size(Family family, int dim) {
  return nu_offset(dim) + (family == Family::StudentT ? 1 : 0);
}

void EllipticalParams::rebuild_from_raw() {
  const int d = radial_.dim;
  mu_ = raw_.head(d);
  a_ = Eigen::MatrixXd::Zero(d, d);
  int k = offdiag_offset(d);
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j) a_(i, j) = raw_[k++];
  }
  for (int i = 0; i < d; ++i) a_(i, i) = std::exp(raw_[logdiag_offset(d) + i]);
  if (!raw_.allFinite() || !a_.diagonal().allFinite() || (a_.diagonal().array() <= 0.0).any())
    throw std::invalid_argument("raw parameters give a non-finite or singular scale factor");
  if (radial_.kind == Family::StudentT) {
    radial_.nu = kNuFloor + std::exp(std::min(raw_[nu_offset(d)], std::log(kNuMax - kNuFloor)));
  } else {
    radial_.nu = kNuInit;
  }
}

double EllipticalParams::dnu_draw() const {
  if (radial_.kind != Family::StudentT) return 0.0;
  return raw_[nu_offset(dim())] < std::log(kNuMax - kNuFloor) ? radial_.nu - kNuFloor : 0.0;
}

double EllipticalParams::log_det_scale() const {
  return raw_.segment(logdiag_offset(dim()), dim()).sum();
}

bool EllipticalParams::operator==(const EllipticalParams& other) const {
  return radial_.kind == other.radial_.kind && radial_.dim == other.radial_.dim && raw_ == other.raw_;
}

// sampling and densities

NoiseDraw sample_noise(const RadialSpec& radial, RngStream& rng) {
  NoiseDraw noise;
  noise.u = sample_sphere(radial.dim, rng);
  noise.t = sample_chi(radial.dim, rng);
  if (radial.kind == Family::StudentT) {
    // s ~ chi_nu from the direct sampler, then v = F_nu(s). s can land where
    // the CDF rounds to 0 or 1; redraw.
    double v = 0.0;
    int attempts = 0;
    do {
      if (++attempts > 64) throw std::runtime_error("could not draw an interior radial quantile");
      v = chi_cdf(sample_chi(radial.nu, rng), radial.nu);
    } while (!(v > 0.0 && v < 1.0));
    noise.v = v;
  }
  return noise;
}

double log_density(const Eigen::VectorXd& z, const EllipticalParams& params) {
  check_dim(z, params);
  const Eigen::VectorXd eps =
      params.scale_factor().transpose().triangularView<Eigen::Lower>().solve(z - params.mu());
  return log_density_generator(eps.squaredNorm(), params.radial()) - params.log_det_scale();
}

Eigen::VectorXd reparam_gaussian(const Eigen::VectorXd& eps, const EllipticalParams& params) {
  check_dim(eps, params);
  return params.scale_factor().transpose() * eps + params.mu();
}

Eigen::VectorXd reparam_student_t(const NoiseDraw& noise, const EllipticalParams& params) {
  if (params.family() != Family::StudentT) throw std::invalid_argument("parameters are not Student-T");
  return transform(noise, params, false).z;
}

Eigen::VectorXd reparameterize(const NoiseDraw& noise, const EllipticalParams& params) {
  if (params.family() == Family::Gaussian) return reparam_gaussian(noise.t * noise.u, params);
  return reparam_student_t(noise, params);
}

DensityDraw sample_with_log_density(const EllipticalParams& params, RngStream& rng) {
  DensityDraw out;
  double radius = 0.0;
  if (params.family() == Family::Gaussian) {
    const NoiseDraw noise = sample_noise(params.radial(), rng);
    out.z = reparameterize(noise, params);
    radius = noise.t;
  } else {
    // same law as the inverse-CDF map, without the quantile solve
    const Eigen::VectorXd u = sample_sphere(params.dim(), rng);
    const double t = sample_chi(params.dim(), rng);
    const double s = sample_chi(params.nu(), rng);
    radius = std::sqrt(params.nu()) * t / s;
    out.z = radius * (params.scale_factor().transpose() * u) + params.mu();
  }
  out.log_q = log_density_generator(radius * radius, params.radial()) - params.log_det_scale();
  return out;
}

Eigen::VectorXd sample(const EllipticalParams& params, RngStream& rng) {
  return sample_with_log_density(params, rng).z;
}

ReparamPoint transform(const NoiseDraw& noise, const EllipticalParams& params, bool with_grad) {
  check_dim(noise.u, params);
  ReparamPoint point;
  point.direction = params.scale_factor().transpose() * noise.u;

  if (params.family() == Family::Gaussian) {
    point.scale = noise.t;
  } else if (noise.t == 0.0) {
    point.scale = 0.0;
  } else {
    if (!noise.v) throw std::invalid_argument("Student-T noise needs a uniform coordinate");
    const double nu = params.nu();
    const double r = chi_inv_cdf(*noise.v, nu);
    point.radial_denominator = r;
    const double sqrt_nu = std::sqrt(nu);
    point.scale = sqrt_nu * noise.t / r;
    if (with_grad) {
      const ChiCdfGrad g = chi_cdf_grad(r, nu);
      const double dr_dnu = -g.d_nu / g.d_r;
      point.dscale_dnu = noise.t / (2.0 * sqrt_nu * r) - point.scale / r * dr_dnu;
    }
  }
  point.z = point.scale * point.direction + params.mu();
  // ||A^{-T}(z - mu)||^2 = c^2 since ||u|| = 1
  point.log_q = log_density_generator(point.scale * point.scale, params.radial()) - params.log_det_scale();
  return point;
}

Eigen::VectorXd reparam_grad(const ReparamPoint& point, const NoiseDraw& noise, const EllipticalParams& params,
                             const Eigen::VectorXd& upstream) {
  const int d = params.dim();
  if (upstream.size() != d) throw std::invalid_argument("upstream gradient has wrong dimension");
  const Eigen::MatrixXd& a = params.scale_factor();
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(EllipticalParams::raw_size(params.family(), d));
  grad.head(d) = upstream;
  int k = EllipticalParams::offdiag_offset(d);
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j) grad[k++] = point.scale * noise.u[i] * upstream[j];
  }
  const int ld = EllipticalParams::logdiag_offset(d);
  for (int i = 0; i < d; ++i) grad[ld + i] = point.scale * noise.u[i] * upstream[i] * a(i, i);
  if (params.family() == Family::StudentT) {
    grad[EllipticalParams::nu_offset(d)] =
        upstream.dot(point.direction) * point.dscale_dnu * params.dnu_draw();
  }
  return grad;
}

Eigen::VectorXd reparam_grad(const NoiseDraw& noise, const EllipticalParams& params,
                             const Eigen::VectorXd& upstream) {
  return reparam_grad(transform(noise, params, true), noise, params, upstream);
}

Eigen::VectorXd log_q_reparam_grad(const ReparamPoint& point, const EllipticalParams& params) {
  const int d = params.dim();
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(EllipticalParams::raw_size(params.family(), d));
  grad.segment(EllipticalParams::logdiag_offset(d), d).setConstant(-1.0);
  if (params.family() == Family::StudentT) {
    const double a = point.scale * point.scale;
    const auto partial = student_generator_partials(a, params.nu(), d);
    const double d_nu = partial.d_nu + partial.d_a * 2.0 * point.scale * point.dscale_dnu;
    grad[EllipticalParams::nu_offset(d)] = d_nu * params.dnu_draw();
  }
  return grad;
}

}  // namespace iwvi
