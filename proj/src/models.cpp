#include "iwvi/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "iwvi/specfn.hpp"

namespace iwvi {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)

double log_add_exp(double a, double b) {
  const double m = std::max(a, b);
  if (m == -std::numeric_limits<double>::infinity()) return m;
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

void check_dim(const Eigen::VectorXd& z, int dim) {
  if (z.size() != dim) throw std::invalid_argument("z has wrong dimension for this target");
}

}  // namespace

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

// GaussianTarget

GaussianTarget::GaussianTarget(Eigen::VectorXd mean, Eigen::VectorXd sd, double log_scale)
    : mean_(std::move(mean)), sd_(std::move(sd)), log_scale_(log_scale) {
  if (mean_.size() < 1 || mean_.size() != sd_.size()) throw std::invalid_argument("mean/sd size mismatch");
  if ((sd_.array() <= 0.0).any()) throw std::invalid_argument("standard deviations must be positive");
  Oracle oracle;
  oracle.log_evidence = log_scale_;
  oracle.posterior_mean = mean_;
  const Eigen::MatrixXd cov = sd_.array().square().matrix().asDiagonal();
  oracle.posterior_cov = cov;
  oracle.posterior_second_moment = cov + mean_ * mean_.transpose();
  oracle_ = std::move(oracle);
}

double GaussianTarget::log_joint(const Eigen::VectorXd& z) const {
  check_dim(z, dim());
  const Eigen::ArrayXd scaled = (z - mean_).array() / sd_.array();
  return log_scale_ - 0.5 * dim() * kLog2Pi - sd_.array().log().sum() - 0.5 * scaled.square().sum();
}

double GaussianTarget::log_joint_grad(const Eigen::VectorXd& z, Eigen::VectorXd& grad) const {
  grad = -((z - mean_).array() / sd_.array().square()).matrix();
  return log_joint(z);
}

// MixtureTarget1D

MixtureTarget1D::MixtureTarget1D(std::vector<double> weights, std::vector<double> means, std::vector<double> sds)
    : means_(std::move(means)), sds_(std::move(sds)) {
  if (weights.empty() || weights.size() != means_.size() || weights.size() != sds_.size())
    throw std::invalid_argument("mixture component lists must be non-empty and equal length");
  double total = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw std::invalid_argument("mixture weights must be positive");
    total += w;
  }
  double mean = 0.0;
  double second = 0.0;
  for (std::size_t c = 0; c < weights.size(); ++c) {
    if (!(sds_[c] > 0.0)) throw std::invalid_argument("mixture sds must be positive");
    const double w = weights[c] / total;
    log_weights_.push_back(std::log(w));
    mean += w * means_[c];
    second += w * (sds_[c] * sds_[c] + means_[c] * means_[c]);
  }
  Oracle oracle;
  oracle.log_evidence = 0.0;
  oracle.posterior_mean = Eigen::VectorXd::Constant(1, mean);
  oracle.posterior_second_moment = Eigen::MatrixXd::Constant(1, 1, second);
  oracle.posterior_cov = Eigen::MatrixXd::Constant(1, 1, second - mean * mean);
  oracle_ = std::move(oracle);
}

double MixtureTarget1D::log_joint(const Eigen::VectorXd& z) const {
  Eigen::VectorXd g;
  return log_joint_grad(z, g);
}

double MixtureTarget1D::log_joint_grad(const Eigen::VectorXd& z, Eigen::VectorXd& grad) const {
  check_dim(z, 1);
  const std::size_t n = means_.size();
  std::vector<double> terms(n);
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < n; ++c) {
    const double s = (z[0] - means_[c]) / sds_[c];
    terms[c] = log_weights_[c] - 0.5 * kLog2Pi - std::log(sds_[c]) - 0.5 * s * s;
    m = std::max(m, terms[c]);
  }
  double total = 0.0;
  double slope = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    const double e = std::exp(terms[c] - m);
    total += e;
    slope += e * (means_[c] - z[0]) / (sds_[c] * sds_[c]);
  }
  grad.resize(1);
  grad[0] = slope / total;
  return m + std::log(total);
}

// ShiftedTarget

ShiftedTarget::ShiftedTarget(TargetPtr base, double shift) : base_(std::move(base)), shift_(shift) {
  if (!base_) throw std::invalid_argument("null base target");
  if (base_->oracle()) {
    Oracle oracle = *base_->oracle();
    oracle.log_evidence += shift_;
    oracle_ = std::move(oracle);
  }
}

// Stick-breaking

StickBreak stick_break(const Eigen::VectorXd& z) {
  const int k_total = static_cast<int>(z.size()) + 1;
  StickBreak out;
  out.theta.resize(k_total);
  double log_stick = 0.0;
  for (int k = 0; k < k_total - 1; ++k) {
    const double x = z[k] - std::log(static_cast<double>(k_total - k - 1));
    const double log_v = -softplus(-x);
    const double log_1mv = -softplus(x);
    out.theta[k] = std::exp(log_stick + log_v);
    out.log_jacobian += log_v + log_1mv + log_stick;
    log_stick += log_1mv;
  }
  out.theta[k_total - 1] = std::exp(log_stick);
  return out;
}

Eigen::VectorXd inv_stick_break(const Eigen::VectorXd& theta) {
  const int k_total = static_cast<int>(theta.size());
  if (k_total < 2) throw std::invalid_argument("simplex needs at least two components");
  if ((theta.array() <= 0.0).any()) throw std::domain_error("simplex point must be strictly interior");
  // suffix sums avoid computing the remaining stick as 1 - (prefix sum)
  Eigen::VectorXd tail(k_total + 1);
  tail[k_total] = 0.0;
  for (int k = k_total - 1; k >= 0; --k) tail[k] = tail[k + 1] + theta[k];
  Eigen::VectorXd z(k_total - 1);
  for (int k = 0; k < k_total - 1; ++k) {
    z[k] = std::log(theta[k]) - std::log(tail[k + 1]) + std::log(static_cast<double>(k_total - k - 1));
  }
  return z;
}

double log_multivariate_beta(const Eigen::VectorXd& alpha) {
  double total = 0.0;
  double sum = 0.0;
  for (double a : alpha) {
    total += log_gamma(a);
    sum += a;
  }
  return total - log_gamma(sum);
}

// DirichletTarget

DirichletTarget::DirichletTarget(Eigen::VectorXd alpha) : alpha_(std::move(alpha)) {
  const int k_total = static_cast<int>(alpha_.size());
  if (k_total < 2) throw std::invalid_argument("Dirichlet needs at least two components");
  if ((alpha_.array() <= 0.0).any()) throw std::domain_error("Dirichlet parameters must be positive");
  tail_sums_.resize(k_total);
  double acc = 0.0;
  for (int k = k_total - 1; k >= 0; --k) {
    tail_sums_[k] = acc;
    acc += alpha_[k];
  }
  const double a0 = alpha_.sum();
  const Eigen::VectorXd mean = alpha_ / a0;
  const Eigen::MatrixXd cov = (Eigen::MatrixXd(mean.asDiagonal()) - mean * mean.transpose()) / (a0 + 1.0);
  Oracle oracle;
  oracle.log_evidence = log_multivariate_beta(alpha_);
  oracle.posterior_mean = mean;
  oracle.posterior_cov = cov;
  oracle.posterior_second_moment = cov + mean * mean.transpose();
  oracle_ = std::move(oracle);
}

double DirichletTarget::log_joint(const Eigen::VectorXd& z) const {
  Eigen::VectorXd g;
  return log_joint_grad(z, g);
}

double DirichletTarget::log_joint_grad(const Eigen::VectorXd& z, Eigen::VectorXd& grad) const {
  check_dim(z, dim());
  // With the Jacobian folded in, the log joint collapses to
  //   sum_k alpha_k log v_k + (sum_{j>k} alpha_j) log(1 - v_k).
  const int k_total = static_cast<int>(alpha_.size());
  grad.resize(k_total - 1);
  double value = 0.0;
  for (int k = 0; k < k_total - 1; ++k) {
    const double x = z[k] - std::log(static_cast<double>(k_total - k - 1));
    const double log_v = -softplus(-x);
    const double log_1mv = -softplus(x);
    value += alpha_[k] * log_v + tail_sums_[k] * log_1mv;
    grad[k] = alpha_[k] * std::exp(log_1mv) - tail_sums_[k] * std::exp(log_v);
  }
  return value;
}

std::shared_ptr<DirichletTarget> dirichlet_target(const Eigen::VectorXd& alpha) {
  return std::make_shared<DirichletTarget>(alpha);
}

Eigen::VectorXd sample_dirichlet(const Eigen::VectorXd& alpha, RngStream& rng) {
  Eigen::VectorXd g(alpha.size());
  for (Eigen::Index k = 0; k < alpha.size(); ++k) g[k] = rng.gamma(alpha[k]);
  return g / g.sum();
}

Eigen::VectorXd random_dirichlet_alpha(int k, double shape, RngStream& rng) {
  Eigen::VectorXd alpha(k);
  for (int i = 0; i < k; ++i) alpha[i] = rng.gamma(shape);
  return alpha;
}

// Clutter

namespace {

double log_outlier_term(const Eigen::VectorXd& x) {
  const double d = static_cast<double>(x.size());
  return std::log(1.0 - ClutterConstants::inlier_prob) -
         0.5 * d * (kLog2Pi + std::log(ClutterConstants::outlier_var)) -
         0.5 * x.squaredNorm() / ClutterConstants::outlier_var;
}

void check_clutter(const std::vector<Eigen::VectorXd>& obs, int dim, int n_max) {
  if (dim < 1) throw std::invalid_argument("clutter dimension must be at least 1");
  if (static_cast<int>(obs.size()) > n_max)
    throw std::length_error("clutter enumeration budget exceeded: n = " + std::to_string(obs.size()) +
                            " > n_max = " + std::to_string(n_max));
  for (const auto& x : obs) {
    if (x.size() != dim) throw std::invalid_argument("observation has wrong dimension");
  }
}

}  // namespace

Oracle clutter_exact(const std::vector<Eigen::VectorXd>& obs, int dim, int n_max) {
  check_clutter(obs, dim, n_max);
  const int n = static_cast<int>(obs.size());
  const std::uint64_t n_components = std::uint64_t{1} << n;
  const double log_in = std::log(ClutterConstants::inlier_prob);
  const double prior_prec = 1.0 / ClutterConstants::prior_var;

  std::vector<double> out_terms(n);
  for (int i = 0; i < n; ++i) out_terms[i] = log_outlier_term(obs[i]);

  std::vector<double> log_w(n_components);
  std::vector<double> precision(n_components);
  Eigen::MatrixXd means(dim, static_cast<Eigen::Index>(n_components));

  Eigen::VectorXd sum(dim);
  Eigen::VectorXd sum_sq(dim);
  for (std::uint64_t mask = 0; mask < n_components; ++mask) {
    sum.setZero();
    sum_sq.setZero();
    int n_in = 0;
    double lw = 0.0;
    for (int i = 0; i < n; ++i) {
      if (mask >> i & 1U) {
        ++n_in;
        sum += obs[i];
        sum_sq += obs[i].array().square().matrix();
      } else {
        lw += out_terms[i];
      }
    }
    // inlier likelihoods are unit-variance normals around z
    const double lambda = prior_prec + n_in / ClutterConstants::noise_var_in;
    lw += n_in * log_in;
    for (int j = 0; j < dim; ++j) {
      lw += -0.5 * n_in * kLog2Pi - 0.5 * std::log(ClutterConstants::prior_var) - 0.5 * std::log(lambda) -
            0.5 * (sum_sq[j] - sum[j] * sum[j] / lambda);
    }
    log_w[mask] = lw;
    precision[mask] = lambda;
    means.col(static_cast<Eigen::Index>(mask)) = sum / lambda;
  }

  const double max_w = *std::max_element(log_w.begin(), log_w.end());
  double total = 0.0;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
  Eigen::MatrixXd second = Eigen::MatrixXd::Zero(dim, dim);
  for (std::uint64_t c = 0; c < n_components; ++c) {
    const double w = std::exp(log_w[c] - max_w);
    total += w;
    const auto m = means.col(static_cast<Eigen::Index>(c));
    mean += w * m;
    second += w * (m * m.transpose());
    second.diagonal().array() += w / precision[c];
  }
  Oracle oracle;
  oracle.log_evidence = max_w + std::log(total);
  mean /= total;
  second /= total;
  oracle.posterior_mean = mean;
  oracle.posterior_second_moment = second;
  oracle.posterior_cov = second - mean * mean.transpose();
  return oracle;
}

ClutterTarget::ClutterTarget(std::vector<Eigen::VectorXd> obs, int dim, int n_max)
    : obs_(std::move(obs)), dim_(dim) {
  check_clutter(obs_, dim_, n_max);
  for (const auto& x : obs_) log_outlier_terms_.push_back(log_outlier_term(x));
  oracle_ = clutter_exact(obs_, dim_, n_max);
}

namespace {

double sq_dist(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < a.size(); ++j) {
    const double diff = a[j] - b[j];
    s += diff * diff;
  }
  return s;
}

}  // namespace

double ClutterTarget::log_joint(const Eigen::VectorXd& z) const {
  check_dim(z, dim_);
  const double d = dim_;
  const double log_in_const = std::log(ClutterConstants::inlier_prob) - 0.5 * d * kLog2Pi;
  double value = -0.5 * d * (kLog2Pi + std::log(ClutterConstants::prior_var)) -
                 0.5 * z.squaredNorm() / ClutterConstants::prior_var;
  for (std::size_t i = 0; i < obs_.size(); ++i)
    value += log_add_exp(log_in_const - 0.5 * sq_dist(obs_[i], z), log_outlier_terms_[i]);
  return value;
}

double ClutterTarget::log_joint_grad(const Eigen::VectorXd& z, Eigen::VectorXd& grad) const {
  check_dim(z, dim_);
  const double d = dim_;
  const double log_in_const = std::log(ClutterConstants::inlier_prob) - 0.5 * d * kLog2Pi;
  double value = -0.5 * d * (kLog2Pi + std::log(ClutterConstants::prior_var)) -
                 0.5 * z.squaredNorm() / ClutterConstants::prior_var;
  grad = -z / ClutterConstants::prior_var;
  for (std::size_t i = 0; i < obs_.size(); ++i) {
    const double in = log_in_const - 0.5 * sq_dist(obs_[i], z);
    const double both = log_add_exp(in, log_outlier_terms_[i]);
    value += both;
    const double resp = std::exp(in - both);
    for (Eigen::Index j = 0; j < z.size(); ++j) grad[j] += resp * (obs_[i][j] - z[j]);
  }
  return value;
}

std::shared_ptr<ClutterTarget> clutter_target(const std::vector<Eigen::VectorXd>& obs, int dim) {
  return std::make_shared<ClutterTarget>(obs, dim);
}

std::vector<Eigen::VectorXd> generate_clutter_observations(int dim, int n, RngStream& rng) {
  Eigen::VectorXd z_star(dim);
  for (int j = 0; j < dim; ++j) z_star[j] = std::sqrt(ClutterConstants::prior_var) * rng.normal();
  std::vector<Eigen::VectorXd> obs;
  obs.reserve(n);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd x(dim);
    if (rng.uniform() < ClutterConstants::inlier_prob) {
      for (int j = 0; j < dim; ++j) x[j] = z_star[j] + std::sqrt(ClutterConstants::noise_var_in) * rng.normal();
    } else {
      for (int j = 0; j < dim; ++j) x[j] = std::sqrt(ClutterConstants::outlier_var) * rng.normal();
    }
    obs.push_back(std::move(x));
  }
  return obs;
}

// Logistic regression

LogRegTarget::LogRegTarget(SparseRows features, Eigen::VectorXd labels)
    : features_(std::move(features)), labels_(std::move(labels)) {
  if (features_.rows() != labels_.size()) throw std::invalid_argument("features and labels disagree in length");
  if (features_.cols() < 1) throw std::invalid_argument("logistic regression needs at least one feature");
  for (double y : labels_) {
    if (y != 1.0 && y != -1.0) throw std::invalid_argument("labels must be +1 or -1");
  }
  features_.makeCompressed();
}

double LogRegTarget::log_joint(const Eigen::VectorXd& z) const {
  check_dim(z, dim());
  const Eigen::VectorXd margins = features_ * z;
  double value = 0.0;
  for (Eigen::Index i = 0; i < margins.size(); ++i) value += log_sigmoid(labels_[i] * margins[i]);
  const double log_norm = std::log(kCauchyScale * std::numbers::pi);
  for (double zj : z) value -= log_norm + std::log1p((zj / kCauchyScale) * (zj / kCauchyScale));
  return value;
}

double LogRegTarget::log_joint_grad(const Eigen::VectorXd& z, Eigen::VectorXd& grad) const {
  check_dim(z, dim());
  const Eigen::VectorXd margins = features_ * z;
  Eigen::VectorXd coef(margins.size());
  double value = 0.0;
  for (Eigen::Index i = 0; i < margins.size(); ++i) {
    const double a = labels_[i] * margins[i];
    value += log_sigmoid(a);
    coef[i] = labels_[i] * std::exp(log_sigmoid(-a));
  }
  grad = features_.transpose() * coef;
  const double log_norm = std::log(kCauchyScale * std::numbers::pi);
  const double s2 = kCauchyScale * kCauchyScale;
  for (Eigen::Index j = 0; j < z.size(); ++j) {
    value -= log_norm + std::log1p(z[j] * z[j] / s2);
    grad[j] -= 2.0 * z[j] / (s2 + z[j] * z[j]);
  }
  return value;
}

std::shared_ptr<LogRegTarget> logreg_target(const SparseRows& features, const Eigen::VectorXd& labels) {
  return std::make_shared<LogRegTarget>(features, labels);
}

}  // namespace iwvi
