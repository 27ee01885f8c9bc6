#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "iwvi/rng.hpp"

namespace iwvi {

/// Exact-inference quantities for a target. Moments live in the space in
/// which test integrals are defined: z itself for most models, the simplex
/// variable theta for the Dirichlet target.
struct Oracle {
  double log_evidence = 0.0;
  std::optional<Eigen::VectorXd> posterior_mean;
  std::optional<Eigen::MatrixXd> posterior_second_moment;
  std::optional<Eigen::MatrixXd> posterior_cov;
};

/// An unnormalized target p(z, x) over unconstrained z in R^dim.
/// Implementations are immutable after construction and safe to share.
class TargetModel {
 public:
  virtual ~TargetModel() = default;

  virtual int dim() const = 0;
  virtual double log_joint(const Eigen::VectorXd& z) const = 0;
  /// log p(z, x), with its z-gradient written into `grad`.
  virtual double log_joint_grad(const Eigen::VectorXd& z, Eigen::VectorXd& grad) const = 0;

  Eigen::VectorXd grad_log_joint(const Eigen::VectorXd& z) const {
    Eigen::VectorXd g;
    log_joint_grad(z, g);
    return g;
  }
  const std::optional<Oracle>& oracle() const { return oracle_; }

 protected:
  std::optional<Oracle> oracle_;
};

using TargetPtr = std::shared_ptr<const TargetModel>;

/// exp(log_scale) * N(z; mean, diag(sd^2)). Normalized when log_scale = 0.
class GaussianTarget final : public TargetModel {
 public:
  GaussianTarget(Eigen::VectorXd mean, Eigen::VectorXd sd, double log_scale = 0.0);
  int dim() const override { return static_cast<int>(mean_.size()); }
  double log_joint(const Eigen::VectorXd& z) const override;
  double log_joint_grad(const Eigen::VectorXd& z, Eigen::VectorXd& grad) const override;

 private:
  Eigen::VectorXd mean_;
  Eigen::VectorXd sd_;
  double log_scale_;
};

/// Normalized one-dimensional Gaussian mixture.
class MixtureTarget1D final : public TargetModel {
 public:
  MixtureTarget1D(std::vector<double> weights, std::vector<double> means, std::vector<double> sds);
  int dim() const override { return 1; }
  double log_joint(const Eigen::VectorXd& z) const override;
  double log_joint_grad(const Eigen::VectorXd& z, Eigen::VectorXd& grad) const override;

 private:
  std::vector<double> log_weights_;
  std::vector<double> means_;
  std::vector<double> sds_;
};

/// Adds a constant to another target's log joint (and its evidence).
class ShiftedTarget final : public TargetModel {
 public:
  ShiftedTarget(TargetPtr base, double shift);
  int dim() const override { return base_->dim(); }
  double log_joint(const Eigen::VectorXd& z) const override { return base_->log_joint(z) + shift_; }
  double log_joint_grad(const Eigen::VectorXd& z, Eigen::VectorXd& grad) const override {
    return base_->log_joint_grad(z, grad) + shift_;
  }

 private:
  TargetPtr base_;
  double shift_;
};

// Dirichlet on the simplex through stick-breaking

struct StickBreak {
  Eigen::VectorXd theta;
  double log_jacobian = 0.0;
};

/// Stan's stick-breaking map R^{K-1} -> interior of the K-simplex, with
/// break fractions v_k = logistic(z_k - log(K - k)) (1-based k), so z = 0 is
/// the barycentre.
StickBreak stick_break(const Eigen::VectorXd& z);
/// Inverse of stick_break. Throws std::domain_error on boundary points.
Eigen::VectorXd inv_stick_break(const Eigen::VectorXd& theta);

/// log B(alpha) = sum log Gamma(alpha_k) - log Gamma(sum alpha_k)
double log_multivariate_beta(const Eigen::VectorXd& alpha);

class DirichletTarget final : public TargetModel {
 public:
  explicit DirichletTarget(Eigen::VectorXd alpha);
  int dim() const override { return static_cast<int>(alpha_.size()) - 1; }
  double log_joint(const Eigen::VectorXd& z) const override;
  double log_joint_grad(const Eigen::VectorXd& z, Eigen::VectorXd& grad) const override;
  const Eigen::VectorXd& alpha() const { return alpha_; }

 private:
  Eigen::VectorXd alpha_;
  Eigen::VectorXd tail_sums_;  // sum_{j > k} alpha_j
};

std::shared_ptr<DirichletTarget> dirichlet_target(const Eigen::VectorXd& alpha);
Eigen::VectorXd sample_dirichlet(const Eigen::VectorXd& alpha, RngStream& rng);
/// alpha_k ~ Gamma(shape, 1)
Eigen::VectorXd random_dirichlet_alpha(int k, double shape, RngStream& rng);

// Clutter model: z ~ N(0, 100 I); x_i | z ~ 0.25 N(z, I) + 0.75 N(0, 10 I)

struct ClutterConstants {
  static constexpr double prior_var = 100.0;
  static constexpr double inlier_prob = 0.25;
  static constexpr double noise_var_in = 1.0;
  static constexpr double outlier_var = 10.0;
  static constexpr int default_n_max = 20;
};

/// Exact posterior by enumerating all 2^n inlier/outlier assignments.
/// Throws std::length_error when n exceeds n_max.
Oracle clutter_exact(const std::vector<Eigen::VectorXd>& obs, int dim,
                     int n_max = ClutterConstants::default_n_max);

class ClutterTarget final : public TargetModel {
 public:
  ClutterTarget(std::vector<Eigen::VectorXd> obs, int dim, int n_max = ClutterConstants::default_n_max);
  int dim() const override { return dim_; }
  double log_joint(const Eigen::VectorXd& z) const override;
  double log_joint_grad(const Eigen::VectorXd& z, Eigen::VectorXd& grad) const override;
  const std::vector<Eigen::VectorXd>& observations() const { return obs_; }

 private:
  std::vector<Eigen::VectorXd> obs_;
  std::vector<double> log_outlier_terms_;  // log 0.75 + log N(x_i; 0, 10 I)
  int dim_;
};

std::shared_ptr<ClutterTarget> clutter_target(const std::vector<Eigen::VectorXd>& obs, int dim);

/// z* ~ prior, then n observations from the likelihood at z*.
std::vector<Eigen::VectorXd> generate_clutter_observations(int dim, int n, RngStream& rng);

// Bayesian logistic regression with independent Cauchy(0, 10) priors

using SparseRows = Eigen::SparseMatrix<double, Eigen::RowMajor>;

class LogRegTarget final : public TargetModel {
 public:
  static constexpr double kCauchyScale = 10.0;

  LogRegTarget(SparseRows features, Eigen::VectorXd labels);
  int dim() const override { return static_cast<int>(features_.cols()); }
  double log_joint(const Eigen::VectorXd& z) const override;
  double log_joint_grad(const Eigen::VectorXd& z, Eigen::VectorXd& grad) const override;
  int num_observations() const { return static_cast<int>(features_.rows()); }

 private:
  SparseRows features_;
  Eigen::VectorXd labels_;
};

std::shared_ptr<LogRegTarget> logreg_target(const SparseRows& features, const Eigen::VectorXd& labels);

/// log(1 + e^x) without overflow.
double softplus(double x);
/// log sigma(a) = -softplus(-a)
inline double log_sigmoid(double a) { return -softplus(-a); }

}  // namespace iwvi
