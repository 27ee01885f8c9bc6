#include "iwvi/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace iwvi {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_M(int M, int n_batches) {
  if (M < 1) throw std::invalid_argument("M must be at least 1");
  if (n_batches < 1) throw std::invalid_argument("n_batches must be at least 1");
}

void check_dims(const EllipticalParams& q, const TargetModel& model) {
  if (q.dim() != model.dim()) throw std::invalid_argument("variational and target dimensions differ");
}

// Mean and standard error of per-batch values, in a fixed summation order.
IwEstimate summarize(const std::vector<double>& values, int M, std::uint64_t seed) {
  IwEstimate est;
  est.n_batches = static_cast<int>(values.size());
  est.M = M;
  est.seed = seed;
  double sum = 0.0;
  for (double v : values) {
    if (v == kNegInf) est.degenerate = true;
    sum += v;
  }
  const double n = static_cast<double>(values.size());
  est.value = sum / n;
  if (est.degenerate) {
    est.value = kNegInf;
    est.std_error = std::numeric_limits<double>::infinity();
    return est;
  }
  double ss = 0.0;
  for (double v : values) ss += (v - est.value) * (v - est.value);
  est.std_error = values.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  return est;
}

}  // namespace

double log_sum_exp(std::span<const double> values) {
  double m = kNegInf;
  for (double v : values) m = std::max(m, v);
  if (m == kNegInf) return kNegInf;
  if (std::isinf(m)) return m;
  double total = 0.0;
  for (double v : values) total += std::exp(v - m);
  return m + std::log(total);
}

double log_mean_exp(std::span<const double> values) {
  return log_sum_exp(values) - std::log(static_cast<double>(values.size()));
}

Eigen::VectorXd softmax(std::span<const double> values) {
  double m = kNegInf;
  for (double v : values) m = std::max(m, v);
  if (m == kNegInf) throw std::domain_error("softmax of all -inf weights");
  Eigen::VectorXd w(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) w[static_cast<Eigen::Index>(i)] = std::exp(values[i] - m);
  return w / w.sum();
}

double log_weight(const Eigen::VectorXd& z, const EllipticalParams& q, const TargetModel& model) {
  return model.log_joint(z) - log_density(z, q);
}

LogWeightBatch draw_log_weights(const EllipticalParams& q, const TargetModel& model, int M, RngStream& rng) {
  check_dims(q, model);
  LogWeightBatch batch;
  batch.z.reserve(M);
  batch.log_w.reserve(M);
  for (int m = 0; m < M; ++m) {
    DensityDraw draw = sample_with_log_density(q, rng);
    batch.log_w.push_back(model.log_joint(draw.z) - draw.log_q);
    batch.z.push_back(std::move(draw.z));
  }
  return batch;
}

IwEstimate iw_elbo(const EllipticalParams& q, const TargetModel& model, int M, int n_batches,
                   std::uint64_t seed) {
  check_M(M, n_batches);
  check_dims(q, model);
  std::vector<double> values(n_batches);
  for (int b = 0; b < n_batches; ++b) {
    RngStream rng(seed, static_cast<std::uint64_t>(b));
    const LogWeightBatch batch = draw_log_weights(q, model, M, rng);
    values[b] = log_mean_exp(batch.log_w);
  }
  return summarize(values, M, seed);
}

IwEstimate elbo(const EllipticalParams& q, const TargetModel& model, int n_batches, std::uint64_t seed) {
  check_M(1, n_batches);
  check_dims(q, model);
  std::vector<double> values(n_batches);
  for (int b = 0; b < n_batches; ++b) {
    RngStream rng(seed, static_cast<std::uint64_t>(b));
    const DensityDraw draw = sample_with_log_density(q, rng);
    values[b] = model.log_joint(draw.z) - draw.log_q;
  }
  return summarize(values, 1, seed);
}

NoiseSet make_noise_set(const RadialSpec& radial, int M, int n_tuples, std::uint64_t seed) {
  check_M(M, n_tuples);
  NoiseSet set;
  set.M = M;
  set.draws.reserve(static_cast<std::size_t>(M) * n_tuples);
  for (int i = 0; i < n_tuples; ++i) {
    RngStream rng(seed, static_cast<std::uint64_t>(i));
    for (int m = 0; m < M; ++m) set.draws.push_back(sample_noise(radial, rng));
  }
  return set;
}

double fixed_noise_iw_elbo(const EllipticalParams& q, const TargetModel& model, const NoiseSet& noise,
                           Eigen::VectorXd* grad) {
  check_dims(q, model);
  const int M = noise.M;
  const int n_tuples = noise.n_tuples();
  if (n_tuples < 1) throw std::invalid_argument("empty noise set");

  const Eigen::Index n_raw = q.flatten().size();
  if (grad) grad->setZero(n_raw);
  std::vector<double> log_w(M);
  std::vector<Eigen::VectorXd> grads(grad ? M : 0);
  Eigen::VectorXd gz;

  double total = 0.0;
  for (int i = 0; i < n_tuples; ++i) {
    const auto tuple = noise.tuple(i);
    for (int m = 0; m < M; ++m) {
      const ReparamPoint point = transform(tuple[m], q, grad != nullptr);
      if (grad) {
        log_w[m] = model.log_joint_grad(point.z, gz) - point.log_q;
        grads[m] = reparam_grad(point, tuple[m], q, gz) - log_q_reparam_grad(point, q);
      } else {
        log_w[m] = model.log_joint(point.z) - point.log_q;
      }
    }
    total += log_mean_exp(log_w);
    if (grad) {
      const Eigen::VectorXd w = softmax(log_w);
      for (int m = 0; m < M; ++m) *grad += w[m] * grads[m];
    }
  }
  if (grad) *grad /= n_tuples;
  return total / n_tuples;
}

Eigen::VectorXd iw_elbo_grad(const EllipticalParams& q, const TargetModel& model, const NoiseSet& noise) {
  Eigen::VectorXd grad;
  fixed_noise_iw_elbo(q, model, noise, &grad);
  return grad;
}

SnisEstimate snis_expect(const TestFunction& t, const EllipticalParams& q, const TargetModel& model, int M,
                         int n_batches, std::uint64_t seed) {
  check_M(M, n_batches);
  check_dims(q, model);
  Eigen::MatrixXd per_batch;
  for (int b = 0; b < n_batches; ++b) {
    RngStream rng(seed, static_cast<std::uint64_t>(b));
    const LogWeightBatch batch = draw_log_weights(q, model, M, rng);
    const Eigen::VectorXd w = softmax(batch.log_w);
    Eigen::VectorXd acc;
    for (int m = 0; m < M; ++m) {
      const Eigen::VectorXd tm = t(batch.z[m]);
      if (m == 0) {
        acc = w[0] * tm;
      } else {
        acc += w[m] * tm;
      }
    }
    if (b == 0) per_batch.resize(acc.size(), n_batches);
    per_batch.col(b) = acc;
  }
  SnisEstimate out;
  out.estimate = per_batch.rowwise().mean();
  if (n_batches > 1) {
    const Eigen::MatrixXd centered = per_batch.colwise() - out.estimate;
    out.std_error = (centered.rowwise().squaredNorm() / (n_batches - 1.0) / n_batches).cwiseSqrt();
  } else {
    out.std_error = Eigen::VectorXd::Zero(out.estimate.size());
  }
  return out;
}

std::vector<Eigen::VectorXd> sample_qM(const EllipticalParams& q, const TargetModel& model, int M,
                                       RngStream& rng) {
  check_M(M, 1);
  LogWeightBatch batch = draw_log_weights(q, model, M, rng);
  const Eigen::VectorXd w = softmax(batch.log_w);
  const double u = rng.uniform();
  int selected = M - 1;
  double cumulative = 0.0;
  for (int m = 0; m < M; ++m) {
    cumulative += w[m];
    if (u <= cumulative) {
      selected = m;
      break;
    }
  }
  std::vector<Eigen::VectorXd> out;
  out.reserve(M);
  out.push_back(std::move(batch.z[selected]));
  for (int m = 0; m < M; ++m) {
    if (m != selected) out.push_back(std::move(batch.z[m]));
  }
  return out;
}

std::vector<DensityEstimate> qm_marginal_density_grid(std::span<const double> grid, const EllipticalParams& q,
                                                      const TargetModel& model, int M, int n_inner,
                                                      std::uint64_t seed) {
  check_M(M, n_inner);
  check_dims(q, model);
  if (q.dim() != 1) throw std::invalid_argument("q_M marginal density is only supported for d = 1");

  // log sum_{m >= 2} w(z_m) for each inner replicate
  std::vector<double> rest(n_inner, kNegInf);
  if (M > 1) {
    for (int r = 0; r < n_inner; ++r) {
      RngStream rng(seed, static_cast<std::uint64_t>(r));
      rest[r] = log_sum_exp(draw_log_weights(q, model, M - 1, rng).log_w);
    }
  }
  const double log_M = std::log(static_cast<double>(M));
  std::vector<DensityEstimate> out;
  out.reserve(grid.size());
  std::vector<double> neg_log_rm(n_inner);
  Eigen::VectorXd z(1);
  for (double z1 : grid) {
    z[0] = z1;
    const double log_p = model.log_joint(z);
    const double lw1 = log_p - log_density(z, q);
    double peak = kNegInf;
    for (int r = 0; r < n_inner; ++r) {
      const double hi = std::max(lw1, rest[r]);
      const double lse = hi == kNegInf ? kNegInf : hi + std::log1p(std::exp(-std::abs(lw1 - rest[r])));
      neg_log_rm[r] = -(lse - log_M);
      peak = std::max(peak, neg_log_rm[r]);
    }
    double sum = 0.0;
    double sum_sq = 0.0;
    for (double v : neg_log_rm) {
      const double e = std::exp(v - peak);
      sum += e;
      sum_sq += e * e;
    }
    const double n = n_inner;
    const double mean = sum / n;
    const double var = n_inner > 1 ? std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0)) : 0.0;
    const double scale = std::exp(log_p + peak);
    out.push_back({scale * mean, scale * std::sqrt(var / n)});
  }
  return out;
}

DensityEstimate qm_marginal_density_1d(double z1, const EllipticalParams& q, const TargetModel& model, int M,
                                       int n_inner, std::uint64_t seed) {
  const double point[] = {z1};
  return qm_marginal_density_grid(point, q, model, M, n_inner, seed).front();
}

GapDiagnostics gap_diagnostics(const EllipticalParams& q, const TargetModel& model, int M, int n_batches,
                               std::uint64_t seed) {
  check_M(M, n_batches);
  check_dims(q, model);
  if (!model.oracle()) throw std::invalid_argument("gap diagnostics need a target with a known evidence");
  const double log_ev = model.oracle()->log_evidence;

  std::vector<double> values(n_batches);
  std::vector<double> cv_terms(n_batches);
  // single weights in the frame scaled by p(x)
  double r_sum = 0.0;
  double r_sq = 0.0;
  for (int b = 0; b < n_batches; ++b) {
    RngStream rng(seed, static_cast<std::uint64_t>(b));
    const LogWeightBatch batch = draw_log_weights(q, model, M, rng);
    values[b] = log_mean_exp(batch.log_w);
    for (double lw : batch.log_w) {
      const double r = std::exp(lw - log_ev);
      r_sum += r;
      r_sq += r * r;
    }
    cv_terms[b] = log_ev - values[b] + std::expm1(values[b] - log_ev);
  }

  GapDiagnostics out;
  out.iw = summarize(values, M, seed);
  out.kl_joint = log_ev - out.iw.value;
  out.kl_joint_se = out.iw.std_error;
  const IwEstimate cv = summarize(cv_terms, M, seed);
  out.kl_joint_cv = cv.value;
  out.kl_joint_cv_se = cv.std_error;
  const double count = static_cast<double>(n_batches) * M;
  const double r_mean = r_sum / count;
  out.var_R = count > 1 ? std::max(0.0, (r_sq - count * r_mean * r_mean) / (count - 1.0)) : 0.0;
  out.asym_const = 0.5 * out.var_R;
  return out;
}

double trapezoid(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("trapezoid: size mismatch");
  double total = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) total += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
  return total;
}

MarginalKl marginal_kl_1d(const EllipticalParams& q, const TargetModel& model, int M,
                          std::span<const double> grid, int n_inner, std::uint64_t seed) {
  if (!model.oracle()) throw std::invalid_argument("marginal KL needs a target with a known evidence");
  if (grid.size() < 3) throw std::invalid_argument("marginal KL grid needs at least three points");
  const auto qm = qm_marginal_density_grid(grid, q, model, M, n_inner, seed);
  const double log_ev = model.oracle()->log_evidence;

  std::vector<double> qd(grid.size());
  std::vector<double> pd(grid.size());
  Eigen::VectorXd z(1);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    qd[i] = qm[i].density;
    z[0] = grid[i];
    pd[i] = std::exp(model.log_joint(z) - log_ev);
  }
  MarginalKl out;
  out.qm_mass = trapezoid(grid, qd);
  if (std::abs(out.qm_mass - 1.0) > 0.02)
    throw std::runtime_error("grid does not capture q_M: mass " + std::to_string(out.qm_mass));
  const double p_mass = trapezoid(grid, pd);
  std::vector<double> integrand(grid.size(), 0.0);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double qi = qd[i] / out.qm_mass;
    const double pi = pd[i] / p_mass;
    if (qi > 0.0) integrand[i] = pi > 0.0 ? qi * std::log(qi / pi) : std::numeric_limits<double>::infinity();
  }
  out.kl = trapezoid(grid, integrand);
  return out;
}

double moment_error(const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& oracle) {
  if (estimate.rows() != oracle.rows() || estimate.cols() != oracle.cols())
    throw std::invalid_argument("moment_error: shape mismatch");
  return (estimate - oracle).norm();
}

}  // namespace iwvi
