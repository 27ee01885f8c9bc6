#include "iwvi/optim.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

namespace iwvi {

namespace {

using Clock = std::chrono::steady_clock;

std::int64_t elapsed_ms(Clock::time_point start) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start).count();
}

struct CurvaturePair {
  Eigen::VectorXd s;
  Eigen::VectorXd y;
  double rho;
};

// -H g for the minimization problem, H the L-BFGS inverse Hessian estimate.
Eigen::VectorXd two_loop_direction(const Eigen::VectorXd& g, const std::deque<CurvaturePair>& history) {
  Eigen::VectorXd q = g;
  std::vector<double> alpha(history.size());
  for (std::size_t i = history.size(); i-- > 0;) {
    alpha[i] = history[i].rho * history[i].s.dot(q);
    q -= alpha[i] * history[i].y;
  }
  if (!history.empty()) {
    const auto& last = history.back();
    q *= last.s.dot(last.y) / last.y.squaredNorm();
  }
  for (std::size_t i = 0; i < history.size(); ++i) {
    const double beta = history[i].rho * history[i].y.dot(q);
    q += (alpha[i] - beta) * history[i].s;
  }
  return -q;
}

}  // namespace

std::string_view stop_reason_name(StopReason reason) {
  switch (reason) {
    case StopReason::GradientTolerance:
      return "gradient_tolerance";
    case StopReason::MaxIterations:
      return "max_iterations";
    case StopReason::LineSearchFailed:
      return "line_search_failed";
  }
  return "unknown";
}

LbfgsResult lbfgs_maximize(const ValueGrad& objective, Eigen::VectorXd w0, const LbfgsOptions& opts) {
  if (opts.memory < 0) throw std::invalid_argument("L-BFGS memory must be nonnegative");
  const auto start = Clock::now();

  // minimize f = -objective
  Eigen::VectorXd x = std::move(w0);
  Eigen::VectorXd g;
  double f = -objective(x, g);
  g = -g;
  if (!std::isfinite(f) || !g.allFinite()) throw std::domain_error("objective is not finite at the starting point");

  LbfgsResult result;
  result.trace.push_back({0, -f, g.norm(), elapsed_ms(start), 0.0, false});

  std::deque<CurvaturePair> history;
  Eigen::VectorXd x_new;
  Eigen::VectorXd g_new;
  result.reason = StopReason::MaxIterations;
  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    if (g.norm() <= opts.grad_tol) {
      result.reason = StopReason::GradientTolerance;
      break;
    }
    Eigen::VectorXd d = history.empty() ? Eigen::VectorXd(-g) : two_loop_direction(g, history);
    double slope = g.dot(d);
    if (!(slope < 0.0)) {
      history.clear();
      d = -g;
      slope = -g.squaredNorm();
    }
    if (history.empty()) {
      // unit first step would be scale-blind; cap its length at 1
      const double len = d.norm();
      if (len > 1.0) {
        d /= len;
        slope /= len;
      }
    }

    double step = 1.0;
    bool accepted = false;
    double f_new = 0.0;
    for (int bt = 0; bt <= opts.max_backtracks; ++bt) {
      x_new = x + step * d;
      try {
        f_new = -objective(x_new, g_new);
      } catch (const std::invalid_argument&) {
        f_new = std::numeric_limits<double>::infinity();  // outside the parameter domain
      } catch (const std::domain_error&) {
        f_new = std::numeric_limits<double>::infinity();
      }
      if (std::isfinite(f_new) && f_new <= f + opts.armijo_c1 * step * slope && g_new.allFinite()) {
        accepted = true;
        break;
      }
      step *= opts.backtrack;
    }
    if (!accepted) {
      result.reason = StopReason::LineSearchFailed;
      break;
    }
    g_new = -g_new;

    if (opts.memory > 0) {
      CurvaturePair pair{x_new - x, g_new - g, 0.0};
      const double sy = pair.s.dot(pair.y);
      if (sy > 1e-12 * pair.s.norm() * pair.y.norm() && sy > 0.0) {
        pair.rho = 1.0 / sy;
        history.push_back(std::move(pair));
        if (static_cast<int>(history.size()) > opts.memory) history.pop_front();
      }
    }
    x.swap(x_new);
    g.swap(g_new);
    f = f_new;
    result.trace.push_back({iter, -f, g.norm(), elapsed_ms(start), step, false});
  }
  result.w = std::move(x);
  result.objective = -f;
  return result;
}

// FixedNoiseObjective

FixedNoiseObjective::FixedNoiseObjective(TargetPtr model, Family family, NoiseSet noise, bool optimize_nu)
    : model_(std::move(model)), family_(family), noise_(std::move(noise)), optimize_nu_(optimize_nu) {
  if (!model_) throw std::invalid_argument("null target model");
  if (noise_.n_tuples() < 1) throw std::invalid_argument("empty noise set");
  if (noise_.draws.front().u.size() != model_->dim()) throw std::invalid_argument("noise dimension mismatch");
  if (family_ == Family::StudentT && !noise_.draws.front().v)
    throw std::invalid_argument("Student-T objective needs Student-T noise");
}

FixedNoiseObjective::FixedNoiseObjective(TargetPtr model, Family family, int M, int n_tuples,
                                         std::uint64_t seed, bool optimize_nu)
    : FixedNoiseObjective(model, family,
                          make_noise_set(family == Family::Gaussian ? RadialSpec::gaussian(model->dim())
                                                                    : RadialSpec::student_t(kNuInit, model->dim()),
                                         M, n_tuples, seed),
                          optimize_nu) {}

double FixedNoiseObjective::operator()(const Eigen::VectorXd& w, Eigen::VectorXd& grad) const {
  const EllipticalParams q = EllipticalParams::unflatten(w, family_, dim());
  const double value = fixed_noise_iw_elbo(q, *model_, noise_, &grad);
  if (family_ == Family::StudentT && !optimize_nu_) grad[EllipticalParams::nu_offset(dim())] = 0.0;
  return value;
}

double FixedNoiseObjective::value(const Eigen::VectorXd& w) const {
  return fixed_noise_iw_elbo(EllipticalParams::unflatten(w, family_, dim()), *model_, noise_, nullptr);
}

Eigen::VectorXd init_params(Family family, int dim, double scale0) {
  if (!(scale0 > 0.0)) throw std::invalid_argument("initial scale must be positive");
  const RadialSpec radial =
      family == Family::Gaussian ? RadialSpec::gaussian(dim) : RadialSpec::student_t(kNuInit, dim);
  return EllipticalParams(Eigen::VectorXd::Zero(dim), scale0 * Eigen::MatrixXd::Identity(dim, dim), radial)
      .flatten();
}

// SGD

SgdResult sgd_maximize(const StochasticGradient& gradient, Eigen::VectorXd w0, const SgdOptions& opts,
                       std::uint64_t seed, const SnapshotEvaluator& snapshot) {
  if (!(opts.step_size > 0.0)) throw std::invalid_argument("step size must be positive");
  if (opts.iters < 0) throw std::invalid_argument("iteration count must be nonnegative");
  const auto start = Clock::now();

  SgdResult result;
  result.w = std::move(w0);
  result.trace.reserve(opts.iters);
  Eigen::VectorXd g;
  // Adam state
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(result.w.size());
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(result.w.size());
  constexpr double beta1 = 0.9;
  constexpr double beta2 = 0.999;
  int adam_t = 0;

  for (int iter = 1; iter <= opts.iters; ++iter) {
    RngStream rng(seed, static_cast<std::uint64_t>(iter));
    double value = -std::numeric_limits<double>::infinity();
    bool ok = true;
    try {
      value = gradient(result.w, rng, g);
      ok = g.size() == result.w.size() && g.allFinite();
    } catch (const std::exception&) {
      ok = false;
    }
    TraceRecord rec{iter, value, ok ? g.norm() : std::numeric_limits<double>::quiet_NaN(), elapsed_ms(start),
                    opts.step_size, !ok};
    if (ok) {
      if (opts.adam) {
        ++adam_t;
        m1 = beta1 * m1 + (1.0 - beta1) * g;
        m2 = beta2 * m2 + (1.0 - beta2) * g.cwiseProduct(g);
        const Eigen::ArrayXd mhat = m1.array() / (1.0 - std::pow(beta1, adam_t));
        const Eigen::ArrayXd vhat = m2.array() / (1.0 - std::pow(beta2, adam_t));
        result.w.array() += opts.step_size * mhat / (vhat.sqrt() + 1e-8);
      } else {
        result.w += opts.step_size * g;
      }
    } else {
      ++result.skipped_steps;
    }
    result.trace.push_back(rec);
    if (snapshot) {
      for (int at : opts.snapshot_at) {
        if (at == iter) result.snapshots.push_back({iter, snapshot(result.w, iter)});
      }
    }
  }
  return result;
}

StochasticGradient iw_elbo_sampler(TargetPtr model, Family family, int M, bool optimize_nu) {
  if (M < 1) throw std::invalid_argument("M must be at least 1");
  return [model = std::move(model), family, M, optimize_nu](const Eigen::VectorXd& w, RngStream& rng,
                                                            Eigen::VectorXd& grad) {
    const int d = model->dim();
    const EllipticalParams q = EllipticalParams::unflatten(w, family, d);
    NoiseSet noise;
    noise.M = M;
    noise.draws.reserve(M);
    for (int m = 0; m < M; ++m) noise.draws.push_back(sample_noise(q.radial(), rng));
    const double value = fixed_noise_iw_elbo(q, *model, noise, &grad);
    if (family == Family::StudentT && !optimize_nu) grad[EllipticalParams::nu_offset(d)] = 0.0;
    return value;
  };
}

std::vector<double> geometric_grid(double lo, double hi, int count) {
  if (!(lo > 0.0) || !(hi >= lo) || count < 1) throw std::invalid_argument("invalid geometric grid");
  std::vector<double> out(count);
  for (int i = 0; i < count; ++i) {
    const double frac = count == 1 ? 0.0 : static_cast<double>(i) / (count - 1);
    out[i] = lo * std::pow(hi / lo, frac);
  }
  return out;
}

std::vector<SweepRow> step_size_sweep(TargetPtr model, const SweepConfig& config) {
  if (!model) throw std::invalid_argument("null target model");
  std::vector<SweepRow> rows;
  const int d = model->dim();
  for (Family family : config.families) {
    for (int M : config.M_set) {
      const StochasticGradient sampler = iw_elbo_sampler(model, family, M, config.optimize_nu);
      for (double step : config.steps) {
        for (std::uint64_t seed : config.seeds) {
          // common random numbers across step sizes within a (family, M) cell
          const std::uint64_t run_seed = derive_seed(seed, (static_cast<std::uint64_t>(M) << 1) |
                                                               (family == Family::StudentT ? 1U : 0U));
          const SnapshotEvaluator evaluate = [&](const Eigen::VectorXd& w, int iteration) {
            IwEstimate est;
            est.M = M;
            est.value = -std::numeric_limits<double>::infinity();
            if (!w.allFinite()) return est;
            try {
              est = iw_elbo(EllipticalParams::unflatten(w, family, d), *model, M, config.snapshot_batches,
                            derive_seed(run_seed, 0x5eed0000ULL + static_cast<std::uint64_t>(iteration)));
            } catch (const std::exception&) {
              est.value = -std::numeric_limits<double>::infinity();
            }
            return est;
          };
          SgdOptions opts;
          opts.step_size = step;
          opts.iters = config.iters;
          opts.snapshot_at = config.snapshot_at;
          opts.adam = config.adam;
          const SgdResult run = sgd_maximize(sampler, init_params(family, d, config.scale0), opts, run_seed, evaluate);
          for (const Snapshot& snap : run.snapshots) {
            SweepRow row;
            row.family = family;
            row.M = M;
            row.step_size = step;
            row.seed = seed;
            row.iteration = snap.iteration;
            row.value = snap.estimate.value;
            row.std_error = snap.estimate.std_error;
            row.diverged = !std::isfinite(row.value);
            if (row.diverged) row.value = -std::numeric_limits<double>::infinity();
            rows.push_back(row);
          }
        }
      }
    }
  }
  return rows;
}

}  // namespace iwvi
