#include "iwvi/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <memory>
#include <sstream>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "iwvi/estimators.hpp"
#include "iwvi/libsvm.hpp"
#include "iwvi/models.hpp"
#include "iwvi/optim.hpp"

#ifndef IWVI_VERSION
#define IWVI_VERSION "0.0.0"
#endif

namespace iwvi {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Purpose tags for seed derivation.
enum SeedTag : std::uint64_t {
  kTagRepetition = 1,
  kTagInstance,
  kTagNoise,
  kTagEval,
  kTagMoments,
  kTagRm,
  kTagQm,
};

std::uint64_t cell_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  for (std::uint64_t t : tags) seed = derive_seed(seed, t);
  return seed;
}

std::uint64_t family_tag(Family f) { return f == Family::StudentT ? 1 : 0; }

std::string kv(const std::string& key, double value) { return key + "=" + format_double(value); }
std::string kv(const std::string& key, const std::string& value) { return key + "=" + value; }

class RowSink {
 public:
  explicit RowSink(Experiment e) : experiment_(experiment_name(e)) {}

  void add(Family family, int M, int repetition, const std::string& metric, double value, double se,
           std::string extra = {}) {
    add(std::string(family_name(family)), M, repetition, metric, value, se, std::move(extra));
  }
  void add(std::string family, int M, int repetition, const std::string& metric, double value, double se,
           std::string extra = {}) {
    rows_.push_back({experiment_, std::move(family), M, repetition, metric, value, se, std::move(extra)});
  }
  std::vector<ResultRow> take() { return std::move(rows_); }

 private:
  std::string experiment_;
  std::vector<ResultRow> rows_;
};

struct FitResult {
  EllipticalParams q;
  double objective = kNaN;
  int iterations = 0;
  std::string stop = "none";
};

// Maximizes the fixed-noise IW-ELBO from the standard initialization, or
// returns the initialization when optimization is off.
FitResult fit(const TargetPtr& model, Family family, int M, const ExperimentConfig& config, std::uint64_t seed) {
  const int d = model->dim();
  Eigen::VectorXd w0 = init_params(family, d, config.scale0);
  if (!config.optimize) return {EllipticalParams::unflatten(w0, family, d)};
  const FixedNoiseObjective objective(model, family, M, config.n_fixed_noise, seed, config.optimize_nu);
  LbfgsOptions opts;
  opts.max_iter = config.lbfgs_max_iter;
  opts.memory = config.lbfgs_memory;
  opts.grad_tol = config.lbfgs_grad_tol;
  const LbfgsResult result =
      lbfgs_maximize([&](const Eigen::VectorXd& w, Eigen::VectorXd& g) { return objective(w, g); }, w0, opts);
  FitResult out{EllipticalParams::unflatten(result.w, family, d)};
  out.objective = result.objective;
  out.iterations = result.trace.empty() ? 0 : result.trace.back().iteration;
  out.stop = std::string(stop_reason_name(result.reason));
  return out;
}

void add_fit_rows(RowSink& sink, Family family, int M, int rep, const FitResult& fit) {
  sink.add(family, M, rep, "fixed_noise_objective", fit.objective, 0.0,
           kv("iterations", std::to_string(fit.iterations)) + ";" + kv("stop", fit.stop));
  if (fit.q.family() == Family::StudentT) sink.add(family, M, rep, "nu", fit.q.nu(), 0.0);
}

Eigen::VectorXd flatten_matrix(const Eigen::MatrixXd& m) {
  return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}

// ---------------------------------------------------------------- oneD

struct Candidate {
  std::string label;
  EllipticalParams q;
};

std::vector<Candidate> oned_candidates(const ExperimentConfig& c) {
  std::vector<Candidate> out;
  for (Family family : c.families) {
    for (const auto& [label, mean] : {std::pair{std::string("a"), c.candidate_mean_a},
                                      std::pair{std::string("b"), c.candidate_mean_b}}) {
      Eigen::VectorXd mu(1);
      mu[0] = mean;
      Eigen::MatrixXd a(1, 1);
      if (family == Family::Gaussian) {
        a(0, 0) = c.candidate_sd;
        out.push_back({label, EllipticalParams(mu, a, RadialSpec::gaussian(1))});
      } else {
        // equal variance: nu / (nu - 2) * scale^2 = sd^2
        a(0, 0) = c.candidate_sd * std::sqrt((c.candidate_nu - 2.0) / c.candidate_nu);
        out.push_back({label, EllipticalParams(mu, a, RadialSpec::student_t(c.candidate_nu, 1))});
      }
    }
  }
  return out;
}

// Histogram density of R_M on [0, max]. The grid carries the bin centres
// plus both end points at the adjacent bin heights, so the trapezoid rule
// over the emitted points reproduces the histogram mass exactly.
void emit_rm_density(RowSink& sink, const Candidate& cand, int M, const TargetModel& model,
                     const ExperimentConfig& config, std::uint64_t seed) {
  RngStream rng(seed, 0);
  std::vector<double> r(static_cast<std::size_t>(config.eval_samples));
  for (double& value : r) {
    const LogWeightBatch batch = draw_log_weights(cand.q, model, M, rng);
    value = std::exp(log_mean_exp(batch.log_w));
  }
  const double hi = *std::max_element(r.begin(), r.end());
  const int bins = config.rm_bins;
  const double width = hi > 0.0 ? hi / bins : 1.0;
  std::vector<double> counts(static_cast<std::size_t>(bins), 0.0);
  for (double value : r) {
    const int b = std::min(bins - 1, static_cast<int>(value / width));
    counts[static_cast<std::size_t>(b)] += 1.0;
  }
  const double norm = 1.0 / (static_cast<double>(r.size()) * width);
  const std::string tag = kv("candidate", cand.label) + ";";
  sink.add(cand.q.family(), M, 0, "rm_density", counts.front() * norm, kNaN, tag + kv("x", 0.0));
  for (int b = 0; b < bins; ++b)
    sink.add(cand.q.family(), M, 0, "rm_density", counts[static_cast<std::size_t>(b)] * norm, kNaN,
             tag + kv("x", (b + 0.5) * width));
  sink.add(cand.q.family(), M, 0, "rm_density", counts.back() * norm, kNaN, tag + kv("x", hi));
}

}  // namespace

std::vector<ResultRow> run_oneD(const ExperimentConfig& config) {
  RowSink sink(Experiment::OneD);
  const auto model =
      std::make_shared<MixtureTarget1D>(config.mixture_weights, config.mixture_means, config.mixture_sds);
  const auto candidates = oned_candidates(config);

  std::vector<double> grid(static_cast<std::size_t>(config.grid_points));
  for (int i = 0; i < config.grid_points; ++i)
    grid[static_cast<std::size_t>(i)] =
        config.grid_min + (config.grid_max - config.grid_min) * i / (config.grid_points - 1);

  // posterior moments of t(z) = (z, z^2)
  Eigen::Vector2d p_moments = Eigen::Vector2d::Zero();
  for (std::size_t c = 0; c < config.mixture_weights.size(); ++c) {
    double total = 0.0;
    for (double w : config.mixture_weights) total += w;
    const double w = config.mixture_weights[c] / total;
    const double m = config.mixture_means[c];
    const double s = config.mixture_sds[c];
    p_moments[0] += w * m;
    p_moments[1] += w * (m * m + s * s);
  }
  const TestFunction t = [](const Eigen::VectorXd& z) {
    Eigen::VectorXd out(2);
    out << z[0], z[0] * z[0];
    return out;
  };

  for (std::size_t ci = 0; ci < candidates.size(); ++ci) {
    const Candidate& cand = candidates[ci];
    const std::string tag = kv("candidate", cand.label);
    for (int M : config.M_set) {
      const std::uint64_t base = cell_seed(config.seed, {ci, static_cast<std::uint64_t>(M)});
      const Family family = cand.q.family();

      const IwEstimate est = iw_elbo(cand.q, *model, M, config.eval_batches, cell_seed(base, {kTagEval}));
      sink.add(family, M, 0, "iw_elbo", est.value, est.std_error, tag);

      const SnisEstimate snis =
          snis_expect(t, cand.q, *model, M, config.eval_batches, cell_seed(base, {kTagMoments}));
      const Eigen::VectorXd diff = snis.estimate - p_moments;
      // delta method: d||e||^2 = 2 e . de
      const double se = 2.0 * std::sqrt((diff.array().square() * snis.std_error.array().square()).sum());
      sink.add(family, M, 0, "moment_error", diff.squaredNorm(), se, tag);

      emit_rm_density(sink, cand, M, *model, config, cell_seed(base, {kTagRm}));

      const auto density =
          qm_marginal_density_grid(grid, cand.q, *model, M, config.n_inner, cell_seed(base, {kTagQm}));
      for (std::size_t i = 0; i < grid.size(); ++i)
        sink.add(family, M, 0, "qm_density", density[i].density, density[i].std_error,
                 tag + ";" + kv("z", grid[i]));
    }
  }
  return sink.take();
}

// ---------------------------------------------------------------- dirichlet

std::vector<ResultRow> run_dirichlet(const ExperimentConfig& config) {
  RowSink sink(Experiment::Dirichlet);
  const int K = config.K;
  // t(z) = (theta, vec(theta theta^T)) for the covariance in theta-space
  const TestFunction t = [K](const Eigen::VectorXd& z) {
    const Eigen::VectorXd theta = stick_break(z).theta;
    Eigen::VectorXd out(K + K * K);
    out.head(K) = theta;
    out.tail(K * K) = flatten_matrix(theta * theta.transpose());
    return out;
  };
  for (int rep = 0; rep < config.repetitions; ++rep) {
    const std::uint64_t rep_seed = cell_seed(config.seed, {kTagRepetition, static_cast<std::uint64_t>(rep)});
    RngStream rng(cell_seed(rep_seed, {kTagInstance}), 0);
    const Eigen::VectorXd alpha = random_dirichlet_alpha(K, config.alpha_shape, rng);
    const auto model = dirichlet_target(alpha);
    const Oracle& oracle = *model->oracle();
    for (Family family : config.families) {
      for (int M : config.M_set) {
        const std::uint64_t base = cell_seed(rep_seed, {family_tag(family), static_cast<std::uint64_t>(M)});
        const FitResult fitted = fit(model, family, M, config, cell_seed(base, {kTagNoise}));
        add_fit_rows(sink, family, M, rep, fitted);

        const GapDiagnostics gap =
            gap_diagnostics(fitted.q, *model, M, config.eval_batches, cell_seed(base, {kTagEval}));
        sink.add(family, M, rep, "kl_gap", gap.kl_joint, gap.kl_joint_se);
        sink.add(family, M, rep, "kl_gap_cv", gap.kl_joint_cv, gap.kl_joint_cv_se);

        const SnisEstimate snis =
            snis_expect(t, fitted.q, *model, M, config.eval_batches, cell_seed(base, {kTagMoments}));
        const Eigen::VectorXd mean = snis.estimate.head(K);
        const Eigen::MatrixXd second = Eigen::Map<const Eigen::MatrixXd>(snis.estimate.data() + K, K, K);
        const Eigen::MatrixXd cov = second - mean * mean.transpose();
        sink.add(family, M, rep, "cov_error", moment_error(cov, *oracle.posterior_cov), kNaN);
      }
    }
  }
  return sink.take();
}

// ---------------------------------------------------------------- clutter

namespace {

struct QuadratureCheck {
  double log_evidence = 0.0;
  double mean = 0.0;
};

// One-dimensional log evidence and posterior mean by adaptive Gauss-Kronrod.
QuadratureCheck clutter_quadrature(const TargetModel& model, const std::vector<Eigen::VectorXd>& obs) {
  double lo = -200.0;
  double hi = 200.0;
  for (const auto& x : obs) {
    lo = std::min(lo, x[0] - 200.0);
    hi = std::max(hi, x[0] + 200.0);
  }
  Eigen::VectorXd z(1);
  double shift = -std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 4000; ++i) {
    z[0] = lo + (hi - lo) * i / 4000.0;
    shift = std::max(shift, model.log_joint(z));
  }
  auto density = [&](double x) {
    Eigen::VectorXd pt(1);
    pt[0] = x;
    return std::exp(model.log_joint(pt) - shift);
  };
  // unit-width panels keep every panel smooth on the scale of the posterior
  using boost::math::quadrature::gauss_kronrod;
  double mass = 0.0;
  double first = 0.0;
  for (double a = lo; a < hi; a += 1.0) {
    mass += gauss_kronrod<double, 61>::integrate(density, a, a + 1.0, 8, 1e-14);
    first += gauss_kronrod<double, 61>::integrate([&](double x) { return x * density(x); }, a, a + 1.0, 8, 1e-14);
  }
  return {shift + std::log(mass), first / mass};
}

}  // namespace

std::vector<ResultRow> run_clutter(const ExperimentConfig& config) {
  RowSink sink(Experiment::Clutter);
  const int d = config.d;
  const TestFunction t = [](const Eigen::VectorXd& z) -> Eigen::VectorXd { return flatten_matrix(z * z.transpose()); };
  for (int rep = 0; rep < config.repetitions; ++rep) {
    const std::uint64_t rep_seed = cell_seed(config.seed, {kTagRepetition, static_cast<std::uint64_t>(rep)});
    RngStream rng(cell_seed(rep_seed, {kTagInstance}), 0);
    const auto obs = generate_clutter_observations(d, config.n_obs, rng);
    const auto model = clutter_target(obs, d);
    const Oracle& oracle = *model->oracle();
    if (d == 1 && config.n_obs <= 3) {
      const QuadratureCheck quad = clutter_quadrature(*model, obs);
      sink.add("oracle", 0, rep, "oracle_log_evidence_abs_diff", std::abs(quad.log_evidence - oracle.log_evidence),
               0.0);
      sink.add("oracle", 0, rep, "oracle_mean_abs_diff", std::abs(quad.mean - (*oracle.posterior_mean)[0]), 0.0);
    }
    for (Family family : config.families) {
      for (int M : config.M_set) {
        const std::uint64_t base = cell_seed(rep_seed, {family_tag(family), static_cast<std::uint64_t>(M)});
        const FitResult fitted = fit(model, family, M, config, cell_seed(base, {kTagNoise}));
        add_fit_rows(sink, family, M, rep, fitted);

        const GapDiagnostics gap =
            gap_diagnostics(fitted.q, *model, M, config.eval_batches, cell_seed(base, {kTagEval}));
        sink.add(family, M, rep, "kl_gap", gap.kl_joint, gap.kl_joint_se);
        sink.add(family, M, rep, "kl_gap_cv", gap.kl_joint_cv, gap.kl_joint_cv_se);

        const SnisEstimate snis =
            snis_expect(t, fitted.q, *model, M, config.eval_batches, cell_seed(base, {kTagMoments}));
        const Eigen::MatrixXd second = Eigen::Map<const Eigen::MatrixXd>(snis.estimate.data(), d, d);
        sink.add(family, M, rep, "second_moment_error", moment_error(second, *oracle.posterior_second_moment),
                 kNaN);
      }
    }
  }
  return sink.take();
}

// ---------------------------------------------------------------- logreg

std::vector<ResultRow> run_logreg(const ExperimentConfig& config) {
  RowSink sink(Experiment::LogReg);
  SparseDataset data;
  if (!config.dataset_path.empty()) {
    if (!std::filesystem::exists(config.dataset_path))
      throw DatasetMissing("dataset file not found: " + config.dataset_path);
    data = load_libsvm(config.dataset_path);
  } else {
    RngStream rng(cell_seed(config.seed, {kTagInstance}), 0);
    data = synthetic_logistic(config.synthetic_n, config.synthetic_d, rng);
  }
  SparseRows features = data.features;
  if (config.standardize) features = standardize_columns(features);
  if (config.add_bias) features = append_bias_column(features);
  const auto model = logreg_target(features, data.labels);

  SweepConfig sweep;
  sweep.families = config.families;
  sweep.M_set = config.M_set;
  sweep.steps = geometric_grid(config.step_min, config.step_max, config.n_steps);
  sweep.seeds.clear();
  for (int rep = 0; rep < config.repetitions; ++rep)
    sweep.seeds.push_back(cell_seed(config.seed, {kTagRepetition, static_cast<std::uint64_t>(rep)}));
  sweep.iters = config.iters;
  sweep.snapshot_at = config.snapshot_at;
  sweep.snapshot_batches = config.snapshot_batches;
  sweep.scale0 = config.scale0;
  sweep.optimize_nu = config.optimize_nu;
  sweep.adam = config.adam;

  for (const SweepRow& row : step_size_sweep(model, sweep)) {
    const auto rep = std::find(sweep.seeds.begin(), sweep.seeds.end(), row.seed) - sweep.seeds.begin();
    sink.add(row.family, row.M, static_cast<int>(rep), "iw_elbo_snapshot", row.value, row.std_error,
             kv("step_size", row.step_size) + ";" + kv("iteration", std::to_string(row.iteration)));
  }
  return sink.take();
}

std::vector<ResultRow> run_experiment(const ExperimentConfig& config) {
  switch (config.experiment) {
    case Experiment::OneD:
      return run_oneD(config);
    case Experiment::Dirichlet:
      return run_dirichlet(config);
    case Experiment::Clutter:
      return run_clutter(config);
    case Experiment::LogReg:
      return run_logreg(config);
  }
  throw std::logic_error("unhandled experiment");
}

// ---------------------------------------------------------------- output

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

std::string csv_field(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

void write_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
  out << kCsvHeader << "\r\n";
  for (const ResultRow& r : rows) {
    out << csv_field(r.experiment) << ',' << csv_field(r.family) << ',' << r.M << ',' << r.repetition << ','
        << csv_field(r.metric) << ',' << format_double(r.value) << ',' << format_double(r.std_error) << ','
        << csv_field(r.extra) << "\r\n";
  }
}

std::string library_version() { return IWVI_VERSION; }

RunOutput run_to_directory(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
  const auto start = std::chrono::steady_clock::now();
  std::filesystem::create_directories(out_dir);
  RunOutput output;
  output.config_path = out_dir / "config.json";
  output.csv_path = out_dir / "results.csv";
  output.manifest_path = out_dir / "manifest.json";
  {
    std::ofstream f(output.config_path);
    f << to_json(config).dump(2) << '\n';
  }

  const std::vector<ResultRow> rows = run_experiment(config);
  {
    std::ofstream f(output.csv_path, std::ios::binary);
    write_csv(f, rows);
    if (!f) throw std::runtime_error("failed to write " + output.csv_path.string());
  }
  output.n_rows = rows.size();
  output.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  nlohmann::json manifest = {
      {"experiment", experiment_name(config.experiment)},
      {"seed", config.seed},
      {"version", library_version()},
      {"wall_time_seconds", output.wall_seconds},
      {"n_rows", output.n_rows},
      {"files", {"config.json", "results.csv"}},
      {"standardize", config.standardize},
      {"add_bias", config.add_bias},
  };
  std::ofstream f(output.manifest_path);
  f << manifest.dump(2) << '\n';
  return output;
}

}  // namespace iwvi
