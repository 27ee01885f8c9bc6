#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "iwvi/elliptical.hpp"
#include "iwvi/estimators.hpp"
#include "iwvi/models.hpp"
#include "test_support.hpp"

using namespace iwvi;
using iwvi::testing::finite_difference;
using iwvi::testing::random_params;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

EllipticalParams gauss_1d(double mean, double sd) {
  return EllipticalParams(Eigen::VectorXd::Constant(1, mean), Eigen::MatrixXd::Constant(1, 1, sd),
                          RadialSpec::gaussian(1));
}

EllipticalParams student_1d(double mean, double scale, double nu) {
  return EllipticalParams(Eigen::VectorXd::Constant(1, mean), Eigen::MatrixXd::Constant(1, 1, scale),
                          RadialSpec::student_t(nu, 1));
}

std::shared_ptr<GaussianTarget> std_normal_1d() {
  return std::make_shared<GaussianTarget>(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1));
}

// A target that assigns zero density everywhere.
class NullTarget final : public TargetModel {
 public:
  explicit NullTarget(int d) : d_(d) {}
  int dim() const override { return d_; }
  double log_joint(const Eigen::VectorXd&) const override { return -kInf; }
  double log_joint_grad(const Eigen::VectorXd& z, Eigen::VectorXd& grad) const override {
    grad = Eigen::VectorXd::Zero(z.size());
    return -kInf;
  }

 private:
  int d_;
};

// A 2-D Gaussian target with a known evidence and a q that matches it.
struct MatchedPair {
  std::shared_ptr<ShiftedTarget> target;
  EllipticalParams q;
};

MatchedPair matched_pair(double log_scale) {
  const Eigen::Vector2d mean(0.5, -1.0), sd(1.5, 0.7);
  auto base = std::make_shared<GaussianTarget>(mean, sd);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2, 2);
  a.diagonal() = sd;
  return {std::make_shared<ShiftedTarget>(base, log_scale), EllipticalParams(mean, a, RadialSpec::gaussian(2))};
}

std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = lo + (hi - lo) * i / (n - 1);
  return out;
}

}  // namespace

// Log-space helpers

TEST(LogSpace, Helpers) {
  const std::vector<double> v = {1000.0, 1000.0};
  EXPECT_NEAR(log_sum_exp(v), 1000.0 + std::log(2.0), 1e-12);
  EXPECT_NEAR(log_mean_exp(v), 1000.0, 1e-12);
  const std::vector<double> mixed = {-kInf, 0.0, std::log(3.0)};
  const Eigen::VectorXd w = softmax(mixed);
  EXPECT_EQ(w[0], 0.0);
  EXPECT_NEAR(w[1], 0.25, 1e-15);
  EXPECT_NEAR(w[2], 0.75, 1e-15);
  const std::vector<double> dead = {-kInf, -kInf};
  EXPECT_EQ(log_sum_exp(dead), -kInf);
  EXPECT_THROW(softmax(dead), std::domain_error);
}

// log_weight

TEST(LogWeight, MatchedPriorIsZero) {
  const auto target = clutter_target({}, 2);
  const EllipticalParams q(Eigen::VectorXd::Zero(2), 10.0 * Eigen::MatrixXd::Identity(2, 2),
                           RadialSpec::gaussian(2));
  RngStream rng(1, 0);
  for (int i = 0; i < 100; ++i) {
    const Eigen::VectorXd z = sample(q, rng);
    EXPECT_NEAR(log_weight(z, q, *target), 0.0, 1e-12);
  }
}

TEST(LogWeight, ShiftedGaussianClosedForm) {
  const auto target = std_normal_1d();
  const EllipticalParams q = gauss_1d(1.0, 1.0);
  for (const double z : {-3.0, -0.5, 0.0, 0.7, 4.0}) {
    EXPECT_NEAR(log_weight(Eigen::VectorXd::Constant(1, z), q, *target), 0.5 - z, 1e-13);
  }
}

TEST(LogWeight, WeightsAreUnbiasedForEvidence) {
  RngStream data_rng(5, 0);
  const auto target = clutter_target(generate_clutter_observations(1, 3, data_rng), 1);
  const Oracle& o = *target->oracle();
  // Heavy-tailed q around the posterior so the weights have finite variance.
  const EllipticalParams q = student_1d((*o.posterior_mean)[0], 2.0 * std::sqrt((*o.posterior_cov)(0, 0)), 4.0);
  RngStream rng(6, 0);
  const LogWeightBatch batch = draw_log_weights(q, *target, 1'000'000, rng);
  double sum = 0.0, sum_sq = 0.0;
  for (const double lw : batch.log_w) {
    const double r = std::exp(lw - o.log_evidence);
    sum += r;
    sum_sq += r * r;
  }
  const double n = static_cast<double>(batch.log_w.size());
  const double mean = sum / n;
  const double se = std::sqrt((sum_sq / n - mean * mean) / n);
  EXPECT_NEAR(mean, 1.0, 3 * se);
}

// iw_elbo

TEST(IwElbo, SingleSampleIsElbo) {
  std::mt19937_64 gen(1);
  RngStream data_rng(2, 0);
  const auto target = clutter_target(generate_clutter_observations(2, 4, data_rng), 2);
  for (const Family family : {Family::Gaussian, Family::StudentT}) {
    const EllipticalParams q = random_params(family, 2, gen);
    const IwEstimate iw = iw_elbo(q, *target, 1, 500, 17);
    const IwEstimate plain = elbo(q, *target, 500, 17);
    EXPECT_EQ(iw.value, plain.value);
    EXPECT_EQ(iw.std_error, plain.std_error);
    EXPECT_EQ(iw.M, 1);
    EXPECT_EQ(iw.n_batches, 500);
  }
}

TEST(IwElbo, ExactForMatchedTarget) {
  const MatchedPair pair = matched_pair(3.25);
  for (const int M : {1, 3, 10}) {
    const IwEstimate est = iw_elbo(pair.q, *pair.target, M, 200, 4);
    EXPECT_NEAR(est.value, 3.25, 1e-12);
    EXPECT_LE(est.std_error, 1e-12);
  }
}

TEST(IwElbo, GaussianKlClosedForm) {
  const auto target = std_normal_1d();
  const IwEstimate est = iw_elbo(gauss_1d(1.0, 1.0), *target, 1, 100'000, 9);
  EXPECT_NEAR(est.value, -0.5, 3 * est.std_error);
  EXPECT_GT(est.std_error, 0.0);
}

TEST(IwElbo, ReproducibleAndSeedSensitive) {
  const auto target = std_normal_1d();
  const EllipticalParams q = gauss_1d(0.3, 2.0);
  const IwEstimate a = iw_elbo(q, *target, 4, 300, 11);
  const IwEstimate b = iw_elbo(q, *target, 4, 300, 11);
  const IwEstimate c = iw_elbo(q, *target, 4, 300, 12);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.std_error, b.std_error);
  EXPECT_NE(a.value, c.value);
  EXPECT_EQ(a.seed, 11u);
}

TEST(IwElbo, NondecreasingInM) {
  RngStream data_rng(3, 0);
  const auto target = clutter_target(generate_clutter_observations(1, 5, data_rng), 1);
  const EllipticalParams q = gauss_1d(0.0, 3.0);
  IwEstimate prev = iw_elbo(q, *target, 1, 20'000, 5);
  for (const int M : {4, 16, 64}) {
    const IwEstimate cur = iw_elbo(q, *target, M, 20'000, 5);
    const double se = std::hypot(prev.std_error, cur.std_error);
    EXPECT_GT(cur.value - prev.value, -3 * se) << "M = " << M;
    prev = cur;
  }
}

TEST(IwElbo, CollapsedScaleFarFromOrigin) {
  // Half the axes of q are far narrower than the rounding error at mu, and
  // coupled to the others. Solving back from the rounded z for log q would
  // wreck the weights; the ELBO must still match the closed-form -KL.
  const int d = 10;
  const double s = 50.0;
  const auto target = std::make_shared<GaussianTarget>(Eigen::VectorXd::Zero(d), Eigen::VectorXd::Constant(d, s));
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < d; ++i) {
    a(i, i) = i % 2 ? 1.0 : 1e-15;
    for (int j = i + 1; j < d; ++j) a(i, j) = 0.5;
  }
  const EllipticalParams q(Eigen::VectorXd::Constant(d, 35.0), a, RadialSpec::gaussian(d));
  const double kl = 0.5 * (q.sigma().trace() / (s * s) + q.mu().squaredNorm() / (s * s) - d +
                           d * std::log(s * s) - 2.0 * q.log_det_scale());
  const IwEstimate est = elbo(q, *target, 4'000, 4);
  EXPECT_NEAR(est.value, -kl, 5 * est.std_error);
}

TEST(IwElbo, AllZeroWeightsFlagged) {
  const NullTarget target(1);
  const IwEstimate est = iw_elbo(gauss_1d(0.0, 1.0), target, 3, 10, 1);
  EXPECT_EQ(est.value, -kInf);
  EXPECT_TRUE(est.degenerate);
}

TEST(IwElbo, RejectsBadArguments) {
  const auto target = std_normal_1d();
  EXPECT_THROW(iw_elbo(gauss_1d(0, 1), *target, 0, 10, 1), std::invalid_argument);
  EXPECT_THROW(iw_elbo(gauss_1d(0, 1), *target, 1, 0, 1), std::invalid_argument);
  const EllipticalParams q2(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2), RadialSpec::gaussian(2));
  EXPECT_THROW(iw_elbo(q2, *target, 1, 10, 1), std::invalid_argument);
}

TEST(IwElbo, ConstantShiftInvariance) {
  RngStream data_rng(4, 0);
  const auto base = clutter_target(generate_clutter_observations(2, 3, data_rng), 2);
  const double c = 123.456;
  const ShiftedTarget shifted(base, c);
  std::mt19937_64 gen(3);
  const EllipticalParams q = random_params(Family::StudentT, 2, gen);
  const IwEstimate a = iw_elbo(q, *base, 8, 300, 2);
  const IwEstimate b = iw_elbo(q, shifted, 8, 300, 2);
  EXPECT_NEAR(b.value - a.value, c, 1e-10);
  EXPECT_NEAR(a.std_error, b.std_error, 1e-10);

  const TestFunction t = [](const Eigen::VectorXd& z) { return Eigen::VectorXd(z.array().square()); };
  const SnisEstimate sa = snis_expect(t, q, *base, 8, 300, 2);
  const SnisEstimate sb = snis_expect(t, q, shifted, 8, 300, 2);
  EXPECT_LE((sa.estimate - sb.estimate).cwiseAbs().maxCoeff(), 1e-12 * sa.estimate.cwiseAbs().maxCoeff());
  EXPECT_LE((sa.std_error - sb.std_error).cwiseAbs().maxCoeff(), 1e-12 * sa.std_error.cwiseAbs().maxCoeff());
}

// Fixed-noise gradient

TEST(IwElboGrad, MatchesFiniteDifferences) {
  std::mt19937_64 gen(21);
  RngStream data_rng(7, 0);
  for (const Family family : {Family::Gaussian, Family::StudentT}) {
    for (const int d : {1, 2, 3}) {
      const auto target = clutter_target(generate_clutter_observations(d, 3, data_rng), d);
      for (const int M : {1, 4}) {
        for (int trial = 0; trial < 3; ++trial) {
          const EllipticalParams q = random_params(family, d, gen);
          const NoiseSet noise = make_noise_set(q.radial(), M, 20, 100 + trial);
          const Eigen::VectorXd g = iw_elbo_grad(q, *target, noise);
          const auto f = [&](const Eigen::VectorXd& raw) {
            return fixed_noise_iw_elbo(EllipticalParams::unflatten(raw, family, d), *target, noise, nullptr);
          };
          const Eigen::VectorXd fd = finite_difference(f, q.flatten(), 1e-5);
          ASSERT_EQ(g.size(), fd.size());
          for (Eigen::Index i = 0; i < g.size(); ++i) {
            EXPECT_NEAR(g[i], fd[i], 1e-5 * std::max(1.0, std::abs(fd[i])))
                << "family " << static_cast<int>(family) << " d " << d << " M " << M << " coord " << i;
          }
        }
      }
    }
  }
}

TEST(IwElboGrad, MatchedTargetEqualsElboGradient) {
  // With constant weights the softmax is uniform, so the M-tuple estimator
  // equals the single-sample estimator over the same draws.
  const MatchedPair pair = matched_pair(-2.0);
  const int M = 5;
  const NoiseSet noise = make_noise_set(pair.q.radial(), M, 40, 3);
  NoiseSet singles = noise;
  singles.M = 1;
  const Eigen::VectorXd g_iw = iw_elbo_grad(pair.q, *pair.target, noise);
  const Eigen::VectorXd g_one = iw_elbo_grad(pair.q, *pair.target, singles);
  EXPECT_LE((g_iw - g_one).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(IwElboGrad, GaussianClosedForm) {
  // p = N(0, 1), q = N(mu, sigma^2), z = mu + sigma e:
  // log w = -z^2 / 2 + log sigma + e^2 / 2, so
  // d/dmu = -mean(z) and d/dlog sigma = 1 - mean(z sigma e).
  const auto target = std_normal_1d();
  const double mu = 0.8, sigma = 1.7;
  const EllipticalParams q = gauss_1d(mu, sigma);
  const NoiseSet noise = make_noise_set(q.radial(), 1, 1000, 8);
  double mean_z = 0.0, mean_zse = 0.0, value = 0.0;
  for (const NoiseDraw& draw : noise.draws) {
    const double z = transform(draw, q, false).z[0];
    const double e = (z - mu) / sigma;
    mean_z += z;
    mean_zse += z * sigma * e;
    value += -0.5 * z * z + std::log(sigma) + 0.5 * e * e;
  }
  const double n = static_cast<double>(noise.draws.size());
  Eigen::VectorXd g;
  const double v = fixed_noise_iw_elbo(q, *target, noise, &g);
  EXPECT_NEAR(v, value / n, 1e-12);
  EXPECT_NEAR(g[0], -mean_z / n, 1e-12);
  EXPECT_NEAR(g[1], 1.0 - mean_zse / n, 1e-12);
}

TEST(IwElboGrad, PureFunctionOfParameters) {
  std::mt19937_64 gen(2);
  RngStream data_rng(1, 0);
  const auto target = clutter_target(generate_clutter_observations(2, 3, data_rng), 2);
  const EllipticalParams q = random_params(Family::StudentT, 2, gen);
  const NoiseSet noise = make_noise_set(q.radial(), 3, 50, 1);
  Eigen::VectorXd g1, g2;
  const double v1 = fixed_noise_iw_elbo(q, *target, noise, &g1);
  const double v2 = fixed_noise_iw_elbo(q, *target, noise, &g2);
  EXPECT_EQ(v1, v2);
  EXPECT_EQ(g1, g2);
}

// SNIS

TEST(Snis, ConstantTestFunction) {
  RngStream data_rng(2, 0);
  const auto target = clutter_target(generate_clutter_observations(2, 4, data_rng), 2);
  std::mt19937_64 gen(4);
  const EllipticalParams q = random_params(Family::Gaussian, 2, gen);
  const TestFunction t = [](const Eigen::VectorXd&) { return Eigen::Vector2d(3.5, -1.25); };
  for (const int M : {1, 7}) {
    const SnisEstimate est = snis_expect(t, q, *target, M, 100, 5);
    EXPECT_DOUBLE_EQ(est.estimate[0], 3.5);
    EXPECT_DOUBLE_EQ(est.estimate[1], -1.25);
    EXPECT_LE(est.std_error.maxCoeff(), 1e-14);
  }
}

TEST(Snis, MatchedTargetIsPlainAverage) {
  const MatchedPair pair = matched_pair(0.7);
  const TestFunction t = [](const Eigen::VectorXd& z) { return Eigen::VectorXd(z.array().cube()); };
  const int M = 6, n_batches = 50;
  const SnisEstimate est = snis_expect(t, pair.q, *pair.target, M, n_batches, 13);
  Eigen::VectorXd plain = Eigen::VectorXd::Zero(2);
  for (int b = 0; b < n_batches; ++b) {
    RngStream rng(13, b);
    const LogWeightBatch batch = draw_log_weights(pair.q, *pair.target, M, rng);
    for (const auto& z : batch.z) plain += t(z);
  }
  plain /= static_cast<double>(M * n_batches);
  EXPECT_LE((est.estimate - plain).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Snis, SingleSampleIsPlainMonteCarlo) {
  const auto target = std_normal_1d();
  const EllipticalParams q = gauss_1d(0.5, 2.0);
  const TestFunction t = [](const Eigen::VectorXd& z) { return z; };
  const SnisEstimate est = snis_expect(t, q, *target, 1, 100, 3);
  double plain = 0.0;
  for (int b = 0; b < 100; ++b) {
    RngStream rng(3, b);
    plain += draw_log_weights(q, *target, 1, rng).z[0][0];
  }
  EXPECT_NEAR(est.estimate[0], plain / 100.0, 1e-14);
}

TEST(Snis, DirichletSecondMomentImprovesWithM) {
  const Eigen::Vector3d alpha(3.0, 4.0, 5.0);
  const auto target = dirichlet_target(alpha);
  const Eigen::MatrixXd oracle = *target->oracle()->posterior_second_moment;
  const TestFunction t = [](const Eigen::VectorXd& z) {
    const Eigen::VectorXd theta = stick_break(z).theta;
    const Eigen::MatrixXd outer = theta * theta.transpose();
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(outer.data(), outer.size()));
  };
  const EllipticalParams q(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2), RadialSpec::gaussian(2));
  double err1 = 0.0, err64 = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    const auto e1 = snis_expect(t, q, *target, 1, 200, 1000 + rep).estimate;
    const auto e64 = snis_expect(t, q, *target, 64, 200, 1000 + rep).estimate;
    err1 += moment_error(Eigen::Map<const Eigen::MatrixXd>(e1.data(), 3, 3), oracle);
    err64 += moment_error(Eigen::Map<const Eigen::MatrixXd>(e64.data(), 3, 3), oracle);
  }
  EXPECT_LT(err64, err1);
}

TEST(Snis, DirichletCovarianceImprovesWithM) {
  const Eigen::Vector3d alpha(3.0, 4.0, 5.0);
  const auto target = dirichlet_target(alpha);
  const Eigen::MatrixXd oracle = *target->oracle()->posterior_cov;
  const TestFunction t = [](const Eigen::VectorXd& z) {
    const Eigen::VectorXd theta = stick_break(z).theta;
    Eigen::VectorXd out(12);
    out.head(3) = theta;
    const Eigen::MatrixXd outer = theta * theta.transpose();
    out.tail(9) = Eigen::Map<const Eigen::VectorXd>(outer.data(), 9);
    return out;
  };
  const EllipticalParams q(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2), RadialSpec::gaussian(2));
  const auto cov_error = [&](int M, std::uint64_t seed) {
    const Eigen::VectorXd e = snis_expect(t, q, *target, M, 200, seed).estimate;
    const Eigen::VectorXd m = e.head(3);
    const Eigen::MatrixXd second = Eigen::Map<const Eigen::MatrixXd>(e.data() + 3, 3, 3);
    return moment_error(second - m * m.transpose(), oracle);
  };
  double err1 = 0.0, err64 = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    err1 += cov_error(1, 2000 + rep);
    err64 += cov_error(64, 2000 + rep);
  }
  EXPECT_LT(err64, err1);
}

TEST(Snis, AllZeroWeightsThrow) {
  const NullTarget target(1);
  const TestFunction t = [](const Eigen::VectorXd& z) { return z; };
  EXPECT_THROW(snis_expect(t, gauss_1d(0, 1), target, 2, 5, 1), std::domain_error);
}

// Sampling from q_M

TEST(SampleQM, SingleCandidateIsQ) {
  const auto target = std_normal_1d();
  const EllipticalParams q = gauss_1d(2.0, 0.5);
  for (int i = 0; i < 20; ++i) {
    RngStream a(4, i), b(4, i);
    const auto zs = sample_qM(q, *target, 1, a);
    const LogWeightBatch batch = draw_log_weights(q, *target, 1, b);
    ASSERT_EQ(zs.size(), 1u);
    EXPECT_EQ(zs[0], batch.z[0]);
  }
}

TEST(SampleQM, KeepsAllCandidates) {
  const auto target = std_normal_1d();
  const EllipticalParams q = gauss_1d(1.0, 1.0);
  RngStream a(9, 0), b(9, 0);
  const auto zs = sample_qM(q, *target, 6, a);
  const LogWeightBatch batch = draw_log_weights(q, *target, 6, b);
  ASSERT_EQ(zs.size(), 6u);
  std::vector<double> got, want;
  for (const auto& z : zs) got.push_back(z[0]);
  for (const auto& z : batch.z) want.push_back(z[0]);
  // The selected candidate moves to the front; the rest keep their order.
  const auto pos = std::find(want.begin(), want.end(), got[0]) - want.begin();
  ASSERT_LT(pos, 6);
  want.erase(want.begin() + pos);
  EXPECT_EQ(std::vector<double>(got.begin() + 1, got.end()), want);
}

TEST(SampleQM, MatchedTargetMeanIsMu) {
  const MatchedPair pair = matched_pair(0.0);
  const int n = 100'000;
  Eigen::Vector2d sum = Eigen::Vector2d::Zero(), sum_sq = Eigen::Vector2d::Zero();
  RngStream rng(1, 0);
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd z = sample_qM(pair.q, *pair.target, 4, rng)[0];
    sum += z;
    sum_sq += z.cwiseProduct(z);
  }
  const Eigen::Vector2d mean = sum / n;
  const Eigen::Vector2d se = ((sum_sq / n - mean.cwiseProduct(mean)) / n).cwiseSqrt();
  EXPECT_NEAR(mean[0], 0.5, 3 * se[0]);
  EXPECT_NEAR(mean[1], -1.0, 3 * se[1]);
}

TEST(SampleQM, HistogramMatchesMarginalDensity) {
  const MixtureTarget1D target({0.3, 0.7}, {-2.0, 2.0}, {0.5, 0.8});
  const EllipticalParams q = gauss_1d(0.0, 2.0);
  const int M = 5, n = 1'000'000;
  const double lo = -10.0, hi = 10.0, width = 0.25;
  const int bins = static_cast<int>((hi - lo) / width);
  std::vector<double> counts(bins, 0.0);
  RngStream rng(2, 0);
  for (int i = 0; i < n; ++i) {
    const double z = sample_qM(q, target, M, rng)[0][0];
    const int k = static_cast<int>(std::floor((z - lo) / width));
    if (k >= 0 && k < bins) counts[k] += 1.0;
  }
  // Simpson's rule inside each bin on a fine grid.
  const int per_bin = 8;
  const std::vector<double> grid = linspace(lo, hi, bins * per_bin + 1);
  const auto dens = qm_marginal_density_grid(grid, q, target, M, 20'000, 3);
  double tv = 0.0;
  for (int k = 0; k < bins; ++k) {
    double mass = 0.0;
    for (int j = 0; j < per_bin; j += 2) {
      const int i = k * per_bin + j;
      mass += (dens[i].density + 4 * dens[i + 1].density + dens[i + 2].density) * (grid[1] - grid[0]) / 3.0;
    }
    tv += std::abs(counts[k] / n - mass);
  }
  EXPECT_LE(0.5 * tv, 0.01);
}

// Marginal density of q_M

TEST(QmDensity, SingleCandidateIsQ) {
  // With M = 1, R_1 = w(z1), so p(z1, x) / w(z1) = q(z1).
  const MixtureTarget1D target({0.5, 0.5}, {-1.0, 1.5}, {0.7, 1.0});
  const EllipticalParams q = gauss_1d(0.2, 1.3);
  for (const double z : {-2.0, 0.0, 0.4, 3.0}) {
    const DensityEstimate d = qm_marginal_density_1d(z, q, target, 1, 50, 1);
    const double qz = std::exp(log_density(Eigen::VectorXd::Constant(1, z), q));
    EXPECT_NEAR(d.density, qz, 1e-14);
    EXPECT_EQ(d.std_error, 0.0);
  }
}

TEST(QmDensity, MatchedTargetIsPosterior) {
  auto base = std::make_shared<GaussianTarget>(Eigen::VectorXd::Constant(1, 0.5), Eigen::VectorXd::Constant(1, 1.2));
  const ShiftedTarget target(base, 2.0);
  const EllipticalParams q = gauss_1d(0.5, 1.2);
  for (const int M : {1, 4, 32}) {
    for (const double z : {-2.0, 0.5, 1.9}) {
      const DensityEstimate d = qm_marginal_density_1d(z, q, target, M, 100, 1);
      const double posterior = std::exp(base->log_joint(Eigen::VectorXd::Constant(1, z)));
      EXPECT_NEAR(d.density, posterior, 1e-12 * posterior);
    }
  }
}

TEST(QmDensity, IntegratesToOne) {
  const MixtureTarget1D target({0.3, 0.7}, {-2.0, 2.0}, {0.5, 0.8});
  const std::vector<double> grid = linspace(-10.0, 10.0, 801);
  for (const EllipticalParams& q : {gauss_1d(0.0, 2.0), gauss_1d(2.0, 2.0), student_1d(0.0, 1.5, 3.0)}) {
    for (const int M : {1, 5, 20}) {
      const auto dens = qm_marginal_density_grid(grid, q, target, M, 5'000, 4);
      std::vector<double> y;
      for (const auto& d : dens) y.push_back(d.density);
      EXPECT_NEAR(trapezoid(grid, y), 1.0, 0.01) << "M = " << M;
    }
  }
}

TEST(QmDensity, RejectsHigherDimensions) {
  const MatchedPair pair = matched_pair(0.0);
  EXPECT_THROW(qm_marginal_density_1d(0.0, pair.q, *pair.target, 2, 10, 1), std::invalid_argument);
}

// Gap diagnostics

TEST(GapDiagnostics, MatchedTargetHasNoGap) {
  const MatchedPair pair = matched_pair(-4.0);
  for (const int M : {1, 8}) {
    const GapDiagnostics g = gap_diagnostics(pair.q, *pair.target, M, 200, 1);
    EXPECT_NEAR(g.kl_joint, 0.0, 1e-12);
    EXPECT_NEAR(g.kl_joint_cv, 0.0, 1e-12);
    EXPECT_NEAR(g.var_R, 0.0, 1e-12);
    EXPECT_NEAR(g.asym_const, 0.0, 1e-12);
  }
}

TEST(GapDiagnostics, IdentityAndNonnegativity) {
  std::mt19937_64 gen(8);
  RngStream data_rng(8, 0);
  for (int trial = 0; trial < 12; ++trial) {
    const int d = 1 + trial % 2;
    const auto target = clutter_target(generate_clutter_observations(d, 3, data_rng), d);
    const Family family = trial % 3 == 0 ? Family::Gaussian : Family::StudentT;
    EllipticalParams q = random_params(family, d, gen);
    const Eigen::VectorXd post = *target->oracle()->posterior_mean;
    Eigen::VectorXd raw = q.flatten();
    raw.head(d) = post + 0.5 * raw.head(d);
    q = EllipticalParams::unflatten(raw, family, d);
    for (const int M : {1, 10}) {
      const GapDiagnostics g = gap_diagnostics(q, *target, M, 2'000, trial);
      EXPECT_EQ(g.kl_joint, target->oracle()->log_evidence - g.iw.value);
      EXPECT_GE(g.kl_joint, -3 * g.kl_joint_se);
      EXPECT_GE(g.kl_joint_cv, -3 * g.kl_joint_cv_se);
    }
  }
}

TEST(GapDiagnostics, AsymptoticRate) {
  // p = N(0, 1), q = N(0, 1.5^2): V[R] = s^2 / sqrt(2 s^2 - 1) - 1.
  const auto target = std_normal_1d();
  const EllipticalParams q = gauss_1d(0.0, 1.5);
  const double var_r = 2.25 / std::sqrt(3.5) - 1.0;
  // Beyond M = 64 the O(1/M) remainder is below the Monte Carlo noise, so
  // each step may not grow by more than three combined standard errors.
  double prev = kInf, prev_se = 0.0;
  for (const int M : {4, 16, 64, 256}) {
    const GapDiagnostics g = gap_diagnostics(q, *target, M, 100'000, 31);
    EXPECT_NEAR(g.var_R, var_r, 0.05 * var_r);
    const double diff = std::abs(M * g.kl_joint_cv - g.asym_const);
    const double se = M * g.kl_joint_cv_se;
    EXPECT_LT(diff, prev + 3 * std::hypot(se, prev_se)) << "M = " << M;
    prev = diff;
    prev_se = se;
    if (M == 256) EXPECT_LE(diff, 0.1 * g.asym_const);
  }
  // The leading remainder is visible at small M.
  const double d4 = std::abs(4 * gap_diagnostics(q, *target, 4, 100'000, 32).kl_joint_cv - 0.5 * var_r);
  const double d16 = std::abs(16 * gap_diagnostics(q, *target, 16, 100'000, 32).kl_joint_cv - 0.5 * var_r);
  EXPECT_LT(d16, d4);
}

TEST(GapDiagnostics, NeedsOracle) {
  class NoOracle final : public TargetModel {
   public:
    int dim() const override { return 1; }
    double log_joint(const Eigen::VectorXd& z) const override { return -0.5 * z.squaredNorm(); }
    double log_joint_grad(const Eigen::VectorXd& z, Eigen::VectorXd& g) const override {
      g = -z;
      return log_joint(z);
    }
  };
  const NoOracle target;
  EXPECT_THROW(gap_diagnostics(gauss_1d(0, 1), target, 2, 10, 1), std::invalid_argument);
  const std::vector<double> grid = linspace(-5, 5, 101);
  EXPECT_THROW(marginal_kl_1d(gauss_1d(0, 1), target, 2, grid, 10, 1), std::invalid_argument);
}

// Marginal KL

TEST(MarginalKl, MatchedTargetIsZero) {
  auto base = std::make_shared<GaussianTarget>(Eigen::VectorXd::Constant(1, -0.3), Eigen::VectorXd::Constant(1, 0.9));
  const ShiftedTarget target(base, 1.5);
  const std::vector<double> grid = linspace(-10.0, 10.0, 2001);
  for (const int M : {1, 10}) {
    EXPECT_NEAR(marginal_kl_1d(gauss_1d(-0.3, 0.9), target, M, grid, 200, 1).kl, 0.0, 1e-3);
  }
}

TEST(MarginalKl, BoundedByJointKl) {
  const MixtureTarget1D target({0.3, 0.7}, {-2.0, 2.0}, {0.5, 0.8});
  const std::vector<double> grid = linspace(-12.0, 12.0, 1201);
  for (const EllipticalParams& q : {gauss_1d(0.0, 2.0), gauss_1d(2.0, 2.0), student_1d(2.0, 1.5, 3.0)}) {
    for (const int M : {1, 5, 20}) {
      const MarginalKl mk = marginal_kl_1d(q, target, M, grid, 20'000, 5);
      const GapDiagnostics g = gap_diagnostics(q, target, M, 20'000, 6);
      EXPECT_GE(mk.kl, -1e-3);
      EXPECT_LE(mk.kl, g.kl_joint + 3 * g.kl_joint_se + 1e-3) << "M = " << M;
    }
  }
}

TEST(MarginalKl, ImprovesWithMForOffsetGaussian) {
  const MixtureTarget1D target({0.3, 0.7}, {-2.0, 2.0}, {0.5, 0.8});
  const std::vector<double> grid = linspace(-12.0, 12.0, 1201);
  const EllipticalParams q = gauss_1d(2.0, 2.0);
  const double kl1 = marginal_kl_1d(q, target, 1, grid, 20'000, 7).kl;
  const double kl20 = marginal_kl_1d(q, target, 20, grid, 20'000, 7).kl;
  EXPECT_LT(kl20, kl1);
}

TEST(MarginalKl, RefusesCoarseGrid) {
  const MixtureTarget1D target({0.3, 0.7}, {-2.0, 2.0}, {0.5, 0.8});
  const std::vector<double> narrow = linspace(-1.0, 1.0, 101);
  EXPECT_THROW(marginal_kl_1d(gauss_1d(0.0, 2.0), target, 2, narrow, 100, 1), std::runtime_error);
}

// Moment error

TEST(MomentError, Examples) {
  const Eigen::MatrixXd a = Eigen::MatrixXd::Random(3, 3);
  EXPECT_EQ(moment_error(a, a), 0.0);
  EXPECT_NEAR(moment_error(Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Zero(2, 2)), std::sqrt(2.0), 1e-15);
  EXPECT_THROW(moment_error(Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(2, 3)), std::invalid_argument);
}
