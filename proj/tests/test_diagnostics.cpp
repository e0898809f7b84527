#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "flowuq/attenuation.hpp"
#include "flowuq/diagnostics.hpp"
#include "flowuq/synthetic.hpp"

using namespace flowuq;

TEST(Summary, StandardNormalSample) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z;
  std::vector<double> v(10000);
  for (double& x : v) x = z(rng);
  const auto s = diagnostics::summarize(v);
  EXPECT_EQ(s.count, 10000u);
  EXPECT_LT(s.ks_distance, 0.02);
  EXPECT_NEAR(s.mean, 0.0, 0.05);
  EXPECT_NEAR(s.variance, 1.0, 0.05);
  EXPECT_NEAR(s.skewness, 0.0, 0.1);
  EXPECT_NEAR(s.excess_kurtosis, 0.0, 0.2);
  EXPECT_FALSE(s.heavy_tails);
}

TEST(Summary, HeavyTailsAndShiftedSample) {
  std::mt19937_64 rng(2);
  std::student_t_distribution<double> t(3.0);
  std::vector<double> v(10000);
  for (double& x : v) x = t(rng);
  EXPECT_TRUE(diagnostics::summarize(v).heavy_tails);
  std::vector<double> shifted(5000, 0.0);
  std::normal_distribution<double> z(1.0, 1.0);
  for (double& x : shifted) x = z(rng);
  // KS distance of N(1, 1) from N(0, 1) is 2 Phi(1/2) - 1.
  EXPECT_NEAR(diagnostics::summarize(shifted).ks_distance, 2.0 * diagnostics::standard_normal_cdf(0.5) - 1.0, 0.03);
}

TEST(Summary, KnownMoments) {
  const auto s = diagnostics::summarize({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_DOUBLE_EQ(s.variance, 1.25);
  EXPECT_NEAR(s.skewness, 0.0, 1e-15);
  EXPECT_NEAR(s.excess_kurtosis, (0.25 * (2 * 5.0625 + 2 * 0.0625)) / (1.25 * 1.25) - 3.0, 1e-12);
  const auto empty = diagnostics::summarize({});
  EXPECT_EQ(empty.count, 0u);
  EXPECT_EQ(empty.ks_distance, 0.0);
}

TEST(Histogram, CountsEveryValue) {
  const std::vector<double> v{-5.0, -4.0, -0.1, 0.0, 0.1, 3.99, 4.0, 7.0};
  const auto h = diagnostics::histogram(v, -4.0, 4.0, 8);
  EXPECT_EQ(h.edges.size(), 9u);
  EXPECT_EQ(h.below, 1u);
  EXPECT_EQ(h.above, 2u);
  EXPECT_EQ(std::accumulate(h.counts.begin(), h.counts.end(), std::size_t{0}), 5u);
  EXPECT_EQ(h.counts[0], 1u);
  EXPECT_EQ(h.counts[3], 1u);
  EXPECT_EQ(h.counts[4], 2u);
  EXPECT_EQ(h.counts[7], 1u);
  const double expected = std::accumulate(h.expected.begin(), h.expected.end(), 0.0);
  EXPECT_NEAR(expected, 8.0 * (2.0 * diagnostics::standard_normal_cdf(4.0) - 1.0), 1e-12);
}

TEST(Normality, WellSpecifiedResidualsLookNormal) {
  synthetic::GravityWorldOptions o;
  o.n = 40;
  o.log_sd = 0.4;
  const auto w = synthetic::gravity_world(o);
  const Matrix zeros = Matrix::Zero(40, 40);
  const auto params = eb::calibrate_baseline(w.flows, w.distances, 0.04, zeros, zeros);
  const auto rep = diagnostics::normality_diagnostic(w.flows, params);
  EXPECT_EQ(rep.residuals.size(), 40u * 39u);
  EXPECT_EQ(rep.dyads.size(), rep.residuals.size());
  EXPECT_LT(rep.summary.ks_distance, 0.05);
  EXPECT_FALSE(rep.summary.heavy_tails);
  // Residual variance is s2 + sigma2 by construction.
  EXPECT_NEAR(rep.summary.variance, 1.0, 1e-9);
}

TEST(PartialPlot, SlopeEqualsGravityCoefficient) {
  synthetic::GravityWorldOptions o;
  o.n = 15;
  o.log_sd = 0.6;
  const auto w = synthetic::gravity_world(o);
  Matrix f = w.flows.values();
  f(2, 7) = 0.0;
  const auto plot = diagnostics::gravity_partial_plot(FlowMatrix(f), w.distances);
  EXPECT_NEAR(plot.slope, plot.gravity_beta, 1e-10);
  EXPECT_NEAR(plot.intercept, 0.0, 1e-10);
  EXPECT_EQ(plot.x.size(), 15u * 14u - 1u);
  EXPECT_EQ(plot.bin_center.size(), 20u);
  EXPECT_TRUE(std::is_sorted(plot.bin_center.begin(), plot.bin_center.end()));
  const double mean_y = std::accumulate(plot.bin_mean.begin(), plot.bin_mean.end(), 0.0);
  EXPECT_TRUE(std::isfinite(mean_y));
}

TEST(Attenuation, DeterministicAcrossWorkers) {
  attenuation::AttenuationSimConfig cfg;
  cfg.reps = 16;
  cfg.draws = 50;
  cfg.locations = 12;
  cfg.seed = 5;
  cfg.workers = 1;
  const auto a = attenuation::run_attenuation_sim(cfg);
  cfg.workers = 4;
  const auto b = attenuation::run_attenuation_sim(cfg);
  EXPECT_EQ(a, b);
  cfg.seed = 6;
  EXPECT_NE(a, attenuation::run_attenuation_sim(cfg));
}

TEST(Attenuation, GravityPriorAvoidsBiasAndZeroPriorDoesNot) {
  attenuation::AttenuationSimConfig cfg;
  cfg.reps = 200;
  cfg.draws = 100;
  cfg.locations = 30;
  cfg.seed = 8;
  cfg.workers = 4;
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  EXPECT_LT(std::abs(mean(attenuation::run_attenuation_sim(cfg))), 0.05);
  cfg.prior_mean_zero = true;
  // Shrinking half-way to zero halves the slope.
  EXPECT_NEAR(mean(attenuation::run_attenuation_sim(cfg)), -2.5, 0.1);
}

TEST(Attenuation, ConfigValidation) {
  attenuation::AttenuationSimConfig cfg;
  cfg.rho = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg.rho = -0.5;
  EXPECT_NO_THROW(cfg.validate());
  cfg.locations = 2;
  EXPECT_THROW(cfg.validate(), Error);
}
