#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "flowuq/error.hpp"
#include "flowuq/parallel.hpp"
#include "flowuq/rng.hpp"

namespace flowuq::attenuation {

struct AttenuationSimConfig {
  std::size_t reps = 100000;   // M
  std::size_t draws = 1000;    // B
  std::size_t locations = 50;  // n
  double rho = 0.5;            // log cost = rho * log distance
  double epsilon = 5.0;
  double s = 0.1;              // sd of log flows around the gravity mean
  double varsigma = 0.1;       // sd of measurement error
  std::uint64_t seed = 0;
  // Shrink toward zero instead of the fitted gravity line. Not part of the
  // original study; used to show what a constant shrinkage target does.
  bool prior_mean_zero = false;
  unsigned workers = 1;

  void validate() const {
    require(reps > 0 && draws > 0, ErrorKind::InvalidInput, "reps and draws must be positive");
    require(locations >= 3, ErrorKind::InvalidInput, "need at least 3 locations");
    require(std::isfinite(rho) && rho != 0.0, ErrorKind::InvalidInput, "rho must be finite and nonzero");
    require(std::isfinite(epsilon), ErrorKind::InvalidInput, "epsilon must be finite");
    require(s > 0.0 && varsigma >= 0.0 && std::isfinite(s) && std::isfinite(varsigma), ErrorKind::InvalidInput,
            "s must be positive and varsigma non-negative");
  }
};

namespace detail {

inline double median(std::vector<double>& v) {
  const std::size_t m = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), v.end());
  const double hi = v[m];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m));
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// Median (over posterior draws) of the implied elasticity minus the truth,
/// one value per outer replication.
inline std::vector<double> run_attenuation_sim(const AttenuationSimConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.locations;
  std::vector<double> log_dist;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) log_dist.push_back(std::log(std::abs(static_cast<double>(i) - static_cast<double>(j))));
  const std::size_t N = log_dist.size();
  double mean_x = 0.0;
  for (double x : log_dist) mean_x += x;
  mean_x /= static_cast<double>(N);
  std::vector<double> centered(N);
  double sxx = 0.0;
  for (std::size_t d = 0; d < N; ++d) {
    centered[d] = log_dist[d] - mean_x;
    sxx += centered[d] * centered[d];
  }
  // Implied elasticity of a log-flow vector: -Cov(log tau, y) / Var(log tau).
  auto implied = [&](const std::vector<double>& y) {
    double sxy = 0.0;
    for (std::size_t d = 0; d < N; ++d) sxy += centered[d] * y[d];
    return -(sxy / sxx) / cfg.rho;
  };

  const double s2 = cfg.s * cfg.s;
  const double v2 = cfg.varsigma * cfg.varsigma;
  const double weight = s2 / (s2 + v2);
  const double post_sd = v2 > 0.0 ? std::sqrt(1.0 / (1.0 / s2 + 1.0 / v2)) : 0.0;

  std::vector<double> out(cfg.reps);
  parallel_for(cfg.reps, cfg.workers, [&](std::size_t m) {
    Rng rng = stream_for(cfg.seed, m, Stream::Simulation);
    std::normal_distribution<double> z;
    std::vector<double> noisy(N), post_mean(N), y(N), bias(cfg.draws);
    for (std::size_t d = 0; d < N; ++d) {
      const double log_flow = -cfg.epsilon * cfg.rho * log_dist[d] + cfg.s * z(rng);
      noisy[d] = log_flow + cfg.varsigma * z(rng);
    }
    double beta = 0.0;
    if (!cfg.prior_mean_zero) {
      double sxy = 0.0;
      for (std::size_t d = 0; d < N; ++d) sxy += centered[d] * noisy[d];
      beta = sxy / sxx;
    }
    for (std::size_t d = 0; d < N; ++d) post_mean[d] = weight * noisy[d] + (1.0 - weight) * beta * log_dist[d];
    for (std::size_t b = 0; b < cfg.draws; ++b) {
      for (std::size_t d = 0; d < N; ++d) y[d] = post_mean[d] + post_sd * z(rng);
      bias[b] = implied(y) - cfg.epsilon;
    }
    out[m] = detail::median(bias);
  });
  return out;
}

}  // namespace flowuq::attenuation
