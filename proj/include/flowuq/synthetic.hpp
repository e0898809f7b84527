#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "flowuq/core.hpp"
#include "flowuq/eb.hpp"
#include "flowuq/rng.hpp"

namespace flowuq::synthetic {

struct GravityWorldOptions {
  Eigen::Index n = 10;
  double epsilon = 5.0;
  double rho = 1.0;             // log cost = rho * log distance
  double level = 5.0;           // mean of the origin effects
  double size_sd = 1.0;         // sd of the size component shared by both effects
  double domestic_premium = 2.0;
  double imbalance_sd = 0.1;
  double log_sd = 0.0;          // noise sd on log flows (off-diagonal only)
  bool mean_preserving = false; // noise multiplier exp(sd z - sd^2/2) instead of exp(sd z)
  std::uint64_t seed = 1;
};

struct GravityWorld {
  FlowMatrix flows;
  DistanceMatrix distances;
  Matrix log_costs;  // zero on the diagonal
  Matrix log_mean;   // noiseless log flows
};

inline DistanceMatrix random_distances(Eigen::Index n, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1000.0);
  std::vector<double> x(static_cast<std::size_t>(n)), y(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    x[static_cast<std::size_t>(i)] = u(rng);
    y[static_cast<std::size_t>(i)] = u(rng);
  }
  Matrix d = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j)
        d(i, j) = 10.0 + std::hypot(x[static_cast<std::size_t>(i)] - x[static_cast<std::size_t>(j)],
                                    y[static_cast<std::size_t>(i)] - y[static_cast<std::size_t>(j)]);
  return DistanceMatrix(std::move(d));
}

/// Flows generated by a gravity equation with random origin and destination
/// effects and distances between random points in a square.
inline GravityWorld gravity_world(const GravityWorldOptions& o) {
  require(o.n >= 2, ErrorKind::InvalidInput, "need at least two locations");
  Rng rng = stream_for(o.seed, 0, Stream::Simulation);
  std::normal_distribution<double> z;
  const Eigen::Index n = o.n;
  DistanceMatrix dist = random_distances(n, rng);
  // Exporter and importer effects share a size component, which keeps
  // trade close to balanced.
  Vector origin(n), dest(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double size = o.size_sd * z(rng);
    origin(i) = o.level + size + o.imbalance_sd * z(rng);
    dest(i) = size + o.imbalance_sd * z(rng);
  }

  Matrix log_costs = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) log_costs(i, j) = o.rho * std::log(dist(i, j));
  // Costs enter relative to their mean so that foreign and own flows are of
  // comparable size; the constant is absorbed by the effects.
  const double mean_cost = log_costs.sum() / static_cast<double>(n * (n - 1));
  Matrix log_mean(n, n);
  Matrix flows(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) {
        log_mean(i, j) = origin(i) + dest(j) + o.domestic_premium;
        flows(i, j) = std::exp(log_mean(i, j));
        continue;
      }
      log_mean(i, j) = origin(i) + dest(j) - o.epsilon * (log_costs(i, j) - mean_cost);
      double noise = o.log_sd * z(rng);
      if (o.mean_preserving) noise -= o.log_sd * o.log_sd / 2.0;
      flows(i, j) = std::exp(log_mean(i, j) + noise);
    }
  return {FlowMatrix(std::move(flows)), std::move(dist), std::move(log_costs), std::move(log_mean)};
}

struct MirrorPanelOptions {
  GravityWorldOptions world;
  std::size_t periods = 10;
  double p = 0.1;        // true-zero probability
  double b = 0.05;       // spurious-zero probability per report
  double s2 = 0.2;       // prior log-variance around the gravity mean
  double sigma2 = 0.05;  // measurement-error log-variance per report
  std::size_t one_sided_dyads = 0;  // dyads whose second report is missing in every period
  std::uint64_t seed = 2;
};

struct SyntheticPanel {
  eb::MirrorPanel panel;
  DistanceMatrix distances;
  Matrix log_mean;
  std::vector<Matrix> true_flows;
};

/// Mirror panel with spike-and-slab true flows and two independent noisy
/// reports per flow. Own flows are reported once, without error.
inline SyntheticPanel mirror_panel(const MirrorPanelOptions& o) {
  const GravityWorld w = gravity_world(o.world);
  const Eigen::Index n = o.world.n;
  Rng rng = stream_for(o.seed, 0, Stream::Simulation);
  std::normal_distribution<double> z;
  std::bernoulli_distribution true_zero(o.p), spurious(o.b);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  SyntheticPanel out{{}, w.distances, w.log_mean, {}};
  out.panel.labels = detail::default_labels(n);
  for (std::size_t t = 0; t < o.periods; ++t) {
    out.panel.periods.push_back(std::to_string(2000 + t));
    Matrix truth(n, n), r1(n, n), r2(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) {
          truth(i, j) = r1(i, j) = r2(i, j) = std::exp(w.log_mean(i, j));
          continue;
        }
        const double log_f = w.log_mean(i, j) + std::sqrt(o.s2) * z(rng);
        const bool zero = true_zero(rng);
        truth(i, j) = zero ? 0.0 : std::exp(log_f);
        const double e1 = std::sqrt(o.sigma2) * z(rng);
        const double e2 = std::sqrt(o.sigma2) * z(rng);
        const bool miss1 = spurious(rng);
        const bool miss2 = spurious(rng);
        r1(i, j) = zero || miss1 ? 0.0 : std::exp(log_f + e1);
        r2(i, j) = zero || miss2 ? 0.0 : std::exp(log_f + e2);
      }
    out.true_flows.push_back(std::move(truth));
    out.panel.report1.push_back(std::move(r1));
    out.panel.report2.push_back(std::move(r2));
  }
  // One-sided dyads: first report forced positive, second missing throughout.
  std::size_t placed = 0;
  for (Eigen::Index i = 0; i < n && placed < o.one_sided_dyads; ++i)
    for (Eigen::Index j = 0; j < n && placed < o.one_sided_dyads; ++j) {
      if (i == j || (i + j) % 3 != 0) continue;
      for (std::size_t t = 0; t < o.periods; ++t) {
        out.panel.report1[t](i, j) = std::exp(w.log_mean(i, j));
        out.panel.report2[t](i, j) = nan;
      }
      ++placed;
    }
  return out;
}

}  // namespace flowuq::synthetic
