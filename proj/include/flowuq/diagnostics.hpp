#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "flowuq/core.hpp"
#include "flowuq/eb.hpp"
#include "flowuq/fixed_effects.hpp"
#include "flowuq/gravity.hpp"

namespace flowuq::diagnostics {

inline double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

struct Summary {
  std::size_t count = 0;
  double mean = 0.0;
  double variance = 0.0;
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
  double ks_distance = 0.0;  // sup |F_n - Phi|
  bool heavy_tails = false;  // excess kurtosis above 1
};

struct Histogram {
  std::vector<double> edges;      // bins.size() + 1 edges
  std::vector<std::size_t> counts;
  std::vector<double> expected;   // standard-normal expectation per bin
  std::size_t below = 0;
  std::size_t above = 0;
};

struct NormalityReport {
  std::vector<double> residuals;
  std::vector<Cell> dyads;
  Summary summary;
  Histogram histogram;
};

inline Summary summarize(const std::vector<double>& r) {
  Summary s;
  s.count = r.size();
  if (r.empty()) return s;
  const double n = static_cast<double>(r.size());
  s.mean = std::accumulate(r.begin(), r.end(), 0.0) / n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : r) {
    const double d = v - s.mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  s.variance = m2;
  if (m2 > 0.0) {
    s.skewness = m3 / std::pow(m2, 1.5);
    s.excess_kurtosis = m4 / (m2 * m2) - 3.0;
  }
  std::vector<double> sorted = r;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double cdf = standard_normal_cdf(sorted[i]);
    s.ks_distance = std::max({s.ks_distance, static_cast<double>(i + 1) / n - cdf, cdf - static_cast<double>(i) / n});
  }
  s.heavy_tails = s.excess_kurtosis > 1.0;
  return s;
}

inline Histogram histogram(const std::vector<double>& r, double lo = -4.0, double hi = 4.0, std::size_t bins = 32) {
  Histogram h;
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t k = 0; k <= bins; ++k) h.edges.push_back(lo + width * static_cast<double>(k));
  h.counts.assign(bins, 0);
  for (double v : r) {
    if (v < lo) {
      ++h.below;
    } else if (v >= hi) {
      ++h.above;
    } else {
      ++h.counts[std::min(bins - 1, static_cast<std::size_t>((v - lo) / width))];
    }
  }
  for (std::size_t k = 0; k < bins; ++k)
    h.expected.push_back(static_cast<double>(r.size()) *
                         (standard_normal_cdf(h.edges[k + 1]) - standard_normal_cdf(h.edges[k])));
  return h;
}

/// Normalized residuals (log F - mu) / sqrt(s2 + sigma2) over positive
/// off-diagonal flows, for comparison with a standard normal.
inline NormalityReport normality_diagnostic(const FlowMatrix& flows_obs, const eb::CalibratedParams& params,
                                            std::size_t period = 0) {
  require(flows_obs.size() == params.size(), ErrorKind::InvalidInput, "parameters do not match flows");
  NormalityReport rep;
  for (Eigen::Index i = 0; i < flows_obs.size(); ++i)
    for (Eigen::Index j = 0; j < flows_obs.size(); ++j) {
      if (i == j || !(flows_obs(i, j) > 0.0)) continue;
      const eb::DyadPrior d = params.dyad(i, j, period);
      const double scale2 = d.s2 + d.sigma2;
      if (!std::isfinite(d.mu) || !(scale2 > 0.0)) continue;
      rep.residuals.push_back((std::log(flows_obs(i, j)) - d.mu) / std::sqrt(scale2));
      rep.dyads.push_back({i, j});
    }
  rep.summary = summarize(rep.residuals);
  rep.histogram = histogram(rep.residuals);
  return rep;
}

struct PartialPlot {
  std::vector<double> x;  // log distance net of origin/destination effects
  std::vector<double> y;  // log flow net of origin/destination effects
  double slope = 0.0;
  double intercept = 0.0;
  double gravity_beta = 0.0;
  std::vector<double> bin_center;
  std::vector<double> bin_mean;
};

/// Log flows against log distance for positive flows after partialling out
/// origin and destination effects, with a 20-bin (equal count) binned mean.
inline PartialPlot gravity_partial_plot(const FlowMatrix& flows_obs, const DistanceMatrix& distances,
                                        std::size_t bins = 20) {
  const gravity::GravityFit fit = gravity::fit_log_gravity(flows_obs, distances);
  const Eigen::Index N = fit.observations;
  Vector ly(N), lx(N);
  for (Eigen::Index r = 0; r < N; ++r) {
    const Cell& c = fit.cells[static_cast<std::size_t>(r)];
    ly(r) = std::log(flows_obs(c.origin, c.dest));
    lx(r) = std::log(distances(c.origin, c.dest));
  }
  const TwoWayDesign design(flows_obs.size(), flows_obs.size(), fit.cells, Matrix(N, 0));
  const Vector w = Vector::Ones(N);
  const Vector px = design.partial_out(lx, w);
  const Vector py = design.partial_out(ly, w);
  const double sxx = px.squaredNorm();
  require(sxx > 1e-10 * lx.squaredNorm(), ErrorKind::Collinear, "log distance has no variation net of effects");

  PartialPlot plot;
  plot.x.assign(px.data(), px.data() + N);
  plot.y.assign(py.data(), py.data() + N);
  plot.slope = px.dot(py) / sxx;
  plot.intercept = py.mean() - plot.slope * px.mean();
  plot.gravity_beta = fit.beta_hat;

  std::vector<std::size_t> order(static_cast<std::size_t>(N));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return px(a) < px(b); });
  bins = std::min<std::size_t>(bins, order.size());
  for (std::size_t k = 0; k < bins; ++k) {
    const std::size_t from = k * order.size() / bins;
    const std::size_t to = (k + 1) * order.size() / bins;
    double sx = 0.0, sy = 0.0;
    for (std::size_t r = from; r < to; ++r) {
      sx += px(order[r]);
      sy += py(order[r]);
    }
    const double m = static_cast<double>(to - from);
    plot.bin_center.push_back(sx / m);
    plot.bin_mean.push_back(sy / m);
  }
  return plot;
}

}  // namespace flowuq::diagnostics
