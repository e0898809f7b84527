#pragma once

#include <cmath>
#include <span>

#include "flowuq/intervals.hpp"

namespace flowuq::robust {

/// Worst-case probability levels for the alpha-quantile of a posterior when
/// the likelihood (or prior) may be any density within a factor c of the
/// assumed one.
struct QuantileLevels {
  double inf_level = 0.0;  // level whose quantile is the smallest attainable alpha-quantile
  double sup_level = 0.0;  // level whose quantile is the largest attainable alpha-quantile
};

inline QuantileLevels robust_quantile_levels(double alpha, double c) {
  require(alpha > 0.0 && alpha < 1.0, ErrorKind::InvalidInput, "alpha must lie in (0, 1)");
  require(c >= 1.0 && std::isfinite(c), ErrorKind::InvalidInput, "density-ratio bound c must be >= 1");
  const double c2 = c * c;
  return {alpha / (alpha + (1.0 - alpha) * c2), alpha * c2 / (1.0 - alpha + alpha * c2)};
}

/// Probability levels of a two-sided robust interval with nominal tail mass
/// alpha: the inf of the alpha/2 quantile and the sup of the 1 - alpha/2
/// quantile, i.e. alpha / (alpha + (2 - alpha) c^2) and its complement.
struct IntervalLevels {
  double lower = 0.0;
  double upper = 0.0;
};

inline IntervalLevels robust_interval_levels(double alpha, double c) {
  return {robust_quantile_levels(alpha / 2.0, c).inf_level, robust_quantile_levels(1.0 - alpha / 2.0, c).sup_level};
}

/// Empirical quantiles of the draws at the robust levels. Uses the floor
/// position for the lower and the ceiling position for the upper endpoint,
/// so the result always contains interval_c1 on the same draws.
inline Interval robust_interval(std::span<const double> draws, double alpha, double c, std::size_t failed = 0) {
  const IntervalLevels lv = robust_interval_levels(alpha, c);
  const std::size_t total = draws.size() + failed;
  require(static_cast<double>(total) * lv.lower >= 1.0 - 1e-12, ErrorKind::TooFewDraws,
          "need at least 1 / lower_level = " + std::to_string(1.0 / lv.lower) + " draws");
  const std::vector<double> s = detail::sorted_copy(draws);
  const auto [lo, hi] = detail::shift_for_failures(detail::lower_position(lv.lower, total),
                                                   detail::upper_position(lv.upper, total), s.size(), failed);
  Interval out;
  out.lo = detail::order_statistic(s, lo);
  out.hi = detail::order_statistic(s, hi);
  out.alpha = alpha;
  out.kind = IntervalKind::Robust;
  out.robust_c = c;
  out.draws_used = s.size();
  out.draws_failed = failed;
  return out;
}

}  // namespace flowuq::robust
