#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flowuq/error.hpp"

namespace flowuq {

enum class IntervalKind { C1, C2, Robust };

constexpr const char* to_string(IntervalKind k) {
  switch (k) {
    case IntervalKind::C1: return "C1";
    case IntervalKind::C2: return "C2";
    case IntervalKind::Robust: return "robust";
  }
  return "?";
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double alpha = 0.05;
  IntervalKind kind = IntervalKind::C1;
  std::size_t draws_used = 0;
  std::size_t draws_failed = 0;
  double robust_c = 1.0;

  double width() const noexcept { return hi - lo; }
  bool contains(double v) const noexcept { return lo <= v && v <= hi; }
};

namespace detail {

inline std::vector<double> sorted_copy(std::span<const double> v) {
  std::vector<double> s(v.begin(), v.end());
  std::stable_sort(s.begin(), s.end());
  return s;
}

/// k = alpha/2 * B, required to be a positive integer.
inline std::size_t tail_count(double alpha, std::size_t total) {
  require(alpha > 0.0 && alpha < 1.0, ErrorKind::InvalidInput, "alpha must lie in (0, 1)");
  const double k = alpha / 2.0 * static_cast<double>(total);
  const double r = std::round(k);
  require(r >= 1.0 && std::abs(k - r) <= 1e-9 * std::max(1.0, k), ErrorKind::BadQuantileGrid,
          "alpha/2 * B = " + std::to_string(k) + " is not a positive integer");
  return static_cast<std::size_t>(r);
}

// 1-indexed order statistic.
inline double order_statistic(const std::vector<double>& sorted, std::size_t k) {
  return sorted.at(k - 1);
}

// Lower (floor) and upper (ceil) order-statistic positions for a probability
// level; exact integers are kept as they are.
inline std::size_t lower_position(double level, std::size_t total) {
  const double k = level * static_cast<double>(total);
  const double r = std::round(k);
  const double pos = std::abs(k - r) <= 1e-9 * std::max(1.0, k) ? r : std::floor(k);
  return static_cast<std::size_t>(std::clamp(pos, 1.0, static_cast<double>(total)));
}

inline std::size_t upper_position(double level, std::size_t total) {
  const double k = level * static_cast<double>(total);
  const double r = std::round(k);
  const double pos = std::abs(k - r) <= 1e-9 * std::max(1.0, k) ? r : std::ceil(k);
  return static_cast<std::size_t>(std::clamp(pos, 1.0, static_cast<double>(total)));
}

// Positions are defined on the requested draw count; failed draws are
// treated as falling below the lower and above the upper endpoint, which
// can only widen the interval.
inline std::pair<std::size_t, std::size_t> shift_for_failures(std::size_t lo_pos, std::size_t hi_pos,
                                                              std::size_t used, std::size_t failed) {
  require(used > 0, ErrorKind::TooManyFailures, "no successful draws");
  const std::size_t lo = lo_pos > failed ? lo_pos - failed : 1;
  const std::size_t hi = std::min(hi_pos, used);
  return {lo, hi};
}

}  // namespace detail

/// Equal-tailed interval from the (alpha/2 B)-th and ((1 - alpha/2) B)-th order
/// statistics of the draws, B counting failed draws too.
inline Interval interval_c1(std::span<const double> draws, double alpha, std::size_t failed = 0) {
  const std::size_t total = draws.size() + failed;
  const std::size_t k = detail::tail_count(alpha, total);
  const std::vector<double> s = detail::sorted_copy(draws);
  const auto [lo, hi] = detail::shift_for_failures(k, total - k, s.size(), failed);
  Interval out;
  out.lo = detail::order_statistic(s, lo);
  out.hi = detail::order_statistic(s, hi);
  out.alpha = alpha;
  out.kind = IntervalKind::C1;
  out.draws_used = s.size();
  out.draws_failed = failed;
  return out;
}

/// Interval covering the per-draw intervals: alpha/2 quantile of the lower
/// bounds and 1 - alpha/2 quantile of the upper bounds.
inline Interval interval_c2(std::span<const Interval> inner, double alpha, std::size_t failed = 0) {
  const std::size_t total = inner.size() + failed;
  const std::size_t k = detail::tail_count(alpha, total);
  std::vector<double> lows, highs;
  for (const Interval& iv : inner) {
    lows.push_back(iv.lo);
    highs.push_back(iv.hi);
  }
  std::stable_sort(lows.begin(), lows.end());
  std::stable_sort(highs.begin(), highs.end());
  const auto [lo, hi] = detail::shift_for_failures(k, total - k, lows.size(), failed);
  Interval out;
  out.lo = detail::order_statistic(lows, lo);
  out.hi = detail::order_statistic(highs, hi);
  out.alpha = alpha;
  out.kind = IntervalKind::C2;
  out.draws_used = inner.size();
  out.draws_failed = failed;
  return out;
}

}  // namespace flowuq
