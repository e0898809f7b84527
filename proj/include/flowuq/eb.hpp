#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "flowuq/core.hpp"
#include "flowuq/fixed_effects.hpp"
#include "flowuq/gravity.hpp"

namespace flowuq::eb {

inline constexpr double kVarianceFloor = 1e-12;

/// Spike-and-slab prior and measurement-error parameters of one dyad.
struct DyadPrior {
  double p = 0.0;       // probability of a true zero
  double b = 0.0;       // probability of a spurious zero
  double mu = 0.0;      // prior log-mean
  double s2 = 0.0;      // prior log-variance
  double sigma2 = 0.0;  // measurement-error log-variance; 0 means observed without error
};

struct LogNormalPosterior {
  double mean = 0.0;
  double variance = 0.0;
  double weight = 0.0;  // weight on the observed log flow
};

/// Conjugate update for a positive observation: the log flow is normal with
/// mean w log f + (1 - w) mu, w = s2 / (s2 + sigma2), and variance
/// (1/s2 + 1/sigma2)^-1. Both variances are floored at 1e-12.
inline LogNormalPosterior posterior_log_moments(double log_f_obs, const DyadPrior& d) {
  const double s2 = std::max(d.s2, kVarianceFloor);
  const double v2 = std::max(d.sigma2, kVarianceFloor);
  LogNormalPosterior out;
  out.weight = s2 / (s2 + v2);
  out.mean = out.weight * log_f_obs + (1.0 - out.weight) * d.mu;
  out.variance = 1.0 / (1.0 / s2 + 1.0 / v2);
  return out;
}

/// Posterior probability that an observed zero is a true zero,
/// p / (p + b (1 - p)). NaN when p = b = 0.
inline double spike_probability(double p, double b) {
  const double denom = p + b * (1.0 - p);
  if (denom <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  return p / denom;
}

struct FlowDraw {
  double value = 0.0;
  bool degenerate_zero = false;  // observed zero with p = b = 0; returned as a true zero
  bool undefined_mean = false;   // slab needed but no prior mean exists; returned as zero
};

/// One draw of the true flow given its noisy observation.
template <class URBG>
FlowDraw posterior_draw(double f_obs, const DyadPrior& d, URBG& rng) {
  FlowDraw out;
  if (f_obs > 0.0) {
    if (d.sigma2 == 0.0 || !std::isfinite(d.mu)) {
      out.value = f_obs;
      out.undefined_mean = !std::isfinite(d.mu) && d.sigma2 != 0.0;
      return out;
    }
    const LogNormalPosterior post = posterior_log_moments(std::log(f_obs), d);
    std::normal_distribution<double> normal(post.mean, std::sqrt(post.variance));
    out.value = std::exp(normal(rng));
    return out;
  }
  const double q = spike_probability(d.p, d.b);
  if (std::isnan(q)) {
    out.degenerate_zero = true;
    return out;
  }
  std::bernoulli_distribution spike(q);
  if (spike(rng)) return out;
  if (!std::isfinite(d.mu)) {
    out.undefined_mean = true;
    return out;
  }
  std::normal_distribution<double> normal(d.mu, std::sqrt(std::max(d.s2, 0.0)));
  out.value = std::exp(normal(rng));
  return out;
}

/// Per-location-pair prior gravity coefficients of one period.
struct GravityCoefficients {
  double beta = 0.0;
  Vector fe_origin;
  Vector fe_dest;
  double adj_r2 = 0.0;
  double residual_variance = 0.0;
};

inline GravityCoefficients coefficients_of(const gravity::GravityFit& fit) {
  return {fit.beta_hat, fit.fe_origin, fit.fe_dest, fit.adj_r2, fit.residual_variance};
}

/// Calibrated prior and measurement-error parameters. Prior means are kept
/// per period (a single period in the baseline regime). Diagonal dyads carry
/// sigma2 = 0: own flows are treated as measured without error.
struct CalibratedParams {
  std::vector<std::string> labels;
  std::vector<std::string> periods;
  Matrix p;
  Matrix b;
  std::vector<Matrix> mu;
  Matrix s2;
  Matrix sigma2;
  std::optional<Matrix> s2_shrunk;
  std::optional<Matrix> sigma2_shrunk;
  std::vector<GravityCoefficients> gravity;

  Eigen::Index size() const noexcept { return p.rows(); }
  std::size_t period_count() const noexcept { return mu.size(); }

  /// Parameters used for posterior draws; the shrunk variances when present.
  DyadPrior dyad(Eigen::Index i, Eigen::Index j, std::size_t period) const {
    DyadPrior d;
    d.p = p(i, j);
    d.b = b(i, j);
    d.mu = mu.at(period)(i, j);
    d.s2 = s2_shrunk ? (*s2_shrunk)(i, j) : s2(i, j);
    d.sigma2 = sigma2_shrunk ? (*sigma2_shrunk)(i, j) : sigma2(i, j);
    return d;
  }

  void validate() const {
    const Eigen::Index n = size();
    require(p.cols() == n && b.rows() == n && b.cols() == n && s2.rows() == n && s2.cols() == n &&
                sigma2.rows() == n && sigma2.cols() == n && static_cast<Eigen::Index>(labels.size()) == n,
            ErrorKind::InvalidInput, "calibrated parameter matrices have inconsistent shapes");
    require(!mu.empty() && mu.size() == periods.size(), ErrorKind::InvalidInput,
            "one prior-mean matrix per period required");
    for (const Matrix& m : mu)
      require(m.rows() == n && m.cols() == n, ErrorKind::InvalidInput, "prior-mean matrix has wrong shape");
    auto in_unit = [](const Matrix& m) { return (m.array() >= 0.0 && m.array() <= 1.0).all(); };
    require(in_unit(p) && in_unit(b), ErrorKind::InvalidInput, "zero probabilities must lie in [0, 1]");
    require((s2.array() >= 0.0).all() && (sigma2.array() >= 0.0).all(), ErrorKind::InvalidInput,
            "variances must be non-negative");
  }

  std::size_t period_index(const std::string& label) const {
    const auto it = std::find(periods.begin(), periods.end(), label);
    require(it != periods.end(), ErrorKind::InvalidInput, "unknown period " + label);
    return static_cast<std::size_t>(it - periods.begin());
  }
};

/// Baseline regime: common measurement-error variance from domain knowledge,
/// prior means from the gravity fit, and a common prior variance
///   s2 = max(residual variance - sigma2, 0).
inline CalibratedParams calibrate_baseline(const FlowMatrix& flows_obs, const DistanceMatrix& distances,
                                           double sigma2_common, const Matrix& p, const Matrix& b) {
  require(sigma2_common >= 0.0, ErrorKind::InvalidInput, "measurement-error variance must be >= 0");
  const Eigen::Index n = flows_obs.size();
  require(p.rows() == n && p.cols() == n && b.rows() == n && b.cols() == n, ErrorKind::InvalidInput,
          "zero-probability matrices do not match flows");
  const gravity::GravityFit fit = gravity::fit_log_gravity(flows_obs, distances);

  CalibratedParams out;
  out.labels = flows_obs.labels();
  out.periods = {"baseline"};
  out.p = p;
  out.b = b;
  out.p.diagonal().setZero();
  out.b.diagonal().setZero();
  out.mu = {fit.fitted};
  const double s2 = std::max(fit.residual_variance - sigma2_common, 0.0);
  out.s2 = Matrix::Constant(n, n, s2);
  out.sigma2 = Matrix::Constant(n, n, sigma2_common);
  out.s2.diagonal().setZero();
  out.sigma2.diagonal().setZero();
  out.gravity = {coefficients_of(fit)};
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Mirror panel regime

/// Two reports of each off-diagonal flow per period. NaN marks a missing
/// report until resolve_missing() has run.
struct MirrorPanel {
  std::vector<std::string> labels;
  std::vector<std::string> periods;
  std::vector<Matrix> report1;
  std::vector<Matrix> report2;

  struct NaResolution {
    std::size_t copied_dyads = 0;
    std::size_t copied_cells = 0;
    std::size_t zeroed_cells = 0;
  } na_resolution;

  Eigen::Index size() const noexcept { return static_cast<Eigen::Index>(labels.size()); }
  std::size_t period_count() const noexcept { return periods.size(); }

  /// Observed flows of period t: the first report, missing entries zero.
  /// Own flows (if supplied) are passed through.
  FlowMatrix observed(std::size_t t) const {
    Matrix m = report1.at(t).unaryExpr([](double v) { return std::isnan(v) ? 0.0 : v; });
    return FlowMatrix(labels, std::move(m));
  }

  void validate() const {
    require(!periods.empty(), ErrorKind::InvalidInput, "mirror panel needs at least one period");
    require(report1.size() == periods.size() && report2.size() == periods.size(), ErrorKind::InvalidInput,
            "one report matrix per period required");
    bool any_double_positive = false;
    for (std::size_t t = 0; t < periods.size(); ++t) {
      require(report1[t].rows() == size() && report1[t].cols() == size() && report2[t].rows() == size() &&
                  report2[t].cols() == size(),
              ErrorKind::InvalidInput, "report matrix has the wrong shape");
      any_double_positive = any_double_positive || ((report1[t].array() > 0.0) && (report2[t].array() > 0.0)).any();
    }
    require(any_double_positive, ErrorKind::InsufficientData,
            "no dyad has two positive reports in any period; measurement error is unidentified");
  }
};

/// Missing-report rule: a dyad whose one side is positive in every period and
/// whose other side is missing in every period copies the positive side; any
/// report still missing afterwards becomes zero.
inline MirrorPanel::NaResolution resolve_missing(MirrorPanel& panel) {
  MirrorPanel::NaResolution res;
  const Eigen::Index n = panel.size();
  const std::size_t T = panel.period_count();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      auto all_of = [&](const std::vector<Matrix>& r, auto pred) {
        for (std::size_t t = 0; t < T; ++t)
          if (!pred(r[t](i, j))) return false;
        return true;
      };
      auto positive = [](double v) { return v > 0.0; };
      auto missing = [](double v) { return std::isnan(v); };
      const std::vector<Matrix>* src = nullptr;
      std::vector<Matrix>* dst = nullptr;
      if (all_of(panel.report1, positive) && all_of(panel.report2, missing)) {
        src = &panel.report1;
        dst = &panel.report2;
      } else if (all_of(panel.report2, positive) && all_of(panel.report1, missing)) {
        src = &panel.report2;
        dst = &panel.report1;
      }
      if (src == nullptr) continue;
      ++res.copied_dyads;
      for (std::size_t t = 0; t < T; ++t) {
        (*dst)[t](i, j) = (*src)[t](i, j);
        ++res.copied_cells;
      }
    }
  for (std::size_t t = 0; t < T; ++t)
    for (Matrix* m : {&panel.report1[t], &panel.report2[t]})
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
          if (std::isnan((*m)(i, j))) {
            (*m)(i, j) = 0.0;
            if (i != j) ++res.zeroed_cells;
          }
  panel.na_resolution = res;
  return res;
}

struct ZeroProbability {
  double p = 0.0;
  double b = 0.0;
  int case_id = 0;  // 0 interior, 1..6 boundary cases
};

/// Zero probabilities from the frequencies of periods with two (z2), one (z1)
/// and no (z0) reported zeros.
inline ZeroProbability zero_probs_from_frequencies(double z2, double z1, double z0) {
  auto interior = [](double z) { return z > 0.0 && z < 1.0; };
  if (z2 == 1.0) return {1.0, 0.0, 1};
  if (z1 == 1.0) return {0.0, 0.5, 2};
  if (z0 == 1.0) return {0.0, 0.0, 3};
  if (z0 == 0.0) return {z2, z1, 4};
  if (z1 == 0.0) return {z2, 0.0, 5};
  if (z2 == 0.0) return {0.0, z1 / (2.0 - z1), 6};
  require(interior(z2) && interior(z1) && interior(z0), ErrorKind::InvalidInput,
          "zero frequencies must lie in [0, 1]");
  const double m = z1 + 2.0 * z0;
  return {std::max(1.0 - m * m / (4.0 * z0), 0.0), z1 / m, 0};
}

struct ZeroProbabilities {
  Matrix p;
  Matrix b;
  Eigen::MatrixXi case_id;
};

inline ZeroProbabilities estimate_zero_probs(const MirrorPanel& panel) {
  const Eigen::Index n = panel.size();
  const std::size_t T = panel.period_count();
  require(T >= 1, ErrorKind::InvalidInput, "mirror panel has no periods");
  ZeroProbabilities out{Matrix::Zero(n, n), Matrix::Zero(n, n), Eigen::MatrixXi::Zero(n, n)};
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      std::size_t c2 = 0, c1 = 0, c0 = 0;
      for (std::size_t t = 0; t < T; ++t) {
        const bool pos1 = panel.report1[t](i, j) > 0.0;
        const bool pos2 = panel.report2[t](i, j) > 0.0;
        (pos1 && pos2 ? c0 : (pos1 || pos2 ? c1 : c2)) += 1;
      }
      const double dT = static_cast<double>(T);
      const ZeroProbability z = zero_probs_from_frequencies(c2 / dT, c1 / dT, c0 / dT);
      out.p(i, j) = z.p;
      out.b(i, j) = z.b;
      out.case_id(i, j) = z.case_id;
    }
  return out;
}

struct MeVariance {
  Matrix sigma2;
  Mask identified;  // at least one period with two positive reports
};

/// Half the mean squared log-difference between the two reports over periods
/// where both are positive; zero (and unidentified) when there are none.
inline MeVariance estimate_me_variance(const MirrorPanel& panel) {
  const Eigen::Index n = panel.size();
  MeVariance out{Matrix::Zero(n, n), Mask::Constant(n, n, false)};
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      double sum = 0.0;
      std::size_t count = 0;
      for (std::size_t t = 0; t < panel.period_count(); ++t) {
        const double a = panel.report1[t](i, j);
        const double c = panel.report2[t](i, j);
        if (!(a > 0.0 && c > 0.0)) continue;
        const double diff = std::log(a) - std::log(c);
        sum += diff * diff;
        ++count;
      }
      if (count == 0) continue;
      out.sigma2(i, j) = 0.5 * sum / static_cast<double>(count);
      out.identified(i, j) = true;
    }
  return out;
}

struct PriorMeans {
  std::vector<Matrix> mu;          // per period
  Mask undefined;                  // dyad never positive: no prior mean
  std::vector<gravity::GravityFit> fits;
};

/// Within-period gravity fits on the first report. Positive dyad-periods take
/// their own period's fitted value; zero dyad-periods take the average fitted
/// value over the dyad's positive periods.
inline PriorMeans estimate_prior_means(const MirrorPanel& panel, const DistanceMatrix& distances) {
  const Eigen::Index n = panel.size();
  const std::size_t T = panel.period_count();
  PriorMeans out;
  for (std::size_t t = 0; t < T; ++t) {
    try {
      out.fits.push_back(gravity::fit_log_gravity(panel.observed(t), distances));
    } catch (const Error& e) {
      throw Error(e.kind(), "period " + panel.periods[t] + ": " + e.what());
    }
  }
  out.undefined = Mask::Constant(n, n, false);
  out.mu.assign(T, Matrix::Constant(n, n, std::numeric_limits<double>::quiet_NaN()));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      double sum = 0.0;
      std::size_t count = 0;
      for (std::size_t t = 0; t < T; ++t)
        if (panel.report1[t](i, j) > 0.0) {
          out.mu[t](i, j) = out.fits[t].fitted(i, j);
          sum += out.fits[t].fitted(i, j);
          ++count;
        }
      if (count == 0) {
        out.undefined(i, j) = true;
        continue;
      }
      const double avg = sum / static_cast<double>(count);
      for (std::size_t t = 0; t < T; ++t)
        if (!(panel.report1[t](i, j) > 0.0)) out.mu[t](i, j) = avg;
    }
  return out;
}

/// s2_ij = max(Var_t(log F_ijt - mu_ijt | F_ijt > 0) - sigma2_ij, 0), with the
/// 1/N variance over the dyad's positive periods.
inline Matrix estimate_prior_variances(const MirrorPanel& panel, const PriorMeans& means, const Matrix& sigma2) {
  const Eigen::Index n = panel.size();
  Matrix out = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j || means.undefined(i, j)) continue;
      std::vector<double> r;
      for (std::size_t t = 0; t < panel.period_count(); ++t) {
        const double f = panel.report1[t](i, j);
        if (f > 0.0) r.push_back(std::log(f) - means.mu[t](i, j));
      }
      const double n_r = static_cast<double>(r.size());
      double mean = 0.0;
      for (double v : r) mean += v;
      mean /= n_r;
      double var = 0.0;
      for (double v : r) var += (v - mean) * (v - mean);
      var /= n_r;
      out(i, j) = std::max(var - sigma2(i, j), 0.0);
    }
  return out;
}

/// Fits log v_ij = k_i^orig + k_j^dest + u_ij on the strictly positive
/// off-diagonal entries and returns exp(k_i + k_j) for every off-diagonal
/// dyad (diagonal zero).
inline Matrix shrink_variance(const Matrix& v) {
  const Eigen::Index n = v.rows();
  require(v.cols() == n, ErrorKind::InvalidInput, "variance matrix must be square");
  require(n >= 2, ErrorKind::InsufficientData, "variance shrinkage needs at least two locations");
  std::vector<Cell> cells;
  std::vector<double> y;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j && v(i, j) > 0.0) {
        cells.push_back({i, j});
        y.push_back(std::log(v(i, j)));
      }
  require(!cells.empty(), ErrorKind::InsufficientData, "no positive variance estimates");
  TwoWayDesign design(n, n, cells, Matrix(static_cast<Eigen::Index>(cells.size()), 0));
  const Vector yv = Eigen::Map<Vector>(y.data(), static_cast<Eigen::Index>(y.size()));
  const TwoWayCoefficients c = design.solve(yv, Vector::Ones(yv.size()));
  Matrix out = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) out(i, j) = std::exp(c.fe_origin(i) + c.fe_dest(j));
  return out;
}

struct ShrunkVariances {
  Matrix sigma2;
  Matrix s2;
};

inline ShrunkVariances shrink_variances(const Matrix& sigma2, const Matrix& s2) {
  return {shrink_variance(sigma2), shrink_variance(s2)};
}

struct MirrorOptions {
  bool shrink = true;
};

/// Full mirror-panel calibration: zero probabilities, measurement-error
/// variances, per-period prior means, prior variances and (optionally) the
/// fixed-effect shrinkage of both variance matrices.
inline CalibratedParams calibrate_mirror(const MirrorPanel& panel, const DistanceMatrix& distances,
                                         const MirrorOptions& opts = {}) {
  panel.validate();
  const ZeroProbabilities zp = estimate_zero_probs(panel);
  const MeVariance me = estimate_me_variance(panel);
  const PriorMeans means = estimate_prior_means(panel, distances);

  CalibratedParams out;
  out.labels = panel.labels;
  out.periods = panel.periods;
  out.p = zp.p;
  out.b = zp.b;
  out.mu = means.mu;
  out.sigma2 = me.sigma2;
  out.s2 = estimate_prior_variances(panel, means, me.sigma2);
  for (const auto& f : means.fits) out.gravity.push_back(coefficients_of(f));
  if (opts.shrink) {
    ShrunkVariances sv = shrink_variances(out.sigma2, out.s2);
    out.sigma2_shrunk = std::move(sv.sigma2);
    out.s2_shrunk = std::move(sv.s2);
  }
  out.validate();
  return out;
}

}  // namespace flowuq::eb
