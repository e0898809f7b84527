#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <vector>

#include "flowuq/core.hpp"
#include "flowuq/eb.hpp"
#include "flowuq/gravity.hpp"
#include "flowuq/intervals.hpp"
#include "flowuq/parallel.hpp"
#include "flowuq/rng.hpp"
#include "flowuq/robust.hpp"

namespace flowuq::uq {

struct UqConfig {
  std::size_t draws = 1000;  // B
  double alpha = 0.05;
  std::uint64_t seed = 0;
  Provenance mode = Provenance::Both;
  IntervalKind interval = IntervalKind::C1;
  double robust_c = 1.0;
  std::size_t inner_draws = 200;  // per-draw estimation-error draws for C2
  double max_failure_fraction = 0.05;
  unsigned workers = 1;

  void validate() const {
    require(draws > 0, ErrorKind::InvalidInput, "draw count must be positive");
    detail::tail_count(alpha, draws);
    if (interval == IntervalKind::C2) detail::tail_count(alpha, inner_draws);
    require(max_failure_fraction >= 0.0 && max_failure_fraction <= 1.0, ErrorKind::InvalidInput,
            "max failure fraction must lie in [0, 1]");
  }
};

/// Estimation-error posterior N(theta_hat(D), sigma_hat(D)). Either
/// re-estimated on each drawn data set or fixed (an estimate from another
/// study, sampled independently of the data draw).
struct ThetaPosterior {
  std::function<EstimatorResult(const FlowMatrix&)> estimator;
  std::optional<EstimatorResult> fixed;
  bool lognormal = false;

  static ThetaPosterior external(EstimatorResult est, bool lognormal = false) {
    ThetaPosterior tp;
    tp.fixed = std::move(est);
    tp.lognormal = lognormal;
    return tp;
  }

  static ThetaPosterior reestimated(std::function<EstimatorResult(const FlowMatrix&)> f, bool lognormal = false) {
    ThetaPosterior tp;
    tp.estimator = std::move(f);
    tp.lognormal = lognormal;
    return tp;
  }

  EstimatorResult at(const FlowMatrix& flows) const {
    if (fixed) return *fixed;
    require(static_cast<bool>(estimator), ErrorKind::InvalidInput, "no estimator supplied");
    return estimator(flows);
  }
};

/// Sampler for the measurement-error posterior of the data given the
/// observation; must draw all randomness from `rng`.
using DataSampler = std::function<FlowMatrix(const FlowMatrix& observed, Rng& rng)>;

/// Counters shared by samplers across workers.
struct SamplerStats {
  std::atomic<std::size_t> degenerate_zero{0};
  std::atomic<std::size_t> undefined_mean{0};
};

/// Dyad-by-dyad spike-and-slab posterior draws using the calibrated
/// parameters of one period.
inline DataSampler eb_sampler(const eb::CalibratedParams& params, std::size_t period, SamplerStats* stats = nullptr) {
  params.validate();
  require(period < params.period_count(), ErrorKind::InvalidInput, "period index out of range");
  return [&params, period, stats](const FlowMatrix& observed, Rng& rng) {
    const Eigen::Index n = observed.size();
    require(n == params.size(), ErrorKind::InvalidInput, "calibrated parameters do not match flows");
    Matrix out(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) {
          out(i, j) = observed(i, j);  // own flows are taken as measured without error
          continue;
        }
        const eb::FlowDraw d = eb::posterior_draw(observed(i, j), params.dyad(i, j, period), rng);
        out(i, j) = d.value;
        if (stats != nullptr) {
          if (d.degenerate_zero) ++stats->degenerate_zero;
          if (d.undefined_mean) ++stats->undefined_mean;
        }
      }
    return observed.with_values(std::move(out));
  };
}

// ---------------------------------------------------------------------------
// Smoothing of drawn data before evaluation

enum class SmootherKind { None, LowDim, Svd };

struct Smoother {
  SmootherKind kind = SmootherKind::None;
  Eigen::Index rank = 1;                   // Svd
  std::optional<DistanceMatrix> distances; // LowDim
  bool reestimate_on_smoothed = false;
};

struct SmoothingResult {
  Matrix values;
  std::size_t clamped = 0;  // negative entries set to zero
};

/// Best rank-`rank` approximation (leading singular values kept). Negative
/// entries are clamped to zero and counted.
inline SmoothingResult svd_smooth(const Matrix& m, Eigen::Index rank) {
  require(rank >= 1, ErrorKind::InvalidInput, "rank must be positive");
  require(rank <= std::min(m.rows(), m.cols()), ErrorKind::RankTooLarge,
          "rank " + std::to_string(rank) + " exceeds matrix dimension");
  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  SmoothingResult out;
  out.values = svd.matrixU().leftCols(rank) * svd.singularValues().head(rank).asDiagonal() *
               svd.matrixV().leftCols(rank).transpose();
  for (Eigen::Index i = 0; i < out.values.size(); ++i)
    if (out.values.data()[i] < 0.0) {
      out.values.data()[i] = 0.0;
      ++out.clamped;
    }
  return out;
}

/// Exponentiated gravity fitted values off the diagonal; own flows kept.
inline SmoothingResult lowdim_smooth(const FlowMatrix& flows, const DistanceMatrix& distances) {
  const gravity::GravityFit fit = gravity::fit_log_gravity(flows, distances);
  SmoothingResult out;
  out.values = fit.fitted.array().exp();
  out.values.diagonal() = flows.values().diagonal();
  return out;
}

inline SmoothingResult apply_smoother(const Smoother& s, const FlowMatrix& flows) {
  switch (s.kind) {
    case SmootherKind::None: return {flows.values(), 0};
    case SmootherKind::Svd: return svd_smooth(flows.values(), s.rank);
    case SmootherKind::LowDim:
      require(s.distances.has_value(), ErrorKind::InvalidInput, "low-dimensional smoother needs distances");
      return lowdim_smooth(flows, *s.distances);
  }
  return {flows.values(), 0};
}

// ---------------------------------------------------------------------------

struct UqResult {
  DrawSet draws;
  std::vector<Interval> intervals;  // one per outcome
  Vector point_estimate;            // g(observed, theta_hat(observed))
  std::size_t degenerate_zero_draws = 0;
  std::size_t undefined_mean_draws = 0;
  std::size_t smoothing_clamped = 0;
  std::vector<std::string> failure_diagnostics;  // first few, in draw order
};

namespace detail {

struct DrawOutcome {
  std::optional<Vector> gamma;
  std::vector<Interval> inner;  // C2 only
  std::string diagnostic;
  std::size_t clamped = 0;
};


}  // namespace detail

/// General bootstrap: for b = 1..B draw D_b from the measurement-error
/// posterior, theta_b from the estimation-error posterior given D_b, and
/// evaluate gamma_b = g(smoothed D_b, theta_b). Draws that the model cannot
/// evaluate are skipped and counted.
inline UqResult run_bootstrap(const FlowMatrix& observed, const DataSampler& sampler, const ThetaPosterior& theta,
                              const ModelFunction& g, const CounterfactualSpec& spec, const UqConfig& cfg,
                              const Smoother& smoother = {}) {
  cfg.validate();
  require(cfg.mode == Provenance::OnlyEE || static_cast<bool>(sampler), ErrorKind::InvalidInput,
          "measurement-error modes need a data sampler");

  const EstimatorResult est_obs = theta.at(observed);
  UqResult result;
  const ModelOutcome point = evaluate_model(g, observed, est_obs.theta_hat(), spec);
  require(point.ok(), ErrorKind::ModelEvaluationFailed, "point estimate: " + point.diagnostic);
  result.point_estimate = *point.value;
  const Eigen::Index Q = result.point_estimate.size();

  const std::size_t B = cfg.draws;
  std::vector<detail::DrawOutcome> outcomes(B);
  auto one_draw = [&](std::size_t b) {
    detail::DrawOutcome& out = outcomes[b];
    Rng data_rng = stream_for(cfg.seed, b, Stream::Data);
    Rng theta_rng = stream_for(cfg.seed, b, Stream::Theta);

    const FlowMatrix drawn = cfg.mode == Provenance::OnlyEE ? observed : sampler(observed, data_rng);
    const SmoothingResult smoothed = apply_smoother(smoother, drawn);
    out.clamped = smoothed.clamped;
    const FlowMatrix evaluated = smoother.kind == SmootherKind::None ? drawn : drawn.with_values(smoothed.values);

    // Estimation-error posterior for this draw.
    std::optional<EstimatorResult> est;
    if (cfg.mode == Provenance::OnlyME) {
      est = EstimatorResult(est_obs.theta_hat(), Matrix::Zero(est_obs.dim(), est_obs.dim()));
    } else if (cfg.mode == Provenance::OnlyEE || theta.fixed) {
      est = est_obs;
    } else {
      est = theta.at(smoother.reestimate_on_smoothed ? evaluated : drawn);
    }

    const Vector theta_b = gravity::sample_theta(*est, theta_rng, theta.lognormal);
    ModelOutcome m = evaluate_model(g, evaluated, theta_b, spec);
    if (!m.ok()) {
      out.diagnostic = m.diagnostic;
      return;
    }
    if (cfg.interval == IntervalKind::C2) {
      Rng inner_rng = stream_for(cfg.seed, b, Stream::Inner);
      Matrix inner(static_cast<Eigen::Index>(cfg.inner_draws), Q);
      for (std::size_t k = 0; k < cfg.inner_draws; ++k) {
        const Vector th = gravity::sample_theta(*est, inner_rng, theta.lognormal);
        ModelOutcome mi = evaluate_model(g, evaluated, th, spec);
        if (!mi.ok()) {
          out.diagnostic = "inner draw: " + mi.diagnostic;
          return;
        }
        inner.row(static_cast<Eigen::Index>(k)) = mi.value->transpose();
      }
      for (Eigen::Index q = 0; q < Q; ++q) {
        const Vector col = inner.col(q);
        out.inner.push_back(interval_c1(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())),
                                        cfg.alpha));
      }
    }
    out.gamma = std::move(m.value);
  };

  flowuq::parallel_for(B, cfg.workers, one_draw);

  DrawSet& ds = result.draws;
  ds.requested = B;
  ds.seed = cfg.seed;
  ds.provenance = cfg.mode;
  ds.outcome_labels = g.outcome_labels(observed);
  std::size_t used = 0;
  for (const auto& o : outcomes) used += o.gamma ? 1 : 0;
  ds.failed = B - used;
  ds.draws.resize(static_cast<Eigen::Index>(used), Q);
  std::vector<std::vector<Interval>> inner_by_outcome(static_cast<std::size_t>(Q));
  Eigen::Index row = 0;
  for (std::size_t b = 0; b < B; ++b) {
    const auto& o = outcomes[b];
    result.smoothing_clamped += o.clamped;
    if (!o.gamma) {
      if (result.failure_diagnostics.size() < 10)
        result.failure_diagnostics.push_back("draw " + std::to_string(b) + ": " + o.diagnostic);
      continue;
    }
    require(o.gamma->size() == Q, ErrorKind::ModelEvaluationFailed, "model returned a varying outcome count");
    ds.draws.row(row++) = o.gamma->transpose();
    ds.draw_index.push_back(b);
    for (Eigen::Index q = 0; q < Q; ++q) {
      if (!o.inner.empty()) inner_by_outcome[static_cast<std::size_t>(q)].push_back(o.inner[static_cast<std::size_t>(q)]);
    }
  }
  if (static_cast<double>(ds.failed) > cfg.max_failure_fraction * static_cast<double>(B))
    throw Error(ErrorKind::TooManyFailures, std::to_string(ds.failed) + " of " + std::to_string(B) +
                                                " draws failed (limit " +
                                                std::to_string(cfg.max_failure_fraction) + ")");

  for (Eigen::Index q = 0; q < Q; ++q) {
    const std::vector<double> col = ds.column(q);
    switch (cfg.interval) {
      case IntervalKind::C1: result.intervals.push_back(interval_c1(col, cfg.alpha, ds.failed)); break;
      case IntervalKind::C2:
        result.intervals.push_back(interval_c2(inner_by_outcome[static_cast<std::size_t>(q)], cfg.alpha, ds.failed));
        break;
      case IntervalKind::Robust:
        result.intervals.push_back(robust::robust_interval(col, cfg.alpha, cfg.robust_c, ds.failed));
        break;
    }
  }
  return result;
}

/// Draws from a user-supplied measurement-error posterior.
inline UqResult run_algorithm1(const FlowMatrix& observed, const DataSampler& sampler, const ThetaPosterior& theta,
                               const ModelFunction& g, const CounterfactualSpec& spec, const UqConfig& cfg) {
  return run_bootstrap(observed, sampler, theta, g, spec, cfg);
}

/// As run_algorithm1, but every drawn data set is smoothed before the model
/// is evaluated on it.
inline UqResult run_algorithm2(const FlowMatrix& observed, const DataSampler& sampler, const ThetaPosterior& theta,
                               const ModelFunction& g, const CounterfactualSpec& spec, const UqConfig& cfg,
                               const Smoother& smoother) {
  if (smoother.kind == SmootherKind::Svd)
    require(smoother.rank <= observed.size(), ErrorKind::RankTooLarge,
            "rank " + std::to_string(smoother.rank) + " exceeds " + std::to_string(observed.size()));
  return run_bootstrap(observed, sampler, theta, g, spec, cfg, smoother);
}

/// Default approach: spike-and-slab posterior of each flow under the
/// calibrated parameters, then a normal estimation-error posterior.
inline UqResult run_algorithm3(const FlowMatrix& observed, const eb::CalibratedParams& params,
                               const ThetaPosterior& theta, const ModelFunction& g, const CounterfactualSpec& spec,
                               const UqConfig& cfg, std::size_t period = 0, const Smoother& smoother = {}) {
  SamplerStats stats;
  const DataSampler sampler = eb_sampler(params, period, &stats);
  UqResult r = run_bootstrap(observed, sampler, theta, g, spec, cfg, smoother);
  r.degenerate_zero_draws = stats.degenerate_zero.load();
  r.undefined_mean_draws = stats.undefined_mean.load();
  return r;
}

}  // namespace flowuq::uq
