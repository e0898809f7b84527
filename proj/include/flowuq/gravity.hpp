#pragma once

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "flowuq/core.hpp"
#include "flowuq/fixed_effects.hpp"

namespace flowuq::gravity {

enum class VarianceKind { Dyadic, Independent };

struct PpmlOptions {
  bool include_diagonal = false;
  VarianceKind variance = VarianceKind::Dyadic;
  int max_iterations = 200;
  double deviance_tolerance = 1e-12;
  double separation_bound = 30.0;  // on log fitted means, flows scaled to unit mean
};

/// Poisson pseudo-maximum-likelihood fit of
///   F_ij = exp(fe_origin_i + fe_dest_j - epsilon * log_cost_ij).
struct PpmlFit {
  double epsilon_hat = 0.0;
  Vector fe_origin;
  Vector fe_dest;
  std::vector<Cell> cells;  // dyads used in the fit
  Vector fitted;            // fitted mean per used dyad
  Vector scores;            // FE-partialled score contribution per used dyad
  double hessian = 0.0;     // sum of mu * (partialled log cost)^2
  double variance = 0.0;
  bool variance_projected = false;
  double deviance = 0.0;
  int iterations = 0;
};

struct VarianceEstimate {
  double variance = 0.0;
  bool projected = false;
};

namespace detail {

inline double poisson_deviance(const Vector& y, const Vector& mu) {
  double d = 0.0;
  for (Eigen::Index r = 0; r < y.size(); ++r) {
    if (y(r) > 0.0) d += y(r) * std::log(y(r) / mu(r));
    d -= y(r) - mu(r);
  }
  return 2.0 * d;
}

struct PpmlData {
  std::vector<Cell> cells;
  Vector y;
  Matrix x;
};

inline PpmlData ppml_data(const FlowMatrix& flows, const Matrix& log_costs, bool include_diagonal) {
  require(log_costs.rows() == flows.size() && log_costs.cols() == flows.size(), ErrorKind::InvalidInput,
          "log cost matrix does not match flows");
  PpmlData d;
  std::vector<double> y, x;
  for (Eigen::Index i = 0; i < flows.size(); ++i)
    for (Eigen::Index j = 0; j < flows.size(); ++j) {
      if (i == j && !include_diagonal) continue;
      if (!std::isfinite(log_costs(i, j))) continue;
      d.cells.push_back({i, j});
      y.push_back(flows(i, j));
      x.push_back(log_costs(i, j));
    }
  require(!d.cells.empty(), ErrorKind::InsufficientData, "no dyads with finite costs");
  d.y = Eigen::Map<Vector>(y.data(), static_cast<Eigen::Index>(y.size()));
  d.x = Eigen::Map<Matrix>(x.data(), static_cast<Eigen::Index>(x.size()), 1);
  return d;
}

// Sum over ordered dyad pairs that share at least one location. Computed as
// sum over locations of (sum of scores touching it)^2, minus the pairs that
// share both locations (a dyad with itself and with its mirror), which that
// sum counts twice.
inline double dyadic_meat(const std::vector<Cell>& cells, const Vector& a, Eigen::Index n) {
  Vector node = Vector::Zero(n);
  Matrix by_dyad = Matrix::Zero(n, n);
  Mask present = Mask::Constant(n, n, false);
  for (std::size_t r = 0; r < cells.size(); ++r) {
    const Cell& c = cells[r];
    node(c.origin) += a(static_cast<Eigen::Index>(r));
    if (c.dest != c.origin) node(c.dest) += a(static_cast<Eigen::Index>(r));
    by_dyad(c.origin, c.dest) = a(static_cast<Eigen::Index>(r));
    present(c.origin, c.dest) = true;
  }
  double meat = node.squaredNorm();
  for (const Cell& c : cells) {
    if (c.origin == c.dest) continue;
    const double v = by_dyad(c.origin, c.dest);
    meat -= v * v;
    if (present(c.dest, c.origin)) meat -= v * by_dyad(c.dest, c.origin);
  }
  return meat;
}

}  // namespace detail

/// Sandwich variance of epsilon_hat. The bread and scores use the log cost
/// with the fixed effects partialled out under Poisson weights, which gives
/// the epsilon entry of the full-parameter sandwich.
inline VarianceEstimate ppml_variance(const PpmlFit& fit, const FlowMatrix& flows, VarianceKind kind) {
  const Vector& a = fit.scores;
  double meat = 0.0;
  if (kind == VarianceKind::Dyadic) {
    meat = detail::dyadic_meat(fit.cells, a, flows.size());
  } else {
    meat = a.squaredNorm();
  }
  VarianceEstimate out;
  out.variance = meat / (fit.hessian * fit.hessian);
  if (out.variance < 0.0) {
    out.variance = 0.0;
    out.projected = true;
  }
  return out;
}

/// Dyadic-robust variance (pairs of dyads sharing a location are correlated).
inline VarianceEstimate dyadic_variance(const PpmlFit& fit, const FlowMatrix& flows) {
  return ppml_variance(fit, flows, VarianceKind::Dyadic);
}

/// Iteratively reweighted least squares with step-halving on the deviance.
/// Flows are rescaled to unit mean internally; epsilon_hat is unaffected and
/// the level is restored in the destination effects.
inline PpmlFit fit_ppml(const FlowMatrix& flows, const Matrix& log_costs, const PpmlOptions& opts = {}) {
  detail::PpmlData d = detail::ppml_data(flows, log_costs, opts.include_diagonal);
  const Eigen::Index n = flows.size();
  const double scale = d.y.mean();
  require(scale > 0.0, ErrorKind::InsufficientData, "all flows are zero");
  const Vector y = d.y / scale;

  TwoWayDesign design(n, n, d.cells, d.x);
  design.check_covariates(Vector::Ones(y.size()));

  Vector mu = (y.array() + y.mean()) / 2.0;
  Vector eta = mu.array().log();
  double dev = detail::poisson_deviance(y, mu);
  TwoWayCoefficients coef;
  bool have_coef = false;
  bool converged = false;
  int it = 0;
  for (it = 1; it <= opts.max_iterations; ++it) {
    const Vector z = eta + (y - mu).cwiseQuotient(mu);
    TwoWayCoefficients next = design.solve(z, mu);
    Vector eta_next = design.fitted(next);
    Vector mu_next = eta_next.array().exp();
    double dev_next = detail::poisson_deviance(y, mu_next);
    for (int halving = 0; have_coef && !(dev_next <= dev * (1.0 + 1e-14) + 1e-300) && halving < 40; ++halving) {
      next.coef = (next.coef + coef.coef) / 2.0;
      next.fe_origin = (next.fe_origin + coef.fe_origin) / 2.0;
      next.fe_dest = (next.fe_dest + coef.fe_dest) / 2.0;
      eta_next = design.fitted(next);
      mu_next = eta_next.array().exp();
      dev_next = detail::poisson_deviance(y, mu_next);
    }
    // Flows are on a unit-mean scale, so a fitted log mean far below zero
    // means the fit is chasing an all-zero margin.
    const double eta_min = eta_next.minCoeff();
    require(std::isfinite(eta_min) && eta_min >= -opts.separation_bound, ErrorKind::Separation,
            "a fitted mean collapses to zero; some location has (quasi-)separated zero flows");
    const double eta_change = (eta_next - eta).cwiseAbs().maxCoeff();
    const double dev_change = std::abs(dev_next - dev) / (0.1 + std::abs(dev_next));
    coef = std::move(next);
    have_coef = true;
    eta = std::move(eta_next);
    mu = std::move(mu_next);
    dev = dev_next;
    if (dev_change < opts.deviance_tolerance && eta_change < 1e-9) {
      converged = true;
      break;
    }
  }
  require(converged, ErrorKind::NoConvergence, "PPML did not converge");

  PpmlFit fit;
  fit.epsilon_hat = -coef.coef(0);
  fit.fe_origin = coef.fe_origin;
  fit.fe_dest = coef.fe_dest.array() + std::log(scale);
  fit.cells = d.cells;
  fit.fitted = mu * scale;
  fit.deviance = dev * scale;
  fit.iterations = it;

  const Vector x_tilde = design.partial_out(d.x.col(0), fit.fitted);
  fit.scores = x_tilde.cwiseProduct(d.y - fit.fitted);
  fit.hessian = fit.fitted.cwiseProduct(x_tilde).dot(x_tilde);
  const VarianceEstimate v = ppml_variance(fit, flows, opts.variance);
  fit.variance = v.variance;
  fit.variance_projected = v.projected;
  return fit;
}

inline EstimatorResult to_estimator_result(const PpmlFit& fit) {
  return EstimatorResult::scalar(fit.epsilon_hat, fit.variance);
}

/// Least-squares gravity fit of log flows on log distance with two-way fixed
/// effects, over positive off-diagonal flows.
struct GravityFit {
  double beta_hat = 0.0;
  Vector fe_origin;
  Vector fe_dest;
  double residual_variance = 0.0;  // 1/N convention
  double adj_r2 = 0.0;
  Matrix fitted;                   // prior log-mean for every off-diagonal dyad; NaN on the diagonal
  std::vector<Cell> cells;         // positive-flow dyads used
  Vector residuals;
  Eigen::Index observations = 0;
  Eigen::Index parameters = 0;
};

inline GravityFit fit_log_gravity(const FlowMatrix& flows, const DistanceMatrix& distances) {
  const Eigen::Index n = flows.size();
  require(distances.size() == n, ErrorKind::InvalidInput, "distance matrix does not match flows");
  std::vector<Cell> cells;
  std::vector<double> y, x;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j || !(flows(i, j) > 0.0)) continue;
      cells.push_back({i, j});
      y.push_back(std::log(flows(i, j)));
      x.push_back(std::log(distances(i, j)));
    }
  require(!cells.empty(), ErrorKind::InsufficientData, "no positive off-diagonal flows");
  const Vector yv = Eigen::Map<Vector>(y.data(), static_cast<Eigen::Index>(y.size()));
  const Matrix xv = Eigen::Map<Matrix>(x.data(), static_cast<Eigen::Index>(x.size()), 1);
  TwoWayDesign design(n, n, cells, xv);
  const Vector w = Vector::Ones(yv.size());
  design.check_covariates(w);
  const TwoWayCoefficients c = design.solve(yv, w);

  GravityFit fit;
  fit.beta_hat = c.coef(0);
  fit.fe_origin = c.fe_origin;
  fit.fe_dest = c.fe_dest;
  fit.cells = cells;
  fit.residuals = yv - design.fitted(c);
  fit.observations = design.observations();
  fit.parameters = design.parameters();
  const double N = static_cast<double>(fit.observations);
  const double ssr = fit.residuals.squaredNorm();
  const double sst = (yv.array() - yv.mean()).square().sum();
  fit.residual_variance = ssr / N;
  const double dof = N - static_cast<double>(fit.parameters);
  if (sst > 0.0 && dof > 0.0) {
    fit.adj_r2 = 1.0 - (ssr / sst) * (N - 1.0) / dof;
  } else {
    fit.adj_r2 = std::numeric_limits<double>::quiet_NaN();
  }
  fit.fitted = Matrix::Constant(n, n, std::numeric_limits<double>::quiet_NaN());
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) fit.fitted(i, j) = fit.beta_hat * std::log(distances(i, j)) + c.fe_origin(i) + c.fe_dest(j);
  return fit;
}

/// One draw from the (quasi-)posterior N(theta_hat, sigma_hat), or, with
/// `lognormal`, from exp N(log theta_hat, D^-1 sigma_hat D^-1) with
/// D = diag(theta_hat), whose median is theta_hat.
template <class URBG>
Vector sample_theta(const EstimatorResult& est, URBG& rng, bool lognormal = false) {
  const Eigen::Index d = est.dim();
  Matrix sigma = (est.sigma_hat() + est.sigma_hat().transpose()) / 2.0;
  Vector center = est.theta_hat();
  if (lognormal) {
    require((center.array() > 0.0).all(), ErrorKind::InvalidInput, "log-normal draws need positive theta_hat");
    const Vector inv = center.cwiseInverse();
    sigma = inv.asDiagonal() * sigma * inv.asDiagonal();
    center = center.array().log();
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma);
  const double scale = std::max(1.0, sigma.cwiseAbs().maxCoeff());
  require(eig.eigenvalues().minCoeff() >= -1e-10 * scale, ErrorKind::NotPSD, "sigma_hat is not PSD");
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector z(d);
  for (Eigen::Index k = 0; k < d; ++k) z(k) = normal(rng);
  const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  Vector draw = center + eig.eigenvectors() * root.cwiseProduct(z);
  if (lognormal) draw = draw.array().exp();
  return draw;
}

}  // namespace flowuq::gravity
