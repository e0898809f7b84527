#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "flowuq/core.hpp"

namespace flowuq::armington {

struct SolverOptions {
  double damping = 0.5;
  double tolerance = 1e-10;  // sup-norm on log income changes
  int max_iterations = 10000;
  int newton_after = 200;  // substitution iterations before switching to Newton steps
};

/// Proportional changes between the baseline and counterfactual equilibrium.
struct EquilibriumResult {
  Vector y_prop;       // income changes
  Matrix lambda_prop;  // expenditure-share changes
  Vector welfare_prop; // welfare changes
  double residual = 0.0;
  int iterations = 0;
  // sum_j E_j y_j / sum_i Y_i y_i - 1. Zero for balanced baselines; with
  // fixed deficit ratios the income equations hold up to this common factor.
  double adding_up_gap = 0.0;
};

namespace detail {

// Share changes for a given vector of income changes:
//   lambda_prop_ij = (tau_ij y_i)^-eps / sum_k lambda_kj (tau_kj y_k)^-eps
inline Matrix share_changes(const Matrix& lambda, const Matrix& tau, const Vector& y, double epsilon) {
  const Eigen::Index n = y.size();
  Matrix cost_term(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) cost_term(i, j) = std::pow(tau(i, j) * y(i), -epsilon);
  const Vector denom = lambda.cwiseProduct(cost_term).colwise().sum().transpose();
  return cost_term * denom.cwiseInverse().asDiagonal();
}

}  // namespace detail

namespace detail {

// Log excess supply h_i = log(sum_j lambda_prop_ij lambda_ij E_j y_j) - log Y_i - log y_i
// and, on request, its Jacobian with respect to log y.
struct ExcessDemand {
  Vector h;
  Matrix jacobian;
};

inline ExcessDemand log_excess_demand(const Aggregates& agg, const Matrix& tau, const Vector& log_y, double epsilon,
                                      bool with_jacobian) {
  const Vector y = log_y.array().exp();
  const Matrix lp = share_changes(agg.shares, tau, y, epsilon);
  const Matrix new_shares = lp.cwiseProduct(agg.shares);                              // pi_ij
  Matrix sales = new_shares * (agg.expenditure.cwiseProduct(y)).asDiagonal();        // pi_ij E_j y_j
  const Vector rhs = sales.rowwise().sum();
  ExcessDemand out;
  out.h = rhs.array().log() - agg.income.array().log() - log_y.array();
  if (!with_jacobian) return out;
  const Matrix a = rhs.cwiseInverse().asDiagonal() * sales;  // sales shares, rows sum to 1
  out.jacobian = epsilon * a * new_shares.transpose() + a;
  out.jacobian.diagonal().array() -= epsilon + 1.0;
  return out;
}

inline double centered_sup(const Vector& v) { return (v.array() - v.mean()).abs().maxCoeff(); }

}  // namespace detail

/// Solves the income fixed point
///   y_i Y_i = sum_j lambda_prop_ij(y) lambda_ij E_j y_j
/// by damped substitution in logs. The own income change is isolated on the
/// left (y_i^(1+eps) = ...), which keeps the substitution map contracting
/// for large elasticities. If substitution has not converged after
/// `newton_after` iterations (slow when some location barely trades), the
/// solve continues with Newton steps on the same equations.
/// World income is held fixed, and convergence is judged on the step net of
/// its mean: with trade imbalances the equations can only hold up to a
/// common factor (see adding_up_gap).
inline EquilibriumResult solve_counterfactual(const FlowMatrix& flows, const CounterfactualSpec& spec,
                                              double epsilon, const SolverOptions& opts = {}) {
  require(std::isfinite(epsilon) && epsilon > 0.0, ErrorKind::InvalidElasticity,
          "trade elasticity must be positive, got " + std::to_string(epsilon));
  require(spec.size() == flows.size(), ErrorKind::InvalidInput, "spec and flows differ in size");
  require(spec.has_unit_diagonal(), ErrorKind::InvalidInput, "own trade costs cannot change");
  const Eigen::Index n = flows.size();
  for (Eigen::Index i = 0; i < n; ++i)
    require(flows(i, i) > 0.0, ErrorKind::InvalidInput,
            "own flow of " + flows.labels()[i] + " is zero; welfare change undefined");

  const Aggregates agg = derive_aggregates(flows);
  const Matrix& tau = spec.values();
  const double world = agg.income.sum();
  auto normalize = [&](Vector& log_y) {
    const double level = (log_y.array().exp() * agg.income.array()).sum() / world;
    log_y.array() -= std::log(level);
  };

  Vector log_y = Vector::Zero(n);
  EquilibriumResult out;
  bool converged = false;
  int it = 0;
  // The isolated-own-term update is log_y + h / (1 + eps).
  for (; it < std::min(opts.newton_after, opts.max_iterations) && !converged; ++it) {
    const Vector step = detail::log_excess_demand(agg, tau, log_y, epsilon, false).h / (1.0 + epsilon);
    out.residual = detail::centered_sup(step);
    if (!std::isfinite(out.residual)) break;
    if (out.residual <= opts.tolerance) {
      log_y += step;
      converged = true;
    } else {
      log_y += opts.damping * step;
    }
    normalize(log_y);
  }
  // Newton phase: J d - c 1 = -h with the world-income constraint w'd = 0;
  // c absorbs the common factor left by imbalances.
  for (; !converged && std::isfinite(out.residual) && it < opts.max_iterations; ++it) {
    const detail::ExcessDemand ed = detail::log_excess_demand(agg, tau, log_y, epsilon, true);
    Matrix system = Matrix::Zero(n + 1, n + 1);
    Vector rhs = Vector::Zero(n + 1);
    system.topLeftCorner(n, n) = ed.jacobian;
    system.topRightCorner(n, 1).setConstant(-1.0);
    system.bottomLeftCorner(1, n) = (log_y.array().exp() * agg.income.array()).matrix().transpose() / world;
    rhs.head(n) = -ed.h;
    const Vector delta = system.partialPivLu().solve(rhs).head(n);
    const double before = detail::centered_sup(ed.h);
    double t = 1.0;
    Vector trial = log_y;
    for (int k = 0; k < 30; ++k, t /= 2.0) {
      trial = log_y + t * delta;
      normalize(trial);
      const double after = detail::centered_sup(detail::log_excess_demand(agg, tau, trial, epsilon, false).h);
      if (std::isfinite(after) && after < before) break;
    }
    log_y = trial;
    const Vector step = detail::log_excess_demand(agg, tau, log_y, epsilon, false).h / (1.0 + epsilon);
    out.residual = detail::centered_sup(step);
    if (out.residual <= opts.tolerance) {
      log_y += step;
      normalize(log_y);
      converged = true;
    }
  }
  out.iterations = it;
  if (!converged)
    throw Error(ErrorKind::NoConvergence, "income fixed point after " + std::to_string(out.iterations) +
                                              " iterations, residual " + std::to_string(out.residual));

  out.y_prop = log_y.array().exp();
  out.adding_up_gap = agg.expenditure.dot(out.y_prop) / agg.income.dot(out.y_prop) - 1.0;
  out.lambda_prop = detail::share_changes(agg.shares, tau, out.y_prop, epsilon);
  out.welfare_prop.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) out.welfare_prop(i) = std::pow(out.lambda_prop(i, i), -1.0 / epsilon);
  return out;
}

/// gamma_q = 100 (W_q - 1).
inline Vector welfare_change_pct(const EquilibriumResult& result) {
  return 100.0 * (result.welfare_prop.array() - 1.0);
}

/// Sup-norm defect of the income equation at `y_prop`, relative to Y_i.
inline double income_equation_defect(const FlowMatrix& flows, const CounterfactualSpec& spec, double epsilon,
                                      const Vector& y_prop) {
  const Aggregates agg = derive_aggregates(flows);
  const Matrix lp = detail::share_changes(agg.shares, spec.values(), y_prop, epsilon);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < y_prop.size(); ++i) {
    double rhs = 0.0;
    for (Eigen::Index j = 0; j < y_prop.size(); ++j)
      rhs += lp(i, j) * agg.shares(i, j) * agg.expenditure(j) * y_prop(j);
    worst = std::max(worst, std::abs(rhs - y_prop(i) * agg.income(i)) / agg.income(i));
  }
  return worst;
}

/// The built-in `armington` model: theta = (epsilon), outcome = percentage
/// welfare change for the selected locations (all by default).
class Model final : public ModelFunction {
 public:
  explicit Model(SolverOptions opts = {}, std::vector<Eigen::Index> outcomes = {})
      : opts_(opts), outcomes_(std::move(outcomes)) {}

  std::string name() const override { return "armington"; }

  Vector evaluate(const FlowMatrix& flows, const Vector& theta, const CounterfactualSpec& spec) const override {
    require(theta.size() == 1, ErrorKind::InvalidInput, "armington expects a scalar elasticity");
    const Vector all = welfare_change_pct(solve_counterfactual(flows, spec, theta(0), opts_));
    if (outcomes_.empty()) return all;
    Vector out(static_cast<Eigen::Index>(outcomes_.size()));
    for (std::size_t q = 0; q < outcomes_.size(); ++q) out(static_cast<Eigen::Index>(q)) = all(outcomes_[q]);
    return out;
  }

  std::vector<std::string> outcome_labels(const FlowMatrix& flows) const override {
    if (outcomes_.empty()) return flows.labels();
    std::vector<std::string> out;
    for (Eigen::Index q : outcomes_) out.push_back(flows.labels()[static_cast<std::size_t>(q)]);
    return out;
  }

 private:
  SolverOptions opts_;
  std::vector<Eigen::Index> outcomes_;
};

}  // namespace flowuq::armington
