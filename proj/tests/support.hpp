#pragma once

// Reference computations used as oracles by the tests. Each one solves the
// same problem as library code by a deliberately different route (dense
// designs, levels instead of logs, brute-force enumeration, quadrature).

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "flowuq/core.hpp"
#include "flowuq/fixed_effects.hpp"

namespace oracle {

using flowuq::Matrix;
using flowuq::Vector;

/// Counterfactual income changes from Newton's method on the levels system
///   f_i(y) = sum_j lambda_prop_ij(y) lambda_ij E_j y_j - y_i Y_i,  i < n
///   sum_i y_i Y_i = sum_i Y_i,
/// with a central-difference Jacobian, iterated to |f| < 1e-14 (relative).
inline Vector armington_income(const Matrix& flows, const Matrix& tau, double eps) {
  using LD = long double;
  const Eigen::Index n = flows.rows();
  const Vector Y = flows.rowwise().sum();
  const Vector E = flows.colwise().sum().transpose();
  auto residual = [&](const Vector& y) {
    Vector f(n);
    for (Eigen::Index i = 0; i < n - 1; ++i) {
      LD total = 0.0L;
      for (Eigen::Index j = 0; j < n; ++j) {
        LD denom = 0.0L;
        for (Eigen::Index k = 0; k < n; ++k)
          denom += static_cast<LD>(flows(k, j) / E(j)) * std::pow(static_cast<LD>(tau(k, j) * y(k)), static_cast<LD>(-eps));
        const LD share_change = std::pow(static_cast<LD>(tau(i, j) * y(i)), static_cast<LD>(-eps)) / denom;
        total += share_change * static_cast<LD>(flows(i, j)) * static_cast<LD>(y(j));
      }
      f(i) = static_cast<double>((total - static_cast<LD>(y(i) * Y(i))) / static_cast<LD>(Y(i)));
    }
    f(n - 1) = (Y.dot(y) - Y.sum()) / Y.sum();
    return f;
  };
  Vector y = Vector::Ones(n);
  for (int it = 0; it < 100; ++it) {
    const Vector f = residual(y);
    if (f.cwiseAbs().maxCoeff() < 1e-14) break;
    Matrix J(n, n);
    for (Eigen::Index m = 0; m < n; ++m) {
      const double h = 1e-6 * y(m);
      Vector up = y, dn = y;
      up(m) += h;
      dn(m) -= h;
      J.col(m) = (residual(up) - residual(dn)) / (2.0 * h);
    }
    y -= J.fullPivLu().solve(f);
  }
  return y;
}

/// Welfare changes lambda_prop_ii^(-1/eps) implied by income changes y.
inline Vector armington_welfare(const Matrix& flows, const Matrix& tau, double eps, const Vector& y) {
  const Eigen::Index n = flows.rows();
  const Vector E = flows.colwise().sum().transpose();
  Vector w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double denom = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) denom += flows(k, i) / E(i) * std::pow(tau(k, i) * y(k), -eps);
    w(i) = std::pow(std::pow(y(i), -eps) / denom, -1.0 / eps);
  }
  return w;
}

/// Least squares with explicit origin and destination dummies (first origin
/// dropped), solved by column-pivoting QR. Returns all coefficients in the
/// order [covariates | origin 1..n-1 | destination 0..n-1].
inline Vector dense_twoway_ols(const Vector& y, const Matrix& x, const std::vector<flowuq::Cell>& cells,
                               Eigen::Index n, const Vector* weights = nullptr) {
  const Eigen::Index N = y.size();
  const Eigen::Index p = x.cols();
  Matrix X = Matrix::Zero(N, p + 2 * n - 1);
  for (Eigen::Index r = 0; r < N; ++r) {
    X.row(r).head(p) = x.row(r);
    const auto& c = cells[static_cast<std::size_t>(r)];
    if (c.origin > 0) X(r, p + c.origin - 1) = 1.0;
    X(r, p + n - 1 + c.dest) = 1.0;
  }
  if (weights == nullptr) return X.colPivHouseholderQr().solve(y);
  const Vector sw = weights->cwiseSqrt();
  return (sw.asDiagonal() * X).colPivHouseholderQr().solve(sw.asDiagonal() * y);
}

/// Full design matrix of the same layout.
inline Matrix dense_design(const Matrix& x, const std::vector<flowuq::Cell>& cells, Eigen::Index n) {
  const Eigen::Index N = x.rows();
  const Eigen::Index p = x.cols();
  Matrix X = Matrix::Zero(N, p + 2 * n - 1);
  for (Eigen::Index r = 0; r < N; ++r) {
    X.row(r).head(p) = x.row(r);
    const auto& c = cells[static_cast<std::size_t>(r)];
    if (c.origin > 0) X(r, p + c.origin - 1) = 1.0;
    X(r, p + n - 1 + c.dest) = 1.0;
  }
  return X;
}

/// Dyadic-robust sandwich variance of the first coefficient by brute force:
/// bread = X' diag(mu) X over all parameters, meat = sum over every ordered
/// pair of observations sharing a location of s_d s_d'^T.
inline double dyadic_sandwich(const Vector& y, const Vector& mu, const Matrix& x,
                              const std::vector<flowuq::Cell>& cells, Eigen::Index n, bool independent = false) {
  const Matrix X = dense_design(x, cells, n);
  const Matrix bread = X.transpose() * mu.asDiagonal() * X;
  const Eigen::Index N = y.size();
  Matrix S(N, X.cols());
  for (Eigen::Index r = 0; r < N; ++r) S.row(r) = X.row(r) * (y(r) - mu(r));
  Matrix meat = Matrix::Zero(X.cols(), X.cols());
  for (Eigen::Index a = 0; a < N; ++a)
    for (Eigen::Index b = 0; b < N; ++b) {
      const auto& ca = cells[static_cast<std::size_t>(a)];
      const auto& cb = cells[static_cast<std::size_t>(b)];
      const bool share = ca.origin == cb.origin || ca.origin == cb.dest || ca.dest == cb.origin || ca.dest == cb.dest;
      if (independent ? a == b : share) meat += S.row(a).transpose() * S.row(b);
    }
  const Matrix inv = bread.inverse();
  return (inv * meat * inv)(0, 0);
}

struct Moments {
  double mean;
  double variance;
};

/// Posterior moments of log F for prior N(mu, s2) and a log observation
/// N(log F, sigma2), by a 10^4-point grid over +-12 prior-or-likelihood sds.
inline Moments posterior_by_quadrature(double log_obs, double mu, double s2, double sigma2) {
  const double sd = std::sqrt(std::max(s2, sigma2));
  const double lo = std::min(mu, log_obs) - 12.0 * sd;
  const double hi = std::max(mu, log_obs) + 12.0 * sd;
  const int K = 10000;
  const double h = (hi - lo) / (K - 1);
  double z = 0.0, m1 = 0.0, m2 = 0.0;
  for (int k = 0; k < K; ++k) {
    const double v = lo + h * k;
    const double w = std::exp(-0.5 * (v - mu) * (v - mu) / s2 - 0.5 * (log_obs - v) * (log_obs - v) / sigma2);
    const double trap = (k == 0 || k == K - 1) ? 0.5 : 1.0;
    z += trap * w;
    m1 += trap * w * v;
    m2 += trap * w * v * v;
  }
  const double mean = m1 / z;
  return {mean, m2 / z - mean * mean};
}

/// Forward simulation of zero patterns: a true zero with probability p, and
/// otherwise each of two reports is independently zero with probability b.
/// Returns period counts (two zeros, one zero, no zero).
inline std::array<std::size_t, 3> simulate_zero_pattern(double p, double b, std::size_t T, std::mt19937_64& rng) {
  std::bernoulli_distribution true_zero(p), spurious(b);
  std::array<std::size_t, 3> c{0, 0, 0};
  for (std::size_t t = 0; t < T; ++t) {
    if (true_zero(rng)) {
      ++c[0];
      continue;
    }
    const int zeros = static_cast<int>(spurious(rng)) + static_cast<int>(spurious(rng));
    ++c[zeros == 2 ? 0 : (zeros == 1 ? 1 : 2)];
  }
  return c;
}

}  // namespace oracle
