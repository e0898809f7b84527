#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "flowuq/error.hpp"

namespace flowuq {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

namespace detail {

inline std::vector<std::string> default_labels(Eigen::Index n) {
  std::vector<std::string> labels;
  labels.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) labels.push_back("L" + std::to_string(i));
  return labels;
}

inline void check_labels(const std::vector<std::string>& labels, Eigen::Index n) {
  require(static_cast<Eigen::Index>(labels.size()) == n, ErrorKind::InvalidInput,
          "label count does not match matrix dimension");
  std::unordered_set<std::string> seen(labels.begin(), labels.end());
  require(seen.size() == labels.size(), ErrorKind::InvalidInput, "location labels must be unique");
}

}  // namespace detail

/// Square matrix of non-negative dyadic flows. Row index is the origin,
/// column index the destination; own flows sit on the diagonal.
class FlowMatrix {
 public:
  FlowMatrix(std::vector<std::string> labels, Matrix values)
      : labels_(std::move(labels)), values_(std::move(values)) {
    require(values_.rows() == values_.cols(), ErrorKind::InvalidInput, "flow matrix must be square");
    require(values_.rows() > 0, ErrorKind::InvalidInput, "flow matrix is empty");
    detail::check_labels(labels_, values_.rows());
    for (Eigen::Index i = 0; i < values_.rows(); ++i)
      for (Eigen::Index j = 0; j < values_.cols(); ++j) {
        const double v = values_(i, j);
        require(std::isfinite(v) && v >= 0.0, ErrorKind::InvalidInput,
                "flow (" + labels_[i] + ", " + labels_[j] + ") must be finite and non-negative");
      }
  }

  explicit FlowMatrix(const Matrix& values) : FlowMatrix(detail::default_labels(values.rows()), values) {}

  Eigen::Index size() const noexcept { return values_.rows(); }
  const Matrix& values() const noexcept { return values_; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return values_(i, j); }

  FlowMatrix with_values(Matrix values) const { return FlowMatrix(labels_, std::move(values)); }

 private:
  std::vector<std::string> labels_;
  Matrix values_;
};

/// Pairwise distances; only off-diagonal entries are meaningful.
class DistanceMatrix {
 public:
  explicit DistanceMatrix(Matrix values) : values_(std::move(values)) {
    require(values_.rows() == values_.cols(), ErrorKind::InvalidInput, "distance matrix must be square");
    for (Eigen::Index i = 0; i < values_.rows(); ++i)
      for (Eigen::Index j = 0; j < values_.cols(); ++j) {
        if (i == j) continue;
        require(std::isfinite(values_(i, j)) && values_(i, j) > 0.0, ErrorKind::InvalidInput,
                "off-diagonal distances must be finite and positive");
      }
  }

  Eigen::Index size() const noexcept { return values_.rows(); }
  const Matrix& values() const noexcept { return values_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return values_(i, j); }

 private:
  Matrix values_;
};

/// Proportional trade-cost changes applied in a counterfactual.
class CounterfactualSpec {
 public:
  explicit CounterfactualSpec(Matrix tau_change) : tau_(std::move(tau_change)) {
    require(tau_.rows() == tau_.cols(), ErrorKind::InvalidInput, "counterfactual spec must be square");
    require((tau_.array().isFinite() && tau_.array() > 0.0).all(), ErrorKind::InvalidInput,
            "proportional cost changes must be finite and positive");
  }

  static CounterfactualSpec identity(Eigen::Index n) { return CounterfactualSpec(Matrix::Ones(n, n)); }

  /// Every off-diagonal cost scaled by (1 + increase); own costs unchanged.
  static CounterfactualSpec uniform_increase(Eigen::Index n, double increase) {
    Matrix tau = Matrix::Constant(n, n, 1.0 + increase);
    tau.diagonal().setOnes();
    return CounterfactualSpec(std::move(tau));
  }

  Eigen::Index size() const noexcept { return tau_.rows(); }
  const Matrix& values() const noexcept { return tau_; }
  bool has_unit_diagonal() const { return (tau_.diagonal().array() == 1.0).all(); }

 private:
  Matrix tau_;
};

/// Point estimate and sampling variance of a structural parameter vector.
class EstimatorResult {
 public:
  EstimatorResult(Vector theta_hat, Matrix sigma_hat)
      : theta_(std::move(theta_hat)), sigma_(std::move(sigma_hat)) {
    require(sigma_.rows() == theta_.size() && sigma_.cols() == theta_.size(), ErrorKind::InvalidInput,
            "sigma_hat must be d x d for a d-dimensional theta_hat");
    require(theta_.allFinite() && sigma_.allFinite(), ErrorKind::InvalidInput,
            "estimator result contains non-finite values");
    const double scale = std::max(1.0, sigma_.cwiseAbs().maxCoeff());
    require((sigma_ - sigma_.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * scale, ErrorKind::NotPSD,
            "sigma_hat is not symmetric");
    if (sigma_.size() > 0) {
      Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma_);
      require(eig.eigenvalues().minCoeff() >= -1e-10 * scale, ErrorKind::NotPSD,
              "sigma_hat is not positive semidefinite");
    }
  }

  static EstimatorResult scalar(double theta, double variance) {
    return EstimatorResult(Vector::Constant(1, theta), Matrix::Constant(1, 1, variance));
  }

  const Vector& theta_hat() const noexcept { return theta_; }
  const Matrix& sigma_hat() const noexcept { return sigma_; }
  Eigen::Index dim() const noexcept { return theta_.size(); }

 private:
  Vector theta_;
  Matrix sigma_;
};

/// Counterfactual mapping gamma = g(D, theta). Implementations must be
/// deterministic and may throw flowuq::Error when they cannot produce a value
/// (for instance when an equilibrium solver does not converge).
class ModelFunction {
 public:
  virtual ~ModelFunction() = default;
  virtual std::string name() const = 0;
  virtual Vector evaluate(const FlowMatrix& flows, const Vector& theta,
                          const CounterfactualSpec& spec) const = 0;
  virtual std::vector<std::string> outcome_labels(const FlowMatrix& flows) const {
    return flows.labels();
  }
};

/// Either a value or a structured failure; never both.
struct ModelOutcome {
  std::optional<Vector> value;
  std::string diagnostic;

  bool ok() const noexcept { return value.has_value(); }
};

inline ModelOutcome evaluate_model(const ModelFunction& g, const FlowMatrix& flows, const Vector& theta,
                                   const CounterfactualSpec& spec) {
  require(spec.size() == flows.size(), ErrorKind::InvalidInput,
          "counterfactual spec and flow matrix dimensions differ");
  try {
    Vector gamma = g.evaluate(flows, theta, spec);
    if (!gamma.allFinite()) return {std::nullopt, g.name() + ": non-finite outcome"};
    return {std::move(gamma), {}};
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::InvalidInput) throw;
    return {std::nullopt, e.what()};
  }
}

/// Aggregates implied by a flow matrix.
struct Aggregates {
  Vector income;        // Y_i, row sums
  Vector expenditure;   // E_j, column sums
  Vector deficit_ratio; // kappa_i = (E_i - Y_i) / Y_i
  Matrix shares;        // lambda_ij = F_ij / E_j
};

inline Aggregates derive_aggregates(const FlowMatrix& flows) {
  const Matrix& f = flows.values();
  Aggregates agg;
  agg.income = f.rowwise().sum();
  agg.expenditure = f.colwise().sum().transpose();
  for (Eigen::Index i = 0; i < flows.size(); ++i) {
    require(agg.income(i) > 0.0, ErrorKind::ZeroMarginal, "zero income for " + flows.labels()[i]);
    require(agg.expenditure(i) > 0.0, ErrorKind::ZeroMarginal,
            "zero expenditure for " + flows.labels()[i]);
  }
  agg.deficit_ratio = (agg.expenditure - agg.income).cwiseQuotient(agg.income);
  agg.shares = f * agg.expenditure.cwiseInverse().asDiagonal();
  return agg;
}

enum class Provenance { OnlyEE, OnlyME, Both };

constexpr const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::OnlyEE: return "only-EE";
    case Provenance::OnlyME: return "only-ME";
    case Provenance::Both: return "EE+ME";
  }
  return "?";
}

/// Successful posterior draws of gamma (one row per draw, one column per
/// outcome), in draw-index order. Failed draws are counted, not stored.
struct DrawSet {
  Matrix draws;
  std::vector<std::size_t> draw_index;
  std::vector<std::string> outcome_labels;
  std::size_t requested = 0;
  std::size_t failed = 0;
  std::uint64_t seed = 0;
  Provenance provenance = Provenance::Both;

  std::size_t used() const noexcept { return static_cast<std::size_t>(draws.rows()); }

  std::vector<double> column(Eigen::Index q) const {
    std::vector<double> out(static_cast<std::size_t>(draws.rows()));
    for (Eigen::Index b = 0; b < draws.rows(); ++b) out[static_cast<std::size_t>(b)] = draws(b, q);
    return out;
  }
};

}  // namespace flowuq
