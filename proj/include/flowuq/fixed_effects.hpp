#pragma once

#include <numeric>
#include <string>
#include <vector>

#include "flowuq/core.hpp"

namespace flowuq {

struct Cell {
  Eigen::Index origin;
  Eigen::Index dest;
};

struct TwoWayCoefficients {
  Vector coef;       // slopes on the covariates
  Vector fe_origin;  // first entry normalized to 0
  Vector fe_dest;
};

/// Weighted least squares with origin and destination fixed effects plus a
/// few dense covariates. Each observation touches at most two dummy columns,
/// so the normal equations are accumulated row by row and solved densely.
///
/// Parameter layout: [covariates | origin 1..n_o-1 | dest 0..n_d-1].
class TwoWayDesign {
 public:
  TwoWayDesign(Eigen::Index n_origin, Eigen::Index n_dest, std::vector<Cell> cells, Matrix covariates)
      : n_origin_(n_origin), n_dest_(n_dest), cells_(std::move(cells)), x_(std::move(covariates)) {
    require(static_cast<Eigen::Index>(cells_.size()) == x_.rows(), ErrorKind::InvalidInput,
            "covariate rows must match the number of cells");
    check_identified();
  }

  Eigen::Index observations() const noexcept { return static_cast<Eigen::Index>(cells_.size()); }
  Eigen::Index covariates() const noexcept { return x_.cols(); }
  Eigen::Index parameters() const noexcept { return x_.cols() + n_origin_ - 1 + n_dest_; }
  const std::vector<Cell>& cells() const noexcept { return cells_; }
  const Matrix& covariate_matrix() const noexcept { return x_; }

  /// Throws Collinear if some covariate lies (numerically) in the span of the
  /// fixed effects under weights `w`.
  void check_covariates(const Vector& w) const {
    const TwoWayDesign fe_only(n_origin_, n_dest_, cells_, Matrix(observations(), 0), Unchecked{});
    for (Eigen::Index c = 0; c < x_.cols(); ++c) {
      const Vector col = x_.col(c);
      const Vector resid = col - fe_only.fitted(fe_only.solve(col, w));
      const double total = col.cwiseProduct(w).dot(col);
      const double remaining = resid.cwiseProduct(w).dot(resid);
      require(total > 0.0 && remaining > 1e-10 * total, ErrorKind::Collinear,
              "covariate " + std::to_string(c) + " has no variation beyond the fixed effects");
    }
  }

  TwoWayCoefficients solve(const Vector& y, const Vector& w) const {
    const Eigen::Index p = x_.cols();
    const Eigen::Index k = parameters();
    Matrix normal = Matrix::Zero(k, k);
    Vector rhs = Vector::Zero(k);
    std::vector<Eigen::Index> idx;
    std::vector<double> val;
    for (Eigen::Index r = 0; r < observations(); ++r) {
      row_entries(r, idx, val);
      const double wr = w(r);
      for (std::size_t a = 0; a < idx.size(); ++a) {
        rhs(idx[a]) += wr * val[a] * y(r);
        for (std::size_t b = 0; b < idx.size(); ++b) normal(idx[a], idx[b]) += wr * val[a] * val[b];
      }
    }
    Eigen::LDLT<Matrix> ldlt(normal);
    require(ldlt.info() == Eigen::Success, ErrorKind::Collinear, "normal equations are singular");
    const Vector beta = ldlt.solve(rhs);
    require(beta.allFinite(), ErrorKind::Collinear, "normal equations are singular");

    TwoWayCoefficients out;
    out.coef = beta.head(p);
    out.fe_origin = Vector::Zero(n_origin_);
    out.fe_origin.tail(n_origin_ - 1) = beta.segment(p, n_origin_ - 1);
    out.fe_dest = beta.tail(n_dest_);
    return out;
  }

  Vector fitted(const TwoWayCoefficients& c) const {
    Vector out(observations());
    for (Eigen::Index r = 0; r < observations(); ++r) out(r) = predict(c, r);
    return out;
  }

  double predict(const TwoWayCoefficients& c, Eigen::Index r) const {
    const Cell& cell = cells_[static_cast<std::size_t>(r)];
    double v = c.fe_origin(cell.origin) + c.fe_dest(cell.dest);
    if (x_.cols() > 0) v += x_.row(r).dot(c.coef);
    return v;
  }

  /// Residual of `v` after a weighted projection on the fixed effects alone.
  Vector partial_out(const Vector& v, const Vector& w) const {
    const TwoWayDesign fe_only(n_origin_, n_dest_, cells_, Matrix(observations(), 0), Unchecked{});
    return v - fe_only.fitted(fe_only.solve(v, w));
  }

 private:
  struct Unchecked {};

  TwoWayDesign(Eigen::Index n_origin, Eigen::Index n_dest, std::vector<Cell> cells, Matrix covariates,
               Unchecked)
      : n_origin_(n_origin), n_dest_(n_dest), cells_(std::move(cells)), x_(std::move(covariates)) {}

  void row_entries(Eigen::Index r, std::vector<Eigen::Index>& idx, std::vector<double>& val) const {
    idx.clear();
    val.clear();
    const Eigen::Index p = x_.cols();
    for (Eigen::Index c = 0; c < p; ++c) {
      idx.push_back(c);
      val.push_back(x_(r, c));
    }
    const Cell& cell = cells_[static_cast<std::size_t>(r)];
    if (cell.origin > 0) {
      idx.push_back(p + cell.origin - 1);
      val.push_back(1.0);
    }
    idx.push_back(p + n_origin_ - 1 + cell.dest);
    val.push_back(1.0);
  }

  // Every origin and destination must be observed, and the bipartite
  // origin/destination graph must be connected for the effects to be
  // identified up to the single normalization.
  void check_identified() const {
    require(n_origin_ > 0 && n_dest_ > 0, ErrorKind::InsufficientData, "no fixed-effect levels");
    std::vector<Eigen::Index> parent(static_cast<std::size_t>(n_origin_ + n_dest_));
    std::iota(parent.begin(), parent.end(), Eigen::Index{0});
    auto find = [&](Eigen::Index a) {
      while (parent[a] != a) a = parent[a] = parent[parent[a]];
      return a;
    };
    std::vector<char> seen_o(static_cast<std::size_t>(n_origin_), 0);
    std::vector<char> seen_d(static_cast<std::size_t>(n_dest_), 0);
    for (const Cell& c : cells_) {
      seen_o[c.origin] = 1;
      seen_d[c.dest] = 1;
      parent[find(c.origin)] = find(n_origin_ + c.dest);
    }
    for (Eigen::Index i = 0; i < n_origin_; ++i)
      require(seen_o[i], ErrorKind::InsufficientData, "origin " + std::to_string(i) + " has no observations");
    for (Eigen::Index j = 0; j < n_dest_; ++j)
      require(seen_d[j], ErrorKind::InsufficientData,
              "destination " + std::to_string(j) + " has no observations");
    const Eigen::Index root = find(0);
    for (Eigen::Index a = 1; a < n_origin_ + n_dest_; ++a)
      require(find(a) == root, ErrorKind::InsufficientData,
              "fixed effects not identified: observations split into disconnected groups");
  }

  Eigen::Index n_origin_;
  Eigen::Index n_dest_;
  std::vector<Cell> cells_;
  Matrix x_;
};

}  // namespace flowuq
