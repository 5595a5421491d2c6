#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "srom/error.hpp"

namespace srom {

/// Tridiagonal matrix stored by diagonals. lower(i) couples row i+1 to
/// column i, upper(i) couples row i to column i+1.
struct Tridiagonal {
  Eigen::VectorXd lower;
  Eigen::VectorXd diag;
  Eigen::VectorXd upper;

  Tridiagonal() = default;
  explicit Tridiagonal(Eigen::Index n)
      : lower(Eigen::VectorXd::Zero(n > 0 ? n - 1 : 0)),
        diag(Eigen::VectorXd::Zero(n)),
        upper(Eigen::VectorXd::Zero(n > 0 ? n - 1 : 0)) {}

  Eigen::Index size() const { return diag.size(); }

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const {
    const Eigen::Index n = size();
    Eigen::VectorXd y = diag.cwiseProduct(x);
    if (n > 1) {
      y.head(n - 1) += upper.cwiseProduct(x.tail(n - 1));
      y.tail(n - 1) += lower.cwiseProduct(x.head(n - 1));
    }
    return y;
  }

  /// x^T T y
  double bilinear(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const {
    return x.dot(apply(y));
  }

  Eigen::MatrixXd dense() const {
    const Eigen::Index n = size();
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) m(i, i) = diag(i);
    for (Eigen::Index i = 0; i + 1 < n; ++i) {
      m(i, i + 1) = upper(i);
      m(i + 1, i) = lower(i);
    }
    return m;
  }

  /// Thomas algorithm without pivoting; intended for the diagonally
  /// dominant Newton systems of the full-order solver.
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
    const Eigen::Index n = size();
    Eigen::VectorXd c(n), d(n);
    double pivot = diag(0);
    if (pivot == 0.0 || !std::isfinite(pivot)) throw NumericalError("tridiagonal solve: zero pivot");
    c(0) = n > 1 ? upper(0) / pivot : 0.0;
    d(0) = rhs(0) / pivot;
    for (Eigen::Index i = 1; i < n; ++i) {
      pivot = diag(i) - lower(i - 1) * c(i - 1);
      if (pivot == 0.0 || !std::isfinite(pivot))
        throw NumericalError("tridiagonal solve: zero pivot");
      c(i) = i + 1 < n ? upper(i) / pivot : 0.0;
      d(i) = (rhs(i) - lower(i - 1) * d(i - 1)) / pivot;
    }
    for (Eigen::Index i = n - 2; i >= 0; --i) d(i) -= c(i) * d(i + 1);
    return d;
  }
};

}  // namespace srom
