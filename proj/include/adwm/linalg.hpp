#pragma once

// Dense covariance, correlation and symmetric eigen machinery, templated on
// the scalar type so the same code runs on double and on instrumented scalars.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "adwm/error.hpp"

namespace adwm::linalg {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// C = (X - mean)^T (X - mean) / (m - 1) for an m x n observation matrix,
/// returned as (C + C^T) / 2.
template <typename Derived>
Matrix<typename Derived::Scalar> covariance(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index m = x.rows();
  if (m < 2) {
    throw DegenerateSampleError("covariance needs at least 2 samples, got " + std::to_string(m));
  }
  const Vector<Scalar> mu = x.colwise().sum().transpose() / Scalar(m);
  const Matrix<Scalar> centered = x.rowwise() - mu.transpose();
  const Matrix<Scalar> c = (centered.transpose() * centered) / Scalar(m - 1);
  return (c + c.transpose()) / Scalar(2);
}

/// Pearson-style normalization of a covariance matrix; eps guards zero variance.
template <typename Derived>
Matrix<typename Derived::Scalar> correlation(const Eigen::MatrixBase<Derived>& c, double eps = 1e-8) {
  using Scalar = typename Derived::Scalar;
  if (c.rows() != c.cols()) {
    throw DimensionError("correlation expects a square matrix");
  }
  const Vector<Scalar> inv_sd =
      (c.diagonal().array() + Scalar(eps)).sqrt().inverse().matrix();
  return inv_sd.asDiagonal() * c * inv_sd.asDiagonal();
}

template <typename Scalar>
struct PcaResult {
  Vector<Scalar> eigenvalues;   // descending
  Matrix<Scalar> eigenvectors;  // orthonormal columns, same order
  int sweeps = 0;

  Matrix<Scalar> basis(Eigen::Index k) const {
    if (k < 0 || k > eigenvectors.cols()) {
      throw DimensionError("basis size " + std::to_string(k) + " exceeds feature count " +
                           std::to_string(eigenvectors.cols()));
    }
    return eigenvectors.leftCols(k);
  }
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Sweeps until the off-diagonal Frobenius norm falls below
/// tol * max(1, ||C||_F). Eigenpairs are sorted by descending eigenvalue and
/// each eigenvector is signed so its largest-magnitude entry is positive.
template <typename Derived>
PcaResult<typename Derived::Scalar> jacobi_eigen(const Eigen::MatrixBase<Derived>& c,
                                                 int max_sweeps = 100, double tol = 1e-12) {
  using Scalar = typename Derived::Scalar;
  using std::abs;
  using std::sqrt;
  const Eigen::Index n = c.rows();
  if (n != c.cols()) {
    throw DimensionError("eigendecomposition expects a square matrix");
  }
  Matrix<Scalar> a = c;
  const Scalar scale = std::max(Scalar(1), a.norm());
  if ((a - a.transpose()).norm() > Scalar(1e-9) * scale) {
    throw NumericError("eigendecomposition expects a symmetric matrix");
  }
  Matrix<Scalar> v = Matrix<Scalar>::Identity(n, n);

  auto off_norm = [&] {
    Scalar s(0);
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < n; ++i)
        if (i != j) s += a(i, j) * a(i, j);
    return sqrt(s);
  };

  int sweep = 0;
  while (off_norm() >= Scalar(tol) * scale) {
    if (sweep == max_sweeps) {
      throw NumericError("Jacobi eigensolver did not converge in " + std::to_string(max_sweeps) +
                         " sweeps");
    }
    ++sweep;
    for (Eigen::Index p = 0; p + 1 < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const Scalar apq = a(p, q);
        if (apq == Scalar(0)) continue;
        // Symmetric Schur 2x2: choose the smaller rotation angle.
        const Scalar theta = (a(q, q) - a(p, p)) / (Scalar(2) * apq);
        const Scalar sign = theta >= Scalar(0) ? Scalar(1) : Scalar(-1);
        const Scalar t = sign / (abs(theta) + sqrt(theta * theta + Scalar(1)));
        const Scalar cs = Scalar(1) / sqrt(t * t + Scalar(1));
        const Scalar sn = t * cs;
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar akp = a(k, p);
          const Scalar akq = a(k, q);
          a(k, p) = cs * akp - sn * akq;
          a(k, q) = sn * akp + cs * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar apk = a(p, k);
          const Scalar aqk = a(q, k);
          a(p, k) = cs * apk - sn * aqk;
          a(q, k) = sn * apk + cs * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar vkp = v(k, p);
          const Scalar vkq = v(k, q);
          v(k, p) = cs * vkp - sn * vkq;
          v(k, q) = sn * vkp + cs * vkq;
        }
      }
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index i, Eigen::Index j) { return a(i, i) > a(j, j); });

  PcaResult<Scalar> result;
  result.sweeps = sweep;
  result.eigenvalues.resize(n);
  result.eigenvectors.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index src = order[static_cast<std::size_t>(k)];
    result.eigenvalues(k) = a(src, src);
    Vector<Scalar> col = v.col(src);
    Eigen::Index arg = 0;
    for (Eigen::Index i = 1; i < n; ++i)
      if (abs(col(i)) > abs(col(arg))) arg = i;
    if (col(arg) < Scalar(0)) col = -col;
    result.eigenvectors.col(k) = col;
  }
  return result;
}

/// Y = P^T (X - mean)^T: k x m coordinates of the centered samples in basis P (n x k).
template <typename DerivedX, typename DerivedP>
Matrix<typename DerivedX::Scalar> pca_project(const Eigen::MatrixBase<DerivedX>& x,
                                              const Eigen::MatrixBase<DerivedP>& basis) {
  using Scalar = typename DerivedX::Scalar;
  if (basis.rows() != x.cols()) {
    throw DimensionError("projection basis has " + std::to_string(basis.rows()) +
                         " rows, observations have " + std::to_string(x.cols()) + " features");
  }
  if (basis.cols() > basis.rows()) {
    throw DimensionError("projection rank " + std::to_string(basis.cols()) +
                         " exceeds feature count " + std::to_string(basis.rows()));
  }
  const Vector<Scalar> mu = x.colwise().sum().transpose() / Scalar(x.rows());
  const Matrix<Scalar> centered = x.rowwise() - mu.transpose();
  return basis.transpose() * centered.transpose();
}

/// Sum of per-row sample variances (m - 1 denominator) of projected coordinates.
template <typename Derived>
typename Derived::Scalar captured_variance(const Eigen::MatrixBase<Derived>& y) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index m = y.cols();
  if (m < 2) throw DegenerateSampleError("captured variance needs at least 2 samples");
  const Vector<Scalar> mu = y.rowwise().sum() / Scalar(m);
  return (y.colwise() - mu).squaredNorm() / Scalar(m - 1);
}

}  // namespace adwm::linalg
