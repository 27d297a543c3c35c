#pragma once

// Independent reference implementations used only by the tests.

#include <Eigen/Dense>

#include <cmath>

namespace oracle {

/// O(m n^2) double loop over the textbook covariance definition.
inline Eigen::MatrixXd covariance(const Eigen::MatrixXd& x) {
  const Eigen::Index m = x.rows(), n = x.cols();
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index r = 0; r < m; ++r) mu(j) += x(r, j);
    mu(j) /= static_cast<double>(m);
  }
  Eigen::MatrixXd c(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      double acc = 0.0;
      for (Eigen::Index r = 0; r < m; ++r) acc += (x(r, i) - mu(i)) * (x(r, j) - mu(j));
      c(i, j) = acc / static_cast<double>(m - 1);
    }
  return c;
}

/// Pearson correlation straight from the data columns.
inline double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double ma = a.mean(), mb = b.mean();
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    sab += (a(i) - ma) * (b(i) - mb);
    saa += (a(i) - ma) * (a(i) - ma);
    sbb += (b(i) - mb) * (b(i) - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

inline double leaky_relu(double v) { return v > 0.0 ? v : 0.01 * v; }
inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace oracle
