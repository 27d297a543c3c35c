#pragma once

// Instrumented scalar: counts products of two data-derived values while
// running real Eigen/linalg code paths. Constants (literals, Eigen's internal
// alpha factors) are untagged, so scaling by them is not a multiply-accumulate.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

#include "adwm/cacw.hpp"
#include "adwm/diagnostics.hpp"
#include "adwm/linalg.hpp"

namespace counting {

inline std::uint64_t& products() {
  static std::uint64_t count = 0;
  return count;
}

struct Counted {
  double v = 0.0;
  bool tagged = false;

  Counted() = default;
  Counted(double x) : v(x) {}  // NOLINT: implicit, constants are untagged
  Counted(double x, bool t) : v(x), tagged(t) {}

  static Counted data(double x) { return {x, true}; }

  Counted& operator+=(const Counted& o) { return *this = *this + o; }
  Counted& operator-=(const Counted& o) { return *this = *this - o; }
  Counted& operator*=(const Counted& o) { return *this = *this * o; }
  Counted& operator/=(const Counted& o) { return *this = *this / o; }

  friend Counted operator+(const Counted& a, const Counted& b) { return {a.v + b.v, a.tagged || b.tagged}; }
  friend Counted operator-(const Counted& a, const Counted& b) { return {a.v - b.v, a.tagged || b.tagged}; }
  friend Counted operator-(const Counted& a) { return {-a.v, a.tagged}; }
  friend Counted operator*(const Counted& a, const Counted& b) {
    if (a.tagged && b.tagged) ++products();
    return {a.v * b.v, a.tagged || b.tagged};
  }
  friend Counted operator/(const Counted& a, const Counted& b) { return {a.v / b.v, a.tagged || b.tagged}; }
  friend bool operator<(const Counted& a, const Counted& b) { return a.v < b.v; }
  friend bool operator>(const Counted& a, const Counted& b) { return a.v > b.v; }
  friend bool operator<=(const Counted& a, const Counted& b) { return a.v <= b.v; }
  friend bool operator>=(const Counted& a, const Counted& b) { return a.v >= b.v; }
  friend bool operator==(const Counted& a, const Counted& b) { return a.v == b.v; }
  friend bool operator!=(const Counted& a, const Counted& b) { return a.v != b.v; }
};

inline Counted sqrt(const Counted& a) { return {std::sqrt(a.v), a.tagged}; }
inline Counted abs(const Counted& a) { return {std::abs(a.v), a.tagged}; }
inline Counted exp(const Counted& a) { return {std::exp(a.v), a.tagged}; }

}  // namespace counting

namespace Eigen {
template <>
struct NumTraits<counting::Counted> : NumTraits<double> {
  using Real = counting::Counted;
  using NonInteger = counting::Counted;
  using Nested = counting::Counted;
  using Literal = counting::Counted;
  enum { IsComplex = 0, IsInteger = 0, IsSigned = 1, RequireInitialization = 1, ReadCost = 1, AddCost = 1, MulCost = 1 };
};
}  // namespace Eigen

namespace counting {

using Mat = Eigen::Matrix<Counted, Eigen::Dynamic, Eigen::Dynamic>;
using Vec = Eigen::Matrix<Counted, Eigen::Dynamic, 1>;

inline Mat random_data(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist;
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = Counted::data(dist(rng));
  return m;
}

template <typename F>
std::uint64_t count(F&& f) {
  const std::uint64_t before = products();
  f();
  return products() - before;
}

/// Row-shared n -> d -> 1 weighting head applied to every row of a correlation matrix.
inline Vec run_head(const Mat& corr, Eigen::Index d, std::mt19937_64& rng) {
  const Eigen::Index n = corr.rows();
  const Mat w1 = random_data(d, n, rng), b1 = random_data(d, 1, rng), w2 = random_data(1, d, rng);
  Vec out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Mat h = w1 * corr.row(i).transpose() + b1;
    for (Eigen::Index k = 0; k < d; ++k)
      if (h(k, 0) < Counted(0.0)) h(k, 0) = h(k, 0) * Counted(0.01);
    out(i) = (w2 * h)(0, 0);
  }
  return out;
}

/// Executes the weighting pipeline on counted scalars and reports products per component.
inline adwm::FlopCount instrumented(const adwm::FlopConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Eigen::Index hw = cfg.height * cfg.width, c = cfg.channels, n = cfg.layers;
  const Eigen::Index d_ifw = adwm::hidden_width(cfg.ifw_d_fraction, c);
  const Eigen::Index d_cfw = adwm::hidden_width(cfg.cfw_d_fraction, n);
  adwm::FlopCount f;
  std::vector<Mat> weighted;
  Mat pooled(c, n);
  for (Eigen::Index l = 0; l < n; ++l) {
    const Mat x = random_data(hw, c, rng);  // pixels x channels
    for (Eigen::Index k = 0; k < c; ++k) pooled(k, l) = x.col(k).sum() / Counted(static_cast<double>(hw));
    Mat cov, corr;
    f.ifw_covariance += count([&] { cov = adwm::linalg::covariance(x); });
    f.ifw_correlation += count([&] { corr = adwm::linalg::correlation(cov); });
    Vec alpha;
    f.ifw_mlp += count([&] { alpha = run_head(corr, d_ifw, rng); });
    Mat gated(hw, c);
    f.ifw_gate += count([&] {
      for (Eigen::Index k = 0; k < c; ++k)
        for (Eigen::Index p = 0; p < hw; ++p) gated(p, k) = x(p, k) * alpha(k);
    });
    weighted.push_back(std::move(gated));
  }
  Mat cov, corr;
  Vec beta;
  f.cfw_covariance = count([&] { cov = adwm::linalg::covariance(pooled); });
  f.cfw_correlation = count([&] { corr = adwm::linalg::correlation(cov); });
  f.cfw_mlp = count([&] { beta = run_head(corr, d_cfw, rng); });
  Counted top = beta(0), total(0.0);
  for (Eigen::Index l = 1; l < n; ++l) top = std::max(top, beta(l));
  Vec weights(n);
  for (Eigen::Index l = 0; l < n; ++l) total += weights(l) = exp(beta(l) - top);
  for (Eigen::Index l = 0; l < n; ++l) weights(l) /= total;
  f.cfw_combine = count([&] {
    Mat fused = Mat::Constant(hw, c, Counted(0.0));
    for (Eigen::Index l = 0; l < n; ++l) fused += weighted[static_cast<std::size_t>(l)] * weights(l);
  });
  return f;
}

}  // namespace counting
