#include <doctest.h>

#include <random>

#include "adwm/linalg.hpp"
#include "oracles.hpp"

using namespace adwm;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> dist(0.0, sd);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Eigen::MatrixXd random_orthonormal(Eigen::Index n, Eigen::Index k, std::mt19937_64& rng) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_matrix(n, k, rng));
  return qr.householderQ() * Eigen::MatrixXd::Identity(n, k);
}

}  // namespace

TEST_CASE("covariance examples") {
  Eigen::MatrixXd x(3, 2);
  x << 1, 2, 3, 4, 5, 6;
  Eigen::MatrixXd c = linalg::covariance(x);
  CHECK((c - Eigen::MatrixXd::Constant(2, 2, 4.0)).cwiseAbs().maxCoeff() < 1e-15);

  Eigen::MatrixXd y(4, 3);
  y << 1, 5, 2, 2, 5, 7, 3, 5, 1, 4, 5, 0;
  Eigen::MatrixXd cy = linalg::covariance(y);
  CHECK(cy.row(1).cwiseAbs().maxCoeff() == 0.0);
  CHECK(cy.col(1).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(linalg::covariance(Eigen::MatrixXd::Ones(1, 3)), DegenerateSampleError);
}

TEST_CASE("covariance matches the double-loop oracle") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> rows(2, 64), cols(1, 16);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::MatrixXd x = random_matrix(rows(rng), cols(rng), rng, 3.0);
    Eigen::MatrixXd c = linalg::covariance(x);
    CHECK((c - oracle::covariance(x)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((c - c.transpose()).cwiseAbs().maxCoeff() == 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
    CHECK(es.eigenvalues().minCoeff() >= -1e-8);
  }
}

TEST_CASE("correlation examples and contract") {
  Eigen::Matrix2d c;
  c << 4, 4, 4, 4;
  Eigen::MatrixXd r = linalg::correlation(c);
  CHECK((r.array() - 1.0).abs().maxCoeff() < 1e-8);

  CHECK(linalg::correlation(Eigen::MatrixXd::Zero(3, 3)).cwiseAbs().maxCoeff() == 0.0);

  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> rows(3, 64), cols(1, 16);
  for (int trial = 0; trial < 100; ++trial) {
    const int m = rows(rng), n = cols(rng);
    Eigen::MatrixXd x = random_matrix(m, n, rng, 2.0);
    Eigen::MatrixXd corr = linalg::correlation(linalg::covariance(x));
    CHECK((corr.diagonal().array() - 1.0).abs().maxCoeff() < 1e-6);
    CHECK(corr.cwiseAbs().maxCoeff() <= 1.0 + 1e-9);
    CHECK((corr - corr.transpose()).cwiseAbs().maxCoeff() < 1e-15);
    if (n >= 2) CHECK(std::abs(corr(0, 1) - oracle::pearson(x.col(0), x.col(1))) < 1e-6);
  }
}

TEST_CASE("Jacobi eigendecomposition examples") {
  SUBCASE("diagonal input") {
    Eigen::Matrix2d c;
    c << 1, 0, 0, 2;
    auto pca = linalg::jacobi_eigen(c);
    CHECK(pca.eigenvalues(0) == 2.0);
    CHECK(pca.eigenvalues(1) == 1.0);
    CHECK(std::abs(pca.eigenvectors(1, 0)) == 1.0);
    CHECK(std::abs(pca.eigenvectors(0, 1)) == 1.0);
  }
  SUBCASE("2x2 closed form") {
    Eigen::Matrix2d c;
    c << 4, 4, 4, 4;
    auto pca = linalg::jacobi_eigen(c);
    CHECK(pca.eigenvalues(0) == doctest::Approx(8.0).epsilon(1e-14));
    CHECK(std::abs(pca.eigenvalues(1)) < 1e-14);
    CHECK(pca.eigenvectors(0, 0) == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(pca.eigenvectors(1, 0) == doctest::Approx(1.0 / std::sqrt(2.0)));
  }
  SUBCASE("reconstruction") {
    std::mt19937_64 rng(3);
    Eigen::MatrixXd c = linalg::covariance(random_matrix(30, 7, rng));
    auto pca = linalg::jacobi_eigen(c);
    Eigen::MatrixXd back = pca.eigenvectors * pca.eigenvalues.asDiagonal() * pca.eigenvectors.transpose();
    CHECK((back - c).cwiseAbs().maxCoeff() < 1e-9);
  }
  CHECK_THROWS_AS(linalg::jacobi_eigen(Eigen::MatrixXd::Ones(2, 3)), DimensionError);
  Eigen::Matrix2d asym;
  asym << 1, 2, 0, 1;
  CHECK_THROWS_AS(linalg::jacobi_eigen(asym), NumericError);
  Eigen::Matrix3d hard;
  hard << 2, 1, 0.5, 1, 3, 0.2, 0.5, 0.2, 1;
  CHECK_THROWS_AS(linalg::jacobi_eigen(hard, 0), NumericError);
}

TEST_CASE("Jacobi eigenpairs satisfy residual and orthonormality bounds") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> rows(2, 64), cols(1, 16);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::MatrixXd x = random_matrix(rows(rng), cols(rng), rng, 1.0 + trial % 5);
    Eigen::MatrixXd c = linalg::covariance(x);
    auto pca = linalg::jacobi_eigen(c);
    const double lambda1 = pca.eigenvalues(0);
    for (Eigen::Index i = 0; i < c.rows(); ++i) {
      const double residual = (c * pca.eigenvectors.col(i) - pca.eigenvalues(i) * pca.eigenvectors.col(i)).norm();
      CHECK(residual < 1e-6 * std::max(1.0, lambda1));
      if (i > 0) CHECK(pca.eigenvalues(i) <= pca.eigenvalues(i - 1));
    }
    const Eigen::MatrixXd gram = pca.eigenvectors.transpose() * pca.eigenvectors;
    CHECK((gram - Eigen::MatrixXd::Identity(c.rows(), c.rows())).cwiseAbs().maxCoeff() < 1e-8);
    // Full basis keeps the total variance.
    Eigen::MatrixXd y = linalg::pca_project(x, pca.basis(c.rows()));
    CHECK(std::abs(linalg::captured_variance(y) - c.trace()) < 1e-8 * std::max(1.0, c.trace()));
  }
}

TEST_CASE("pca_project examples") {
  Eigen::MatrixXd x(3, 2);
  x << 1, 2, 3, 4, 5, 6;
  auto pca = linalg::jacobi_eigen(linalg::covariance(x));
  CHECK(linalg::captured_variance(linalg::pca_project(x, pca.basis(1))) == doctest::Approx(8.0).epsilon(1e-12));

  std::mt19937_64 rng(5);
  Eigen::MatrixXd z = random_matrix(10, 4, rng);
  Eigen::MatrixXd id = Eigen::MatrixXd::Identity(4, 2);
  Eigen::MatrixXd y = linalg::pca_project(z, id);
  Eigen::MatrixXd centered = z.rowwise() - z.colwise().mean();
  CHECK((y - centered.leftCols(2).transpose()).cwiseAbs().maxCoeff() < 1e-14);

  CHECK_THROWS_AS(linalg::pca_project(z, Eigen::MatrixXd::Identity(4, 5)), DimensionError);
  CHECK_THROWS_AS(linalg::pca_project(z, Eigen::MatrixXd::Identity(3, 2)), DimensionError);
  CHECK_THROWS_AS(pca.basis(3), DimensionError);
}

TEST_CASE("top-k eigenvalues dominate any rank-k projection") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::Index n = 6;
    Eigen::MatrixXd mix = random_matrix(n, n, rng);
    Eigen::MatrixXd x = random_matrix(40, n, rng) * mix;
    auto pca = linalg::jacobi_eigen(linalg::covariance(x));
    for (Eigen::Index k = 1; k <= n; ++k) {
      const double top = pca.eigenvalues.head(k).sum();
      CHECK(linalg::captured_variance(linalg::pca_project(x, pca.basis(k))) == doctest::Approx(top));
      for (int p = 0; p < 50; ++p) {
        const double captured = linalg::captured_variance(linalg::pca_project(x, random_orthonormal(n, k, rng)));
        CHECK(captured <= top + 1e-9 * std::max(1.0, top));
      }
    }
  }
}
