#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "adwm/diagnostics.hpp"
#include "adwm/linalg.hpp"
#include "counting_scalar.hpp"

using namespace adwm;
namespace fs = std::filesystem;

namespace {

Eigen::MatrixXd random_covariance(std::mt19937_64& rng, Index n, Index m) {
  std::normal_distribution<double> dist;
  Eigen::MatrixXd x(m, n);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = dist(rng);
  return linalg::covariance(x);
}

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "adwm_test_diagnostics" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.bands = 3;
  cfg.channels = 4;
  cfg.blocks = 2;
  return cfg;
}

}  // namespace

TEST_CASE("scree of isotropic and rank-1 covariances") {
  const Eigen::VectorXd iso = scree_curve(Eigen::MatrixXd::Identity(4, 4));
  for (Index i = 0; i < 4; ++i) CHECK(iso(i) == doctest::Approx(0.25).epsilon(1e-14));
  Eigen::VectorXd u(5);
  u << 1, -2, 0.5, 3, 1;
  const Eigen::VectorXd r1 = scree_curve(u * u.transpose());
  CHECK(r1(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r1.tail(4).maxCoeff() < 1e-12);
  CHECK_THROWS_AS(scree_curve(Eigen::MatrixXd::Zero(3, 3)), DegenerateSampleError);
  CHECK_THROWS_AS(scree_curve(Eigen::MatrixXd::Zero(2, 3)), DimensionError);
}

TEST_CASE("scree agrees with the Jacobi eigendecomposition and is a distribution") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const Index n = 1 + trial % 12, m = 2 + (trial * 7) % 40;
    const Eigen::MatrixXd c = random_covariance(rng, n, m);
    const Eigen::VectorXd s = scree_curve(c);
    const auto pca = linalg::jacobi_eigen(c);
    const Eigen::VectorXd lam = pca.eigenvalues.cwiseMax(0.0);
    CHECK((s - lam / lam.sum()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(std::abs(s.sum() - 1.0) < 1e-9);
    CHECK(s.minCoeff() >= 0.0);
    for (Index i = 1; i < n; ++i) CHECK(s(i) <= s(i - 1));
    const double h = spectrum_entropy(s);
    CHECK(h >= 0.0);
    CHECK(h <= std::log(static_cast<double>(n)) + 1e-12);
  }
}

TEST_CASE("spectrum entropy") {
  CHECK(spectrum_entropy(Eigen::VectorXd::Constant(4, 0.25)) == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  Eigen::VectorXd one = Eigen::VectorXd::Zero(5);
  one(0) = 1.0;
  CHECK(spectrum_entropy(one) == 0.0);
  // Merging two equal eigenvalues of (a, a, 1-2a) into (2a, 1-2a) lowers entropy by 2a ln 2.
  for (double a : {0.05, 0.2, 0.3, 0.45}) {
    Eigen::VectorXd three(3), two(2);
    three << a, a, 1 - 2 * a;
    two << 2 * a, 1 - 2 * a;
    const double drop = spectrum_entropy(three) - spectrum_entropy(two);
    CHECK(drop > 0.0);
    CHECK(drop == doctest::Approx(2 * a * std::log(2.0)).epsilon(1e-12));
  }
  Eigen::VectorXd bad(2);
  bad << 0.7, 0.7;
  CHECK_THROWS_AS(spectrum_entropy(bad), NumericError);
  bad << 1.2, -0.2;
  CHECK_THROWS_AS(spectrum_entropy(bad), NumericError);
}

TEST_CASE("average scree") {
  Eigen::VectorXd a(2), b(2);
  a << 1, 0;
  b << 0.5, 0.5;
  const Eigen::VectorXd m = average_scree({a, b});
  CHECK(m(0) == 0.75);
  CHECK(m(1) == 0.25);
  CHECK_THROWS_AS(average_scree({a, Eigen::VectorXd::Zero(3)}), DimensionError);
}

TEST_CASE("feature covariance treats pixels as samples") {
  std::mt19937_64 rng(2);
  Tensor f = Tensor::randn({3, 4, 5}, rng);
  const Eigen::MatrixXd c = feature_covariance(f);
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 3; ++j) {
      double mi = 0, mj = 0, s = 0;
      for (Index p = 0; p < 20; ++p) mi += f.data()(i * 20 + p) / 20, mj += f.data()(j * 20 + p) / 20;
      for (Index p = 0; p < 20; ++p) s += (f.data()(i * 20 + p) - mi) * (f.data()(j * 20 + p) - mj);
      CHECK(c(i, j) == doctest::Approx(s / 19).epsilon(1e-12));
    }
  }
}

TEST_CASE("weight trace row counts and softmax sums") {
  ModelConfig cfg = tiny_config();
  cfg.blocks = 2;
  cfg.channels = 4;
  PansharpenModel model(cfg, 3);
  std::vector<SamplePair> probes{make_sample(1, 0, 16, 16, 3), make_sample(1, 1, 16, 16, 3)};
  const auto rows = trace_weights(model, probes, 7);
  Index alphas = 0, betas = 0;
  double beta_sum = 0;
  for (const auto& r : rows) {
    CHECK(r.epoch == 7);
    if (r.kind == "alpha") {
      ++alphas;
      CHECK(r.weight > 0.0);
      CHECK(r.weight < 1.0);
    } else {
      ++betas;
      beta_sum += r.weight;
    }
  }
  CHECK(alphas == 2 * 4);
  CHECK(betas == 2);
  CHECK(beta_sum == doctest::Approx(1.0).epsilon(1e-12));
  const auto spread = alpha_spread(rows);
  REQUIRE(spread.size() == 2);
  CHECK(spread[0].max >= spread[0].min);

  cfg.variant = Variant::baseline;
  PansharpenModel base(cfg, 3);
  CHECK(trace_weights(base, probes, 0).empty());
}

TEST_CASE("count_flops closed forms match the instrumented pipeline") {
  FlopConfig cfg{8, 8, 3, 4, 3, 0.8, 0.8};
  const FlopCount closed = count_flops(cfg);
  const FlopCount measured = counting::instrumented(cfg, 5);
  CHECK(closed.ifw_covariance == 8u * 8u * 4u * 4u * 3u);
  CHECK(closed.cfw_covariance == 4u * 3u * 3u);
  CHECK(measured.ifw_covariance == closed.ifw_covariance);
  CHECK(measured.ifw_correlation == closed.ifw_correlation);
  CHECK(measured.ifw_mlp == closed.ifw_mlp);
  CHECK(measured.ifw_gate == closed.ifw_gate);
  CHECK(measured.cfw_covariance == closed.cfw_covariance);
  CHECK(measured.cfw_correlation == closed.cfw_correlation);
  CHECK(measured.cfw_mlp == closed.cfw_mlp);
  CHECK(measured.cfw_combine == closed.cfw_combine);
  CHECK(measured.adwm() == closed.adwm());

  for (double frac : {0.2, 0.4, 0.6, 0.8, 1.0}) {
    FlopConfig sweep{6, 5, 4, 7, 5, frac, frac};
    const FlopCount a = count_flops(sweep), b = counting::instrumented(sweep, 9);
    CHECK(a.adwm() == b.adwm());
  }
}

TEST_CASE("covariance terms scale quadratically") {
  FlopConfig base{8, 8, 4, 4, 3, 0.8, 0.8};
  FlopConfig wide = base, deep = base;
  wide.channels = 8;
  deep.layers = 6;
  CHECK(count_flops(wide).ifw_covariance == 4 * count_flops(base).ifw_covariance);
  CHECK(count_flops(deep).cfw_covariance == 4 * count_flops(base).cfw_covariance);
}

TEST_CASE("flop config from a model") {
  ModelConfig m;
  m.channels = 16;
  m.blocks = 4;
  const FlopConfig f = flop_config(m, 64, 32);
  CHECK(f.height == 64);
  CHECK(f.width == 32);
  CHECK(f.channels == 16);
  CHECK(f.layers == 4);
  CHECK(count_flops(f).backbone == 9u * 64 * 32 * (5 * 16 + 2 * 4 * 16 * 16 + 16 * 4));
}

TEST_CASE("svg output is deterministic and tolerates empty input") {
  const std::string empty = svg_line_plot({}, "t", "x", "y");
  CHECK(empty.find("<svg") != std::string::npos);
  CHECK(empty.find("<polyline") == std::string::npos);
  std::vector<Series> s{{"a", {1, 2, 3}, {0.5, 0.25, 0.125}}, {"b<&>", {1, 2}, {1, 0}}};
  CHECK(svg_line_plot(s, "t", "x", "y") == svg_line_plot(s, "t", "x", "y"));
  CHECK(svg_line_plot(s, "t", "x", "y").find("b&lt;&amp;&gt;") != std::string::npos);
  std::vector<Series> bad{{"a", {1, 2}, {1}}};
  CHECK_THROWS_AS(svg_line_plot(bad, "t", "x", "y"), DimensionError);
  CHECK(svg_heatmap(Eigen::MatrixXd(0, 0), "empty").find("</svg>") != std::string::npos);
}

TEST_CASE("heatmap maps min to light and max to dark") {
  Eigen::MatrixXd m(1, 3);
  m << -2.0, 0.5, 3.0;
  const std::string svg = svg_heatmap(m, "h");
  const auto first = svg.find("fill=\"#f7fbff\"");
  const auto last = svg.find("fill=\"#08306b\"");
  REQUIRE(first != std::string::npos);
  REQUIRE(last != std::string::npos);
  // Cells are emitted in row-major order: the min cell comes first, the max cell last.
  CHECK(first < last);
  CHECK(svg == svg_heatmap(m, "h"));
}

TEST_CASE("diagnose writes one heatmap per block and is reproducible") {
  ModelConfig cfg = tiny_config();
  cfg.blocks = 3;
  PansharpenModel model(cfg, 4);
  std::vector<SamplePair> samples{make_sample(2, 0, 16, 16, 3), make_sample(2, 1, 16, 16, 3)};
  const fs::path a = temp_dir("a"), b = temp_dir("b");
  const DiagnoseSummary sa = diagnose(model, samples, a);
  diagnose(model, samples, b);
  CHECK(sa.layers == 3);
  Index heatmaps = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("covariance_layer", 0) == 0) ++heatmaps;
    CHECK(slurp(entry.path()) == slurp(b / name));
  }
  CHECK(heatmaps == 3);

  std::istringstream scree(slurp(a / "scree.csv"));
  std::string line;
  std::getline(scree, line);
  CHECK(line == "layer,lambda1,lambda2,lambda3,lambda4");
  Index rows = 0;
  while (std::getline(scree, line)) {
    std::istringstream cells(line);
    std::string cell;
    std::getline(cells, cell, ',');
    double sum = 0;
    while (std::getline(cells, cell, ',')) sum += std::stod(cell);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    ++rows;
  }
  CHECK(rows == 4);
}
