#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "adwm/data.hpp"
#include "adwm/metrics.hpp"

using namespace adwm;

namespace {

Tensor noisy(const Tensor& t, double sd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Tensor::from(t.shape(), t.data() + sd * Tensor::randn(t.shape(), rng).data());
}

Tensor permute_bands(const Tensor& t, const std::vector<Index>& perm) {
  const Index c = t.dim(2), px = t.dim(0) * t.dim(1);
  Eigen::ArrayXd v(t.numel());
  for (Index i = 0; i < px; ++i)
    for (Index b = 0; b < c; ++b) v(i * c + b) = t.data()(i * c + perm[static_cast<std::size_t>(b)]);
  return Tensor::from(t.shape(), v);
}

bool is_even(std::vector<Index> p) {
  int swaps = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    while (p[i] != static_cast<Index>(i)) {
      std::swap(p[i], p[static_cast<std::size_t>(p[i])]);
      ++swaps;
    }
  return swaps % 2 == 0;
}

// Hamilton product written out by hand.
std::array<double, 4> hamilton(const std::array<double, 4>& a, const std::array<double, 4>& b) {
  return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3], a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
          a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1], a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

// Single-window Q4 with the quaternion algebra spelled out.
double q4_oracle(const Tensor& gt, const Tensor& pred) {
  const Index px = gt.dim(0) * gt.dim(1);
  std::array<double, 4> ma{}, mb{};
  for (Index i = 0; i < px; ++i)
    for (int k = 0; k < 4; ++k) {
      ma[k] += gt.data()(i * 4 + k) / px;
      mb[k] += pred.data()(i * 4 + k) / px;
    }
  std::array<double, 4> cross{};
  double va = 0, vb = 0;
  for (Index i = 0; i < px; ++i) {
    std::array<double, 4> a, bc;
    for (int k = 0; k < 4; ++k) {
      a[k] = gt.data()(i * 4 + k) - ma[k];
      const double b = pred.data()(i * 4 + k) - mb[k];
      bc[k] = k == 0 ? b : -b;
      va += a[k] * a[k] / px;
      vb += b * b / px;
    }
    const auto p = hamilton(a, bc);
    for (int k = 0; k < 4; ++k) cross[k] += p[k] / px;
  }
  auto norm = [](const std::array<double, 4>& q) { return std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]); };
  return 4 * norm(cross) * norm(ma) * norm(mb) / ((va + vb) * (norm(ma) * norm(ma) + norm(mb) * norm(mb)));
}

}  // namespace

TEST_CASE("psnr") {
  Tensor gt = generate_scene(1, 16, 16, 4);
  CHECK(psnr(gt, gt) == 100.0);
  Tensor shifted = Tensor::from(gt.shape(), gt.data() + 0.1);
  CHECK(psnr(gt, shifted) == doctest::Approx(20.0).epsilon(1e-12));
  double last = 100.0;
  for (double sd : {0.001, 0.01, 0.05, 0.2}) {
    const double v = psnr(gt, noisy(gt, sd, 2));
    CHECK(v < last);
    last = v;
  }
  CHECK_THROWS_AS((void)psnr(gt, Tensor::zeros({16, 16, 3})), DimensionError);
}

TEST_CASE("sam") {
  Tensor gt = generate_scene(2, 16, 16, 4);
  CHECK(sam(gt, gt) == 0.0);
  CHECK(sam(gt, scale(gt, 2.0)) == doctest::Approx(0.0).epsilon(1e-12));
  Eigen::ArrayXd a = Eigen::ArrayXd::Zero(4 * 4 * 2), b = a;
  for (Index i = 0; i < 16; ++i) {
    a(2 * i) = 1.0 + static_cast<double>(i);
    b(2 * i + 1) = 0.5;
  }
  CHECK(sam(Tensor::from({4, 4, 2}, a), Tensor::from({4, 4, 2}, b)) == doctest::Approx(90.0).epsilon(1e-12));
  // 45 degrees between (1,0) and (1,1).
  CHECK(sam(Tensor::from({1, 1, 2}, {1.0, 0.0}), Tensor::from({1, 1, 2}, {1.0, 1.0})) ==
        doctest::Approx(45.0).epsilon(1e-12));
  CHECK(sam(Tensor::from({1, 2, 2}, {0.0, 0.0, 1.0, 0.0}), Tensor::from({1, 2, 2}, {1.0, 1.0, 1.0, 0.0})) == 0.0);
  CHECK_THROWS_AS((void)sam(Tensor::zeros({2, 2, 1}), Tensor::zeros({2, 2, 1})), DimensionError);
}

TEST_CASE("ergas") {
  Tensor gt = generate_scene(3, 16, 16, 4);
  CHECK(ergas(gt, gt).value == 0.0);
  Eigen::ArrayXd v = gt.data();
  double mu = 0.0;
  for (Index i = 0; i < 256; ++i) mu += gt.data()(i * 4 + 2);
  mu /= 256;
  for (Index i = 0; i < 256; ++i) v(i * 4 + 2) += mu;
  CHECK(ergas(gt, Tensor::from(gt.shape(), v)).value == doctest::Approx(100.0 / 4.0 * std::sqrt(1.0 / 4.0)).epsilon(1e-12));
  Tensor err = noisy(gt, 0.03, 4);
  Tensor err2 = Tensor::from(gt.shape(), gt.data() + 2.0 * (err.data() - gt.data()));
  CHECK(ergas(gt, err2).value == doctest::Approx(2.0 * ergas(gt, err).value).epsilon(1e-12));
  ErgasResult guarded = ergas(Tensor::zeros({4, 4, 2}), Tensor::full({4, 4, 2}, 0.1));
  CHECK(guarded.guarded);
  CHECK(std::isfinite(guarded.value));
}

TEST_CASE("q_index") {
  Tensor img = generate_scene(5, 64, 64, 2);
  Band a = band(img, 0), b = band(img, 1);
  CHECK(q_index(a, a).value == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(q_index(a, a).windows == 4);
  Band centered = a;
  for (Index y = 0; y < 64; y += 32)
    for (Index x = 0; x < 64; x += 32) centered.block(y, x, 32, 32) -= centered.block(y, x, 32, 32).mean();
  CHECK(q_index(centered, -centered).value == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(q_index(a, b).value == doctest::Approx(q_index(b, a).value).epsilon(1e-12));
  CHECK(std::abs(q_index(a, b).value - q_index(b, a).value) < 1e-12);
  SUBCASE("flat windows are flagged and stay finite") {
    Band flat = Band::Constant(32, 32, 0.4);
    QResult r = q_index(flat, flat + 0.1);
    CHECK(r.degenerate == 1);
    CHECK(r.value == doctest::Approx(2 * 0.4 * 0.5 / (0.16 + 0.25)).epsilon(1e-12));
    CHECK(q_index(flat, flat).value == 1.0);
  }
  SUBCASE("matches the closed form on a single window") {
    Band x = a.block(0, 0, 16, 16), y = b.block(0, 0, 16, 16);
    const double mx = x.mean(), my = y.mean();
    const double vx = (x - mx).square().mean(), vy = (y - my).square().mean(), cxy = ((x - mx) * (y - my)).mean();
    CHECK(q_index(x, y, 16).value == doctest::Approx(4 * cxy * mx * my / ((vx + vy) * (mx * mx + my * my))).epsilon(1e-12));
  }
  CHECK_THROWS_AS((void)q_index(a.block(0, 0, 16, 16), b.block(0, 0, 16, 16), 32), DimensionError);
}

TEST_CASE("q2n") {
  SUBCASE("perfect reconstruction") {
    for (Index c : {2, 3, 4, 8}) {
      Tensor gt = generate_scene(6, 64, 64, c);
      QResult r = q2n(gt, gt);
      CHECK(std::abs(r.value - 1.0) < 1e-9);
      CHECK(r.padded == (c == 3));
    }
  }
  SUBCASE("a zeroed band lowers the index") {
    Tensor gt = generate_scene(7, 32, 32, 4);
    Eigen::ArrayXd v = gt.data();
    for (Index i = 0; i < 32 * 32; ++i) v(i * 4 + 1) = 0.0;
    CHECK(q2n(gt, Tensor::from(gt.shape(), v)).value < 1.0 - 1e-6);
  }
  SUBCASE("four bands match a hand-written quaternion evaluation") {
    for (std::uint64_t s = 0; s < 10; ++s) {
      Tensor gt = generate_scene(10 + s, 16, 16, 4);
      Tensor pred = noisy(gt, 0.05, 20 + s);
      CHECK(q2n(gt, pred, 16).value == doctest::Approx(q4_oracle(gt, pred)).epsilon(1e-12));
    }
  }
  SUBCASE("band permutations that act as rotations leave the index unchanged") {
    for (Index c : {2, 4}) {
      Tensor gt = generate_scene(30, 32, 32, c);
      Tensor pred = noisy(gt, 0.05, 31);
      const double base = q2n(gt, pred, 16).value;
      std::vector<Index> perm(static_cast<std::size_t>(c));
      std::iota(perm.begin(), perm.end(), 0);
      int checked = 0;
      do {
        if (c == 4 && !is_even(perm)) continue;
        CHECK(std::abs(q2n(permute_bands(gt, perm), permute_bands(pred, perm), 16).value - base) < 1e-9);
        ++checked;
      } while (std::next_permutation(perm.begin(), perm.end()));
      CHECK(checked == (c == 2 ? 2 : 12));
    }
  }
  SUBCASE("cayley-dickson basics") {
    std::vector<double> i{0, 1, 0, 0}, j{0, 0, 1, 0}, out(4);
    cd_multiply(i, j, out);
    CHECK(out == std::vector<double>{0, 0, 0, 1});
    cd_multiply(j, i, out);
    CHECK(out == std::vector<double>{0, 0, 0, -1});
    cd_multiply(i, i, out);
    CHECK(out == std::vector<double>{-1, 0, 0, 0});
  }
  CHECK_THROWS_AS((void)q2n(Tensor::zeros({32, 32, 1}), Tensor::zeros({32, 32, 1})), DimensionError);
}

TEST_CASE("no-reference metrics") {
  CHECK(hqnr(0.0, 0.0) == 1.0);
  CHECK(hqnr(1.0, 0.3) == 0.0);
  CHECK(hqnr(1.0, 0.0) == 0.0);
  Tensor gt = generate_scene(40, 64, 64, 4);
  Degraded d = wald_degrade(gt);
  SUBCASE("inter-band structure copied from the lrms gives zero spectral distortion") {
    // Nearest upsampling repeats every lrms pixel in a 4x4 block; with windows
    // aligned to the blocks each Q window sees the same moments at both scales.
    Tensor up = chw_to_hwc(upsample_nearest(hwc_to_chw(d.lrms), 4));
    CHECK(d_lambda(up, d.lrms) < 1e-12);
  }
  SUBCASE("ranges") {
    Tensor fused = noisy(gt, 0.02, 41);
    const double dl = d_lambda(fused, d.lrms), ds = d_s(fused, d.lrms, d.pan, degrade_pan(d.pan));
    CHECK(dl >= 0.0);
    CHECK(ds >= 0.0);
    const double h = hqnr(dl, ds);
    CHECK(h >= 0.0);
    CHECK(h <= 1.0);
    MetricRow row = full_metrics("s", fused, d.lrms, d.pan);
    CHECK(row.values[2] == doctest::Approx(h).epsilon(1e-15));
  }
  CHECK(degrade_pan(d.pan).shape() == Shape{16, 16});
}

TEST_CASE("reports") {
  Tensor gt = generate_scene(50, 32, 32, 4);
  MetricsReport rep{{{"dataset", "unit"}}, kReducedColumns, {}};
  rep.rows.push_back(reduced_metrics("a", gt, gt));
  rep.rows.push_back(reduced_metrics("b", gt, noisy(gt, 0.05, 51)));
  CHECK(rep.rows[0].values[0] == 100.0);
  CHECK(rep.rows[0].values[1] == 0.0);
  CHECK(rep.rows[0].values[2] == 0.0);
  CHECK(std::abs(rep.rows[0].values[3] - 1.0) < 1e-9);
  CHECK(std::abs(rep.rows[0].values[4] - 1.0) < 1e-9);
  auto means = rep.means();
  CHECK(means[0] == doctest::Approx((rep.rows[0].values[0] + rep.rows[1].values[0]) / 2));
  std::filesystem::path p = std::filesystem::temp_directory_path() / "adwm_test_report.csv";
  rep.write_csv(p);
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] == "# dataset: unit");
  CHECK(lines[1] == "id,psnr,sam,ergas,q,q2n,flags");
  CHECK(lines[4].rfind("mean,", 0) == 0);

  // Order of samples does not change the means.
  std::swap(rep.rows[0], rep.rows[1]);
  auto swapped = rep.means();
  for (std::size_t i = 0; i < means.size(); ++i) CHECK(swapped[i] == doctest::Approx(means[i]).epsilon(1e-15));
}
