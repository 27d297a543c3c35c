#include "adwm/data.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "adwm/io.hpp"
#include "adwm/runtime.hpp"

namespace adwm {

namespace {

constexpr double kBandRho = 0.9;
constexpr double kBlurSigma = 1.6;
constexpr int kBlurTaps = 7;
constexpr Index kDecimationOffset = 2;

void require_hwc(const Tensor& t, const char* who) {
  if (t.rank() != 3) throw DimensionError(std::string(who) + " expects [H,W,c], got " + to_string(t.shape()));
}

// Unit-variance AR(1) sequence of length c.
std::vector<double> ar1_spectrum(Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> z(static_cast<std::size_t>(c));
  z[0] = n01(rng);
  const double innov = std::sqrt(1.0 - kBandRho * kBandRho);
  for (std::size_t b = 1; b < z.size(); ++b) z[b] = kBandRho * z[b - 1] + innov * n01(rng);
  return z;
}

std::array<double, kBlurTaps> blur_taps() {
  std::array<double, kBlurTaps> k{};
  double total = 0.0;
  for (int i = 0; i < kBlurTaps; ++i) {
    const double d = i - kBlurTaps / 2;
    k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kBlurSigma * kBlurSigma));
    total += k[static_cast<std::size_t>(i)];
  }
  for (double& v : k) v /= total;
  return k;
}

// Mirror without repeating the edge sample: -1 -> 1, n -> n - 2.
Index reflect(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * (n - 1);
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Tensor generate_scene(std::uint64_t seed, Index h, Index w, Index c) {
  if (h <= 0 || w <= 0 || h % kScale != 0 || w % kScale != 0) {
    throw ConfigError("scene size " + std::to_string(h) + "x" + std::to_string(w) + " must be positive multiples of 4");
  }
  if (c < 1) throw ConfigError("scene needs at least one band");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

  Eigen::ArrayXXd img = Eigen::ArrayXXd::Zero(h * w, c);  // pixel-major, band columns
  auto add_component = [&](const Eigen::ArrayXd& spatial) {
    // Shared positive gain plus an AR(1) spectral deviation.
    const double gain = uniform(0.3, 1.0);
    const std::vector<double> z = ar1_spectrum(c, rng);
    for (Index b = 0; b < c; ++b) img.col(b) += spatial * (gain + 0.25 * z[static_cast<std::size_t>(b)]);
  };
  const double side = static_cast<double>(std::min(h, w));

  const int blobs = 4 + static_cast<int>(rng() % 4);
  for (int k = 0; k < blobs; ++k) {
    const double cy = uniform(0, h), cx = uniform(0, w), s = uniform(side / 16, side / 4), amp = uniform(0.2, 0.6);
    Eigen::ArrayXd m(h * w);
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const double dy = y - cy, dx = x - cx;
        m(y * w + x) = amp * std::exp(-(dy * dy + dx * dx) / (2 * s * s));
      }
    add_component(m);
  }
  const int gratings = 2 + static_cast<int>(rng() % 2);
  for (int k = 0; k < gratings; ++k) {
    const double theta = uniform(0, std::numbers::pi), period = uniform(4, 16), phase = uniform(0, 2 * std::numbers::pi);
    const double amp = uniform(0.05, 0.2);
    Eigen::ArrayXd m(h * w);
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const double t = (x * std::cos(theta) + y * std::sin(theta)) / period;
        m(y * w + x) = amp * 0.5 * (1 + std::sin(2 * std::numbers::pi * t + phase));
      }
    add_component(m);
  }
  const int rects = 3 + static_cast<int>(rng() % 3);
  for (int k = 0; k < rects; ++k) {
    const double y0 = uniform(0, h), x0 = uniform(0, w);
    const double y1 = y0 + uniform(side / 8, side / 2), x1 = x0 + uniform(side / 8, side / 2);
    const double amp = uniform(0.1, 0.4);
    Eigen::ArrayXd m = Eigen::ArrayXd::Zero(h * w);
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x)
        if (y >= y0 && y < y1 && x >= x0 && x < x1) m(y * w + x) = amp;
    add_component(m);
  }

  // Affine map into roughly [0.05, 0.95], then clip.
  const double lo = img.minCoeff(), hi = img.maxCoeff();
  const double span = hi - lo > 1e-12 ? hi - lo : 1.0;
  img = ((img - lo) / span * 0.9 + 0.05).max(0.0).min(1.0);

  Eigen::ArrayXd values(h * w * c);
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(values.data(), h * w, c) =
      img.matrix();
  return Tensor::from({h, w, c}, std::move(values));
}

Tensor gaussian_blur(const Tensor& image) {
  require_hwc(image, "gaussian_blur");
  const Index h = image.dim(0), w = image.dim(1), c = image.dim(2);
  const auto taps = blur_taps();
  const Eigen::ArrayXd& in = image.data();
  Eigen::ArrayXd rows = Eigen::ArrayXd::Zero(in.size());
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (int t = 0; t < kBlurTaps; ++t) {
        const Index sx = reflect(x + t - kBlurTaps / 2, w);
        for (Index b = 0; b < c; ++b) rows((y * w + x) * c + b) += taps[static_cast<std::size_t>(t)] * in((y * w + sx) * c + b);
      }
  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(in.size());
  for (Index y = 0; y < h; ++y)
    for (int t = 0; t < kBlurTaps; ++t) {
      const Index sy = reflect(y + t - kBlurTaps / 2, h);
      out.segment(y * w * c, w * c) += taps[static_cast<std::size_t>(t)] * rows.segment(sy * w * c, w * c);
    }
  return Tensor::from({h, w, c}, std::move(out));
}

Tensor decimate(const Tensor& image) {
  require_hwc(image, "decimate");
  const Index h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (h % kScale != 0 || w % kScale != 0) throw DimensionError("decimate needs sizes divisible by 4");
  const Index lh = h / kScale, lw = w / kScale;
  Eigen::ArrayXd out(lh * lw * c);
  for (Index y = 0; y < lh; ++y)
    for (Index x = 0; x < lw; ++x)
      out.segment((y * lw + x) * c, c) =
          image.data().segment(((y * kScale + kDecimationOffset) * w + x * kScale + kDecimationOffset) * c, c);
  return Tensor::from({lh, lw, c}, std::move(out));
}

Tensor spectral_sum(const Tensor& image, const std::vector<double>& weights) {
  require_hwc(image, "spectral_sum");
  const Index h = image.dim(0), w = image.dim(1), c = image.dim(2);
  Eigen::ArrayXd wv = Eigen::ArrayXd::Constant(c, 1.0 / static_cast<double>(c));
  if (!weights.empty()) {
    if (static_cast<Index>(weights.size()) != c) {
      throw ConfigError("PAN weights: expected " + std::to_string(c) + ", got " + std::to_string(weights.size()));
    }
    for (Index b = 0; b < c; ++b) {
      if (!(weights[static_cast<std::size_t>(b)] > 0)) throw ConfigError("PAN weights must be positive");
      wv(b) = weights[static_cast<std::size_t>(b)];
    }
  }
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(image.data().data(),
                                                                                             h * w, c);
  Eigen::ArrayXd out = (m * wv.matrix()).array();
  return Tensor::from({h, w}, std::move(out));
}

Degraded wald_degrade(const Tensor& gt, const std::vector<double>& pan_weights) {
  require_hwc(gt, "wald_degrade");
  return {spectral_sum(gt, pan_weights), decimate(gaussian_blur(gt))};
}

// ---------------------------------------------------------------- datasets

std::uint64_t sample_seed(std::uint64_t seed, std::size_t index) { return splitmix64(seed * 0x100000001b3ULL + index); }

std::string sample_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%05zu", index);
  return buf;
}

SamplePair make_sample(std::uint64_t seed, std::size_t index, Index h, Index w, Index c) {
  Tensor gt = generate_scene(sample_seed(seed, index), h, w, c);
  Degraded d = wald_degrade(gt);
  return {sample_id(index), d.pan, d.lrms, gt};
}

Manifest build_dataset(std::uint64_t seed, std::size_t count, Index h, Index w, Index c,
                       const std::filesystem::path& out_dir) {
  if (count == 0) throw ConfigError("dataset count must be positive");
  (void)generate_scene(0, h, w, c);  // validates sizes before touching the disk
  std::filesystem::create_directories(out_dir);
  Manifest manifest{out_dir / "manifest.txt", {}};
  for (std::size_t i = 0; i < count; ++i) manifest.rows.push_back({sample_id(i), sample_seed(seed, i), h, w, c});
  parallel_for(count, [&](std::size_t i) {
    SamplePair s = make_sample(seed, i, h, w, c);
    const auto dir = out_dir / s.id;
    std::filesystem::create_directories(dir);
    write_tensor(dir / "pan.tnsr", s.pan);
    write_tensor(dir / "lrms.tnsr", s.lrms);
    write_tensor(dir / "gt.tnsr", s.gt);
  });
  std::ofstream out(manifest.path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + manifest.path.string());
  for (const ManifestRow& r : manifest.rows)
    out << r.id << '\t' << r.seed << '\t' << r.h << '\t' << r.w << '\t' << r.c << '\n';
  return manifest;
}

Manifest read_manifest(const std::filesystem::path& dir) {
  Manifest manifest{dir / "manifest.txt", {}};
  std::ifstream in(manifest.path);
  if (!in) throw ConfigError("no manifest.txt in " + dir.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    ManifestRow r;
    if (!(fields >> r.id >> r.seed >> r.h >> r.w >> r.c)) {
      throw FormatError(manifest.path.string() + ": malformed line " + std::to_string(lineno));
    }
    manifest.rows.push_back(r);
  }
  if (manifest.rows.empty()) throw ConfigError(manifest.path.string() + " lists no samples");
  return manifest;
}

SamplePair load_sample(const std::filesystem::path& dir, const ManifestRow& row) {
  const auto sub = dir / row.id;
  SamplePair s{row.id, read_tensor(sub / "pan.tnsr"), read_tensor(sub / "lrms.tnsr"), read_tensor(sub / "gt.tnsr")};
  const Shape pan{row.h, row.w}, lrms{row.h / kScale, row.w / kScale, row.c}, gt{row.h, row.w, row.c};
  if (s.pan.shape() != pan || s.lrms.shape() != lrms || s.gt.shape() != gt) {
    throw FormatError(sub.string() + ": tensor shapes disagree with the manifest");
  }
  return s;
}

std::vector<SamplePair> load_dataset(const std::filesystem::path& dir) {
  const Manifest m = read_manifest(dir);
  std::vector<SamplePair> out(m.rows.size());
  parallel_for(m.rows.size(), [&](std::size_t i) { out[i] = load_sample(dir, m.rows[i]); });
  return out;
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool in_holdout(std::string_view id, double fraction) {
  return static_cast<double>(fnv1a(id) % 10000) < fraction * 10000.0;
}

Split split_by_hash(std::vector<SamplePair> samples, double holdout_fraction) {
  Split s;
  for (SamplePair& p : samples) (in_holdout(p.id, holdout_fraction) ? s.holdout : s.train).push_back(std::move(p));
  return s;
}

}  // namespace adwm
