#include "adwm/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "adwm/data.hpp"

namespace adwm {

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* who) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(who) + ": shapes differ, " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

void require_hwc(const Tensor& t, const char* who) {
  if (t.rank() != 3) throw DimensionError(std::string(who) + " expects [H,W,c], got " + to_string(t.shape()));
}

// Luminance factor 2 mu_a mu_b / (mu_a^2 + mu_b^2), taken as 1 when both means vanish.
double luminance(double ma, double mb) {
  const double den = ma * ma + mb * mb;
  return den < kMetricEps ? 1.0 : 2.0 * ma * mb / den;
}

void check_window(Index h, Index w, Index window, const char* who) {
  if (window < 1) throw ConfigError(std::string(who) + ": window must be positive");
  if (h < window || w < window) {
    throw DimensionError(std::string(who) + ": image " + std::to_string(h) + "x" + std::to_string(w) +
                         " is smaller than the window " + std::to_string(window));
  }
}

Index next_pow2(Index n) {
  Index p = 1;
  while (p < n) p *= 2;
  return p;
}

std::string format(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

Band band(const Tensor& image, Index b) {
  require_hwc(image, "band");
  const Index h = image.dim(0), w = image.dim(1), c = image.dim(2);
  Band out(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) out(y, x) = image.data()((y * w + x) * c + b);
  return out;
}

Band plane(const Tensor& image) {
  if (image.rank() != 2) throw DimensionError("expected an [H,W] image, got " + to_string(image.shape()));
  Band out(image.dim(0), image.dim(1));
  for (Index y = 0; y < image.dim(0); ++y)
    for (Index x = 0; x < image.dim(1); ++x) out(y, x) = image.data()(y * image.dim(1) + x);
  return out;
}

double psnr(const Tensor& gt, const Tensor& pred, double peak, double cap) {
  require_same(gt, pred, "psnr");
  const double mse = (gt.data() - pred.data()).square().mean();
  if (mse == 0.0) return cap;
  return std::min(cap, 10.0 * std::log10(peak * peak / mse));
}

double sam(const Tensor& gt, const Tensor& pred) {
  require_same(gt, pred, "sam");
  require_hwc(gt, "sam");
  const Index c = gt.dim(2), px = gt.dim(0) * gt.dim(1);
  if (c < 2) throw DimensionError("sam needs at least 2 bands");
  double total = 0.0;
  Index counted = 0;
  for (Index i = 0; i < px; ++i) {
    const Eigen::VectorXd g = gt.data().segment(i * c, c).matrix();
    const Eigen::VectorXd p = pred.data().segment(i * c, c).matrix();
    const double ng = g.norm(), np = p.norm();
    if (ng < kMetricEps || np < kMetricEps) continue;
    // Angle between unit vectors via 2 atan2(|u - v|, |u + v|): exact at 0 and well conditioned near it.
    const Eigen::VectorXd u = g / ng, v = p / np;
    total += 2.0 * std::atan2((u - v).norm(), (u + v).norm());
    ++counted;
  }
  return counted == 0 ? 0.0 : total / static_cast<double>(counted) * 180.0 / std::numbers::pi;
}

ErgasResult ergas(const Tensor& gt, const Tensor& pred, double scale) {
  require_same(gt, pred, "ergas");
  require_hwc(gt, "ergas");
  const Index c = gt.dim(2), px = gt.dim(0) * gt.dim(1);
  Eigen::Map<const Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> g(gt.data().data(), px, c);
  Eigen::Map<const Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> p(pred.data().data(), px, c);
  double acc = 0.0;
  bool guarded = false;
  for (Index b = 0; b < c; ++b) {
    const double mse = (g.col(b) - p.col(b)).square().mean();
    double mu = g.col(b).mean();
    if (mu * mu < kMetricEps) {
      guarded = true;
      mu = std::sqrt(kMetricEps);
    }
    acc += mse / (mu * mu);
  }
  return {100.0 / scale * std::sqrt(acc / static_cast<double>(c)), guarded};
}

QResult q_index(const Band& a, const Band& b, Index window) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("q_index: band sizes differ");
  check_window(a.rows(), a.cols(), window, "q_index");
  QResult r{0.0, 0, 0};
  double total = 0.0;
  const double n = static_cast<double>(window * window);
  for (Index y = 0; y + window <= a.rows(); y += window) {
    for (Index x = 0; x + window <= a.cols(); x += window) {
      const auto wa = a.block(y, x, window, window);
      const auto wb = b.block(y, x, window, window);
      const double ma = wa.mean(), mb = wb.mean();
      const double va = (wa - ma).square().sum() / n, vb = (wb - mb).square().sum() / n;
      const double cov = ((wa - ma) * (wb - mb)).sum() / n;
      double cs;
      if (va + vb < kMetricEps) {
        cs = 1.0;  // both flat: identical structure, only luminance can differ
        ++r.degenerate;
      } else {
        cs = 2.0 * cov / (va + vb);
      }
      total += cs * luminance(ma, mb);
      ++r.windows;
    }
  }
  r.value = total / static_cast<double>(r.windows);
  return r;
}

QResult q_mean(const Tensor& gt, const Tensor& pred, Index window) {
  require_same(gt, pred, "q");
  require_hwc(gt, "q");
  QResult r{0.0, 0, 0};
  for (Index b = 0; b < gt.dim(2); ++b) {
    QResult q = q_index(band(gt, b), band(pred, b), window);
    r.value += q.value;
    r.windows += q.windows;
    r.degenerate += q.degenerate;
  }
  r.value /= static_cast<double>(gt.dim(2));
  return r;
}

// ---------------------------------------------------------------- hypercomplex

void cd_conjugate(std::span<const double> x, std::span<double> out) {
  out[0] = x[0];
  for (std::size_t i = 1; i < x.size(); ++i) out[i] = -x[i];
}

void cd_multiply(std::span<const double> x, std::span<const double> y, std::span<double> out) {
  const std::size_t n = x.size();
  if (n == 1) {
    out[0] = x[0] * y[0];
    return;
  }
  // (a, b)(c, d) = (ac - conj(d) b, d a + b conj(c))
  const std::size_t h = n / 2;
  auto a = x.first(h), b = x.subspan(h), c = y.first(h), d = y.subspan(h);
  std::vector<double> cc(h), dc(h), t1(h), t2(h);
  cd_conjugate(c, cc);
  cd_conjugate(d, dc);
  cd_multiply(a, c, t1);
  cd_multiply(dc, b, t2);
  for (std::size_t i = 0; i < h; ++i) out[i] = t1[i] - t2[i];
  cd_multiply(d, a, t1);
  cd_multiply(b, cc, t2);
  for (std::size_t i = 0; i < h; ++i) out[h + i] = t1[i] + t2[i];
}

QResult q2n(const Tensor& gt, const Tensor& pred, Index window) {
  require_same(gt, pred, "q2n");
  require_hwc(gt, "q2n");
  const Index h = gt.dim(0), w = gt.dim(1), c = gt.dim(2);
  if (c < 2) throw DimensionError("q2n needs at least 2 bands; use q_index for a single band");
  check_window(h, w, window, "q2n");
  const Index n = next_pow2(c);
  QResult r{0.0, 0, 0, n != c};
  const double count = static_cast<double>(window * window);
  std::vector<double> za(static_cast<std::size_t>(n)), zb(static_cast<std::size_t>(n)),
      zbc(static_cast<std::size_t>(n)), prod(static_cast<std::size_t>(n));
  double total = 0.0;
  for (Index y0 = 0; y0 + window <= h; y0 += window) {
    for (Index x0 = 0; x0 + window <= w; x0 += window) {
      Eigen::ArrayXd ma = Eigen::ArrayXd::Zero(n), mb = Eigen::ArrayXd::Zero(n);
      for (Index y = y0; y < y0 + window; ++y)
        for (Index x = x0; x < x0 + window; ++x) {
          ma.head(c) += gt.data().segment((y * w + x) * c, c);
          mb.head(c) += pred.data().segment((y * w + x) * c, c);
        }
      ma /= count;
      mb /= count;
      Eigen::ArrayXd cross = Eigen::ArrayXd::Zero(n);
      double va = 0.0, vb = 0.0;
      for (Index y = y0; y < y0 + window; ++y)
        for (Index x = x0; x < x0 + window; ++x) {
          for (Index k = 0; k < n; ++k) {
            za[static_cast<std::size_t>(k)] = (k < c ? gt.data()((y * w + x) * c + k) : 0.0) - ma(k);
            zb[static_cast<std::size_t>(k)] = (k < c ? pred.data()((y * w + x) * c + k) : 0.0) - mb(k);
          }
          cd_conjugate(zb, zbc);
          cd_multiply(za, zbc, prod);
          for (Index k = 0; k < n; ++k) cross(k) += prod[static_cast<std::size_t>(k)];
          for (Index k = 0; k < n; ++k) {
            va += za[static_cast<std::size_t>(k)] * za[static_cast<std::size_t>(k)];
            vb += zb[static_cast<std::size_t>(k)] * zb[static_cast<std::size_t>(k)];
          }
        }
      cross /= count;
      va /= count;
      vb /= count;
      double cs;
      if (va + vb < kMetricEps) {
        cs = 1.0;
        ++r.degenerate;
      } else {
        cs = 2.0 * std::sqrt(cross.square().sum()) / (va + vb);
      }
      const double na = std::sqrt(ma.square().sum()), nb = std::sqrt(mb.square().sum());
      total += cs * luminance(na, nb);
      ++r.windows;
    }
  }
  r.value = total / static_cast<double>(r.windows);
  return r;
}

// ---------------------------------------------------------------- no-reference

Tensor degrade_pan(const Tensor& pan) {
  if (pan.rank() != 2) throw DimensionError("degrade_pan expects [H,W], got " + to_string(pan.shape()));
  Tensor lr = decimate(gaussian_blur(reshape(pan, {pan.dim(0), pan.dim(1), 1})));
  return reshape(lr, {lr.dim(0), lr.dim(1)});
}

double d_lambda(const Tensor& fused, const Tensor& lrms, Index window, double p) {
  require_hwc(fused, "d_lambda");
  require_hwc(lrms, "d_lambda");
  const Index c = fused.dim(2);
  if (lrms.dim(2) != c) throw DimensionError("d_lambda: band counts differ");
  const Index lw = std::max<Index>(1, window / kScale);
  double acc = 0.0;
  Index pairs = 0;
  for (Index i = 0; i < c; ++i)
    for (Index j = i + 1; j < c; ++j) {
      const double qf = q_index(band(fused, i), band(fused, j), window).value;
      const double ql = q_index(band(lrms, i), band(lrms, j), lw).value;
      acc += std::pow(std::abs(qf - ql), p);
      ++pairs;
    }
  return pairs == 0 ? 0.0 : std::pow(acc / static_cast<double>(pairs), 1.0 / p);
}

double d_s(const Tensor& fused, const Tensor& lrms, const Tensor& pan, const Tensor& pan_degraded, Index window,
           double q) {
  require_hwc(fused, "d_s");
  require_hwc(lrms, "d_s");
  const Index c = fused.dim(2);
  if (lrms.dim(2) != c) throw DimensionError("d_s: band counts differ");
  const Index lw = std::max<Index>(1, window / kScale);
  const Band p = plane(pan), pl = plane(pan_degraded);
  double acc = 0.0;
  for (Index i = 0; i < c; ++i) {
    const double qf = q_index(band(fused, i), p, window).value;
    const double ql = q_index(band(lrms, i), pl, lw).value;
    acc += std::pow(std::abs(qf - ql), q);
  }
  return std::pow(acc / static_cast<double>(c), 1.0 / q);
}

double hqnr(double dl, double ds) { return (1.0 - dl) * (1.0 - ds); }

// ---------------------------------------------------------------- reports

MetricRow reduced_metrics(const std::string& id, const Tensor& gt, const Tensor& pred, Index window) {
  MetricRow row{id, {}, {}};
  const ErgasResult e = ergas(gt, pred);
  const QResult q = q_mean(gt, pred, window);
  const QResult q2 = q2n(gt, pred, window);
  row.values = {psnr(gt, pred), sam(gt, pred), e.value, q.value, q2.value};
  std::string flags;
  auto flag = [&](const std::string& f) { flags += (flags.empty() ? "" : ";") + f; };
  if (e.guarded) flag("ergas_mean_guarded");
  if (q.degenerate > 0) flag("q_degenerate=" + std::to_string(q.degenerate));
  if (q2.degenerate > 0) flag("q2n_degenerate=" + std::to_string(q2.degenerate));
  if (q2.padded) flag("q2n_padded");
  row.flags = flags;
  return row;
}

MetricRow full_metrics(const std::string& id, const Tensor& fused, const Tensor& lrms, const Tensor& pan,
                       Index window) {
  const double dl = d_lambda(fused, lrms, window);
  const double ds = d_s(fused, lrms, pan, degrade_pan(pan), window);
  return {id, {dl, ds, hqnr(dl, ds)}, {}};
}

std::vector<double> MetricsReport::means() const {
  std::vector<double> m(columns.size(), 0.0);
  for (const MetricRow& r : rows)
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += r.values[i];
  for (double& v : m) v /= rows.empty() ? 1.0 : static_cast<double>(rows.size());
  return m;
}

void MetricsReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write report " + path.string());
  for (const auto& [k, v] : metadata) out << "# " << k << ": " << v << '\n';
  out << "id";
  for (const auto& c : columns) out << ',' << c;
  out << ",flags\n";
  for (const MetricRow& r : rows) {
    out << r.id;
    for (double v : r.values) out << ',' << format(v);
    out << ',' << r.flags << '\n';
  }
  out << "mean";
  for (double v : means()) out << ',' << format(v);
  out << ",\n";
}

}  // namespace adwm
