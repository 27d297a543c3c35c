#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "adwm/tensor.hpp"

namespace adwm {

inline constexpr double kMetricEps = 1e-12;

using Band = Eigen::ArrayXXd;  // H x W

/// Band b of an [H,W,c] image.
Band band(const Tensor& image, Index b);
/// An [H,W] image as a band.
Band plane(const Tensor& image);

double psnr(const Tensor& gt, const Tensor& pred, double peak = 1.0, double cap = 100.0);
/// Mean spectral angle in degrees over pixels where both spectra are nonzero.
double sam(const Tensor& gt, const Tensor& pred);

struct ErgasResult {
  double value;
  bool guarded;  // some gt band mean fell below eps
};
ErgasResult ergas(const Tensor& gt, const Tensor& pred, double scale = 4.0);

struct QResult {
  double value;
  Index windows;
  Index degenerate;  // windows where both variances vanish
  bool padded = false;
};

/// Universal image quality index averaged over non-overlapping window x window tiles.
QResult q_index(const Band& a, const Band& b, Index window = 32);
/// Mean of per-band q_index.
QResult q_mean(const Tensor& gt, const Tensor& pred, Index window = 32);

/// In-place Cayley-Dickson product out = x * y for 2^k-component numbers.
void cd_multiply(std::span<const double> x, std::span<const double> y, std::span<double> out);
void cd_conjugate(std::span<const double> x, std::span<double> out);

/// Hypercomplex quality index over 2^k bands; other band counts are zero-padded (flagged).
QResult q2n(const Tensor& gt, const Tensor& pred, Index window = 32);

/// Mean |Q(f_i,f_j) - Q(l_i,l_j)|^p over band pairs, to the 1/p; lrms windows are window/4.
double d_lambda(const Tensor& fused, const Tensor& lrms, Index window = 32, double p = 1.0);
/// Mean |Q(f_i,P) - Q(l_i,P_lr)|^q over bands, to the 1/q.
double d_s(const Tensor& fused, const Tensor& lrms, const Tensor& pan, const Tensor& pan_degraded, Index window = 32,
           double q = 1.0);
double hqnr(double d_lambda, double d_s);

/// PAN blurred and decimated to LRMS scale, [H,W] -> [H/4,W/4].
Tensor degrade_pan(const Tensor& pan);

struct MetricRow {
  std::string id;
  std::vector<double> values;
  std::string flags;
};

/// Per-sample rows plus a mean row, written as CSV with '#' metadata lines first.
struct MetricsReport {
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<std::string> columns;
  std::vector<MetricRow> rows;

  std::vector<double> means() const;
  void write_csv(const std::filesystem::path& path) const;
};

inline const std::vector<std::string> kReducedColumns{"psnr", "sam", "ergas", "q", "q2n"};
inline const std::vector<std::string> kFullColumns{"d_lambda", "d_s", "hqnr"};

/// Reduced-resolution metrics in kReducedColumns order.
MetricRow reduced_metrics(const std::string& id, const Tensor& gt, const Tensor& pred, Index window = 32);
/// No-reference metrics in kFullColumns order.
MetricRow full_metrics(const std::string& id, const Tensor& fused, const Tensor& lrms, const Tensor& pan,
                       Index window = 32);

}  // namespace adwm
