#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "adwm/backbone.hpp"
#include "adwm/data.hpp"

namespace adwm {

/// Eigenvalues of a symmetric PSD matrix, descending, normalized to sum 1.
Eigen::VectorXd scree_curve(const Eigen::MatrixXd& covariance);

/// Elementwise mean of equal-length normalized spectra.
Eigen::VectorXd average_scree(const std::vector<Eigen::VectorXd>& curves);

/// -sum p ln p in nats, with 0 ln 0 = 0.
double spectrum_entropy(const Eigen::VectorXd& scree);

/// Channel covariance of a [C,H,W] feature (pixels are samples).
Eigen::MatrixXd feature_covariance(const Tensor& feature);

struct WeightTraceRow {
  Index epoch;
  std::string kind;  // "alpha" or "beta"
  Index layer;
  Index index;
  double weight;
};

/// Alpha (per layer, per channel) and softmax(beta) (per layer), averaged over probes.
std::vector<WeightTraceRow> trace_weights(const PansharpenModel& model, const std::vector<SamplePair>& probes,
                                          Index epoch);
void write_weight_trace(const std::filesystem::path& path, const std::vector<WeightTraceRow>& rows);

struct AlphaSpread {
  Index epoch;
  Index layer;
  double min, max;
};
std::vector<AlphaSpread> alpha_spread(const std::vector<WeightTraceRow>& rows);

struct FlopConfig {
  Index height = 64;
  Index width = 64;
  Index bands = 4;
  Index channels = 16;
  Index layers = 4;
  double ifw_d_fraction = 0.8;
  double cfw_d_fraction = 0.8;
};

/// Multiply-accumulate counts per component of one forward pass.
struct FlopCount {
  std::uint64_t ifw_covariance = 0;
  std::uint64_t ifw_correlation = 0;
  std::uint64_t ifw_mlp = 0;
  std::uint64_t ifw_gate = 0;
  std::uint64_t cfw_covariance = 0;
  std::uint64_t cfw_correlation = 0;
  std::uint64_t cfw_mlp = 0;
  std::uint64_t cfw_combine = 0;
  std::uint64_t backbone = 0;

  std::uint64_t ifw() const { return ifw_covariance + ifw_correlation + ifw_mlp + ifw_gate; }
  std::uint64_t cfw() const { return cfw_covariance + cfw_correlation + cfw_mlp + cfw_combine; }
  std::uint64_t adwm() const { return ifw() + cfw(); }
  std::uint64_t total() const { return adwm() + backbone; }
};

FlopCount count_flops(const FlopConfig& config);
FlopConfig flop_config(const ModelConfig& model, Index height, Index width);

struct Series {
  std::string name;
  std::vector<double> x, y;
};

std::string svg_line_plot(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                          const std::string& y_label);
/// Light for the minimum, dark for the maximum.
std::string svg_heatmap(const Eigen::MatrixXd& values, const std::string& title);
void write_text(const std::filesystem::path& path, const std::string& text);

struct DiagnoseSummary {
  Index layers = 0;
  std::vector<std::filesystem::path> files;
};

/// Heatmaps, scree CSV/SVG, entropy CSV and a weight trace for a trained model.
DiagnoseSummary diagnose(const PansharpenModel& model, const std::vector<SamplePair>& samples,
                         const std::filesystem::path& out_dir);

}  // namespace adwm
