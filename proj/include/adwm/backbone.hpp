#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "adwm/adwm.hpp"

namespace adwm {

/// baseline: last-feature aggregation. ifw: learned gates, equal layer weights.
/// cfw: unit gates, learned layer weights. adwm: both learned.
enum class Variant { baseline, ifw, cfw, adwm };
enum class Upsampling { bilinear, nearest };

std::string_view to_string(Variant variant);
Variant parse_variant(std::string_view name);
std::string_view to_string(Upsampling mode);
Upsampling parse_upsampling(std::string_view name);

struct ModelConfig {
  static constexpr Index scale = 4;

  Index bands = 4;
  Index channels = 48;
  Index blocks = 6;
  Variant variant = Variant::adwm;
  Upsampling upsampling = Upsampling::bilinear;
  double ifw_d_fraction = 0.8;
  double cfw_d_fraction = 0.8;
  bool share_ifw = false;
  WeightMethod method = WeightMethod::cacw;

  void validate() const;
  bool has_adwm() const { return variant != Variant::baseline; }
  /// Gate modes follow the variant.
  AdwmConfig adwm_config() const;
};

struct ResidualBlock {
  Tensor w1, b1, w2, b2;  // [C,C,3,3] [C] [C,C,3,3] [C]
  Tensor forward(const Tensor& x) const;
};

/// Encoder conv (c+1 -> C), N residual blocks, decoder conv (C -> c), and
/// optional ADWM over the block outputs. Predicts a detail residual over the
/// upsampled LRMS.
class PansharpenModel {
 public:
  PansharpenModel(ModelConfig config, std::uint64_t seed);

  /// pan [H,W], lrms [H/4,W/4,c] -> [H,W,c].
  Tensor forward(const Tensor& pan, const Tensor& lrms, SequentialSegment::Trace* trace = nullptr) const;
  /// Upsampled LRMS in CHW layout.
  Tensor upsample(const Tensor& lrms_chw) const;

  const ModelConfig& config() const { return config_; }
  /// Declaration order: encoder, blocks, decoder, ADWM heads.
  std::vector<Tensor> parameters() const;
  Index parameter_count() const { return parameter_count(config_); }
  static Index parameter_count(const ModelConfig& config);

  SequentialSegment& body() { return body_; }
  const SequentialSegment& body() const { return body_; }

  Tensor encoder_w, encoder_b, decoder_w, decoder_b;
  std::vector<ResidualBlock> blocks;

 private:
  ModelConfig config_;
  SequentialSegment body_;
};

Tensor model_forward(const PansharpenModel& model, const Tensor& pan, const Tensor& lrms);

struct CheckpointInfo {
  std::uint32_t epochs = 0;
  std::uint64_t seed = 0;
};

/// "ADWM", u32 version, u32 length + key=value config text, u32 tensor count, TNSR records.
void save_checkpoint(const std::filesystem::path& path, const PansharpenModel& model, const CheckpointInfo& info);
PansharpenModel load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr);

/// key=value lines describing the config, doubles with round-trip precision.
std::string serialize_config(const ModelConfig& config);
ModelConfig parse_model_config(std::string_view text);

}  // namespace adwm
