#pragma once

#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "adwm/cacw.hpp"
#include "adwm/tensor.hpp"

namespace adwm {

/// Channel gating: learned (IFW) or fixed at one.
enum class IfwMode { adaptive, identity };
/// Layer aggregation: learned softmax weights (CFW), equal weights, or the last layer only.
enum class CfwMode { adaptive, uniform, last };

struct AdwmConfig {
  Index n_layers = 1;
  Index channels = 2;
  double ifw_d_fraction = 0.8;
  double cfw_d_fraction = 0.8;
  bool share_ifw = false;
  WeightMethod method = WeightMethod::cacw;
  IfwMode ifw = IfwMode::adaptive;
  CfwMode cfw = CfwMode::adaptive;

  void validate() const;
  Index ifw_hidden() const { return hidden_width(ifw_d_fraction, channels); }
  Index cfw_hidden() const { return hidden_width(cfw_d_fraction, n_layers); }
};

/// Ordered same-shape [C,H,W] features from consecutive layers.
class FeatureStack {
 public:
  explicit FeatureStack(std::vector<Tensor> features);
  Index size() const { return static_cast<Index>(features_.size()); }
  const Tensor& operator[](Index i) const { return features_[static_cast<std::size_t>(i)]; }
  const Shape& feature_shape() const { return features_.front().shape(); }
  std::span<const Tensor> span() const { return features_; }

 private:
  std::vector<Tensor> features_;
};

struct IfwResult {
  Tensor features;  // F~ = F * alpha
  Tensor alpha;     // [C]
};

/// Intra-feature weighting: pixels are samples, channels are features.
IfwResult ifw_apply(const WeightGenerator& generator, const Tensor& feature);
/// F~ = F with alpha fixed at ones.
IfwResult ifw_identity(const Tensor& feature);

struct CfwResult {
  Tensor fused;          // [C,H,W]
  Tensor beta;           // raw layer scores [N]; undefined unless adaptive
  Tensor layer_weights;  // softmax(beta) or the fixed weights used
};

/// F^P: spatial means of each layer as a C x N observation matrix (channels are samples).
Tensor pool_layers(const FeatureStack& features);

/// Cross-feature weighting: scores from the unweighted stack, applied to the weighted one.
CfwResult cfw_apply(const WeightGenerator& generator, const FeatureStack& raw, const FeatureStack& weighted);

/// sum_k w_k F~_k accumulated term by term.
Tensor combine_pointwise(const Tensor& layer_weights, const FeatureStack& weighted);
/// w^T F~ with the stack flattened to N x (C H W).
Tensor combine_matmul(const Tensor& layer_weights, const FeatureStack& weighted);

/// Independent IFW heads (or one shared head) plus one CFW head.
class Adwm {
 public:
  Adwm(AdwmConfig config, std::mt19937_64& rng);

  struct Output {
    Tensor fused;
    std::vector<Tensor> alphas;  // per layer
    Tensor beta;
    Tensor layer_weights;
  };

  Output forward(const FeatureStack& features) const;

  const AdwmConfig& config() const { return config_; }
  /// Overrides the gating modes without touching the learned heads.
  void set_modes(IfwMode ifw, CfwMode cfw);
  std::vector<Tensor> parameters() const;
  Index parameter_count() const { return parameter_count(config_); }
  static Index parameter_count(const AdwmConfig& config);

  const std::vector<WeightGenerator>& ifw_heads() const { return ifw_heads_; }
  const std::optional<WeightGenerator>& cfw_head() const { return cfw_head_; }

 private:
  AdwmConfig config_;
  std::vector<WeightGenerator> ifw_heads_;
  std::optional<WeightGenerator> cfw_head_;
};

/// F~_i = IFW(F_i) per layer, then F^ = CFW(F, F~).
Tensor adwm_forward(const Adwm& adwm, const FeatureStack& features);

using FeatureBlock = std::function<Tensor(const Tensor&)>;

enum class Aggregation { last, mean, adwm };

/// Blocks run in sequence; every intermediate feature is recorded and the
/// segment output aggregates them (feature-to-feature).
class SequentialSegment {
 public:
  SequentialSegment(std::vector<FeatureBlock> blocks, Aggregation aggregation);
  SequentialSegment(std::vector<FeatureBlock> blocks, Adwm adwm);

  struct Trace {
    std::vector<Tensor> features;
    Adwm::Output adwm;
  };

  Tensor forward(const Tensor& input, Trace* trace = nullptr) const;

  Aggregation aggregation() const { return aggregation_; }
  void set_aggregation(Aggregation aggregation);
  Index size() const { return static_cast<Index>(blocks_.size()); }
  const std::optional<Adwm>& adwm() const { return adwm_; }
  std::optional<Adwm>& adwm() { return adwm_; }
  std::vector<Tensor> parameters() const;

 private:
  std::vector<FeatureBlock> blocks_;
  Aggregation aggregation_;
  std::optional<Adwm> adwm_;
};

/// Wraps a block sequence with its own, independently parameterized ADWM.
SequentialSegment wrap_sequential(std::vector<FeatureBlock> blocks, AdwmConfig config, std::mt19937_64& rng);

}  // namespace adwm
