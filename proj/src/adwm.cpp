#include "adwm/adwm.hpp"

namespace adwm {

void AdwmConfig::validate() const {
  if (n_layers < 1) throw ConfigError("ADWM needs at least one layer");
  if (channels < 2) throw ConfigError("ADWM needs at least two channels");
  auto check_fraction = [](double f, const char* name) {
    if (!(f > 0.0 && f <= 2.0)) {
      throw ConfigError(std::string(name) + " must lie in (0, 2], got " + std::to_string(f));
    }
  };
  check_fraction(ifw_d_fraction, "ifw_d_fraction");
  check_fraction(cfw_d_fraction, "cfw_d_fraction");
}

FeatureStack::FeatureStack(std::vector<Tensor> features) : features_(std::move(features)) {
  if (features_.empty()) throw DimensionError("feature stack is empty");
  const Shape& shape = features_.front().shape();
  if (shape.size() != 3) throw DimensionError("features must be [C,H,W], got " + to_string(shape));
  for (const Tensor& f : features_) {
    if (f.shape() != shape) {
      throw DimensionError("feature stack mixes shapes " + to_string(shape) + " and " + to_string(f.shape()));
    }
  }
}

// ---------------------------------------------------------------- IFW

IfwResult ifw_apply(const WeightGenerator& generator, const Tensor& feature) {
  if (feature.rank() != 3) throw DimensionError("IFW expects [C,H,W], got " + to_string(feature.shape()));
  const Index c = feature.dim(0), pixels = feature.dim(1) * feature.dim(2);
  if (pixels < 2) throw DegenerateSampleError("IFW needs at least 2 pixels, got a 1x1 feature");
  Tensor samples = transpose(reshape(feature, {c, pixels}));  // [HW, C]
  Tensor alpha = generate(generator, samples);
  return {feature * alpha, alpha};
}

IfwResult ifw_identity(const Tensor& feature) {
  if (feature.rank() != 3) throw DimensionError("IFW expects [C,H,W], got " + to_string(feature.shape()));
  Tensor alpha = Tensor::ones({feature.dim(0)});
  return {feature * alpha, alpha};
}

// ---------------------------------------------------------------- CFW

Tensor pool_layers(const FeatureStack& features) {
  std::vector<Tensor> pooled;
  pooled.reserve(static_cast<std::size_t>(features.size()));
  for (const Tensor& f : features.span()) pooled.push_back(spatial_mean(f));
  return transpose(stack(pooled));  // [C, N]
}

Tensor combine_pointwise(const Tensor& layer_weights, const FeatureStack& weighted) {
  if (layer_weights.shape() != Shape{weighted.size()}) {
    throw DimensionError("layer weights " + to_string(layer_weights.shape()) + " for " +
                         std::to_string(weighted.size()) + " layers");
  }
  Tensor acc = weighted[0] * select(layer_weights, 0);
  for (Index k = 1; k < weighted.size(); ++k) acc = acc + weighted[k] * select(layer_weights, k);
  return acc;
}

Tensor combine_matmul(const Tensor& layer_weights, const FeatureStack& weighted) {
  const Index n = weighted.size();
  if (layer_weights.shape() != Shape{n}) {
    throw DimensionError("layer weights " + to_string(layer_weights.shape()) + " for " + std::to_string(n) +
                         " layers");
  }
  const Shape& shape = weighted.feature_shape();
  Tensor flat = reshape(stack(weighted.span()), {n, numel(shape)});
  return reshape(matmul(reshape(layer_weights, {1, n}), flat), shape);
}

CfwResult cfw_apply(const WeightGenerator& generator, const FeatureStack& raw, const FeatureStack& weighted) {
  if (raw.size() != weighted.size() || raw.feature_shape() != weighted.feature_shape()) {
    throw DimensionError("CFW stacks disagree: " + std::to_string(raw.size()) + " x " +
                         to_string(raw.feature_shape()) + " vs " + std::to_string(weighted.size()) + " x " +
                         to_string(weighted.feature_shape()));
  }
  if (raw.feature_shape()[0] < 2) throw DegenerateSampleError("CFW needs at least 2 channels");
  Tensor beta = generate(generator, pool_layers(raw));
  Tensor w = softmax(beta);
  return {combine_matmul(w, weighted), beta, w};
}

// ---------------------------------------------------------------- ADWM

Adwm::Adwm(AdwmConfig config, std::mt19937_64& rng) : config_(config) {
  config_.validate();
  if (config_.ifw == IfwMode::adaptive) {
    const Index heads = config_.share_ifw ? 1 : config_.n_layers;
    for (Index i = 0; i < heads; ++i) {
      ifw_heads_.push_back(make_weight_generator(config_.method, config_.channels, config_.ifw_hidden(),
                                                 OutputActivation::sigmoid, rng));
    }
  }
  if (config_.cfw == CfwMode::adaptive) {
    cfw_head_ = make_weight_generator(config_.method, config_.n_layers, config_.cfw_hidden(),
                                      OutputActivation::identity, rng);
  }
}

void Adwm::set_modes(IfwMode ifw, CfwMode cfw) {
  if (ifw == IfwMode::adaptive && ifw_heads_.empty()) throw ConfigError("no IFW heads to enable");
  if (cfw == CfwMode::adaptive && !cfw_head_) throw ConfigError("no CFW head to enable");
  config_.ifw = ifw;
  config_.cfw = cfw;
}

Adwm::Output Adwm::forward(const FeatureStack& features) const {
  if (features.size() != config_.n_layers) {
    throw DimensionError("ADWM configured for " + std::to_string(config_.n_layers) + " layers, got " +
                         std::to_string(features.size()));
  }
  if (features.feature_shape()[0] != config_.channels) {
    throw DimensionError("ADWM configured for " + std::to_string(config_.channels) + " channels, got " +
                         to_string(features.feature_shape()));
  }
  Output out;
  std::vector<Tensor> weighted;
  for (Index i = 0; i < features.size(); ++i) {
    IfwResult r = config_.ifw == IfwMode::adaptive
                      ? ifw_apply(ifw_heads_[config_.share_ifw ? 0 : static_cast<std::size_t>(i)], features[i])
                      : ifw_identity(features[i]);
    weighted.push_back(std::move(r.features));
    out.alphas.push_back(std::move(r.alpha));
  }
  FeatureStack tilde(std::move(weighted));
  const Index n = features.size();
  switch (config_.cfw) {
    case CfwMode::adaptive: {
      CfwResult r = cfw_apply(*cfw_head_, features, tilde);
      out.fused = r.fused;
      out.beta = r.beta;
      out.layer_weights = r.layer_weights;
      break;
    }
    case CfwMode::uniform:
      out.layer_weights = softmax(Tensor::zeros({n}));
      out.fused = combine_matmul(out.layer_weights, tilde);
      break;
    case CfwMode::last: {
      Eigen::ArrayXd w = Eigen::ArrayXd::Zero(n);
      w(n - 1) = 1.0;
      out.layer_weights = Tensor::from({n}, w);
      out.fused = tilde[n - 1];
      break;
    }
  }
  return out;
}

std::vector<Tensor> Adwm::parameters() const {
  std::vector<Tensor> params;
  for (const WeightGenerator& head : ifw_heads_) {
    auto p = adwm::parameters(head);
    params.insert(params.end(), p.begin(), p.end());
  }
  if (cfw_head_) {
    auto p = adwm::parameters(*cfw_head_);
    params.insert(params.end(), p.begin(), p.end());
  }
  return params;
}

Index Adwm::parameter_count(const AdwmConfig& config) {
  Index total = 0;
  if (config.ifw == IfwMode::adaptive) {
    const Index heads = config.share_ifw ? 1 : config.n_layers;
    total += heads * adwm::parameter_count(config.method, config.channels, config.ifw_hidden());
  }
  if (config.cfw == CfwMode::adaptive) {
    total += adwm::parameter_count(config.method, config.n_layers, config.cfw_hidden());
  }
  return total;
}

Tensor adwm_forward(const Adwm& adwm, const FeatureStack& features) { return adwm.forward(features).fused; }

// ---------------------------------------------------------------- segments

SequentialSegment::SequentialSegment(std::vector<FeatureBlock> blocks, Aggregation aggregation)
    : blocks_(std::move(blocks)), aggregation_(aggregation) {
  if (blocks_.empty()) throw ConfigError("segment needs at least one block");
  if (aggregation_ == Aggregation::adwm) throw ConfigError("ADWM aggregation needs an ADWM instance");
}

SequentialSegment::SequentialSegment(std::vector<FeatureBlock> blocks, Adwm adwm)
    : blocks_(std::move(blocks)), aggregation_(Aggregation::adwm), adwm_(std::move(adwm)) {
  if (blocks_.empty()) throw ConfigError("segment needs at least one block");
  if (adwm_->config().n_layers != size()) {
    throw ConfigError("ADWM configured for " + std::to_string(adwm_->config().n_layers) + " layers, segment has " +
                      std::to_string(size()) + " blocks");
  }
}

void SequentialSegment::set_aggregation(Aggregation aggregation) {
  if (aggregation == Aggregation::adwm && !adwm_) throw ConfigError("segment has no ADWM instance");
  aggregation_ = aggregation;
}

Tensor SequentialSegment::forward(const Tensor& input, Trace* trace) const {
  std::vector<Tensor> features;
  features.reserve(blocks_.size());
  Tensor x = input;
  for (const FeatureBlock& block : blocks_) {
    x = block(x);
    if (!features.empty() && x.shape() != features.front().shape()) {
      throw ConfigError("segment blocks emit different shapes: " + to_string(features.front().shape()) + " and " +
                        to_string(x.shape()));
    }
    features.push_back(x);
  }
  if (trace) trace->features = features;
  const Index n = static_cast<Index>(features.size());
  switch (aggregation_) {
    case Aggregation::last:
      return features.back();
    case Aggregation::mean: {
      FeatureStack stack_(std::move(features));
      return combine_matmul(Tensor::full({n}, 1.0 / static_cast<double>(n)), stack_);
    }
    case Aggregation::adwm: {
      Adwm::Output out = adwm_->forward(FeatureStack(std::move(features)));
      Tensor fused = out.fused;
      if (trace) trace->adwm = std::move(out);
      return fused;
    }
  }
  return features.back();
}

std::vector<Tensor> SequentialSegment::parameters() const {
  return adwm_ ? adwm_->parameters() : std::vector<Tensor>{};
}

SequentialSegment wrap_sequential(std::vector<FeatureBlock> blocks, AdwmConfig config, std::mt19937_64& rng) {
  config.n_layers = static_cast<Index>(blocks.size());
  return SequentialSegment(std::move(blocks), Adwm(config, rng));
}

}  // namespace adwm
