#pragma once

#include <random>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "adwm/tensor.hpp"

namespace adwm {

enum class OutputActivation { sigmoid, identity };
enum class WeightMethod { cacw, pool, attention, pca };

std::string_view to_string(WeightMethod method);
WeightMethod parse_weight_method(std::string_view name);

/// Hidden width for a fraction of the feature count: ceil(fraction * n), at least 1.
Index hidden_width(double fraction, Index n);

/// Correlation-aware covariance weighting head.
///
/// One MLP n -> d -> 1 (leaky-ReLU hidden) is shared across the rows of the
/// correlation matrix, so row i of C~ yields weight gamma_i and permuting the
/// features permutes the weights.
class CacwModule {
 public:
  CacwModule(Index n, Index d, OutputActivation activation, std::mt19937_64& rng);
  static CacwModule zeros(Index n, Index d, OutputActivation activation);

  Index n() const { return w1.dim(1); }
  Index d() const { return w1.dim(0); }
  OutputActivation activation() const { return activation_; }
  std::vector<Tensor> parameters() const { return {w1, b1, w2, b2}; }
  static Index parameter_count(Index n, Index d) { return d * n + 2 * d + 1; }

  Tensor w1;  // [d, n]
  Tensor b1;  // [d]
  Tensor w2;  // [1, d]
  Tensor b2;  // [1]

 private:
  CacwModule(Tensor w1_, Tensor b1_, Tensor w2_, Tensor b2_, OutputActivation activation)
      : w1(std::move(w1_)), b1(std::move(b1_)), w2(std::move(w2_)), b2(std::move(b2_)), activation_(activation) {}
  OutputActivation activation_;
};

/// gamma_i = act(W2 leaky_relu(W1 row_i(C~) + b1) + b2) for every row of an n x n correlation matrix.
Tensor generate_weights(const CacwModule& module, const Tensor& correlation_matrix);

/// generate_weights(correlation(covariance(X))) for an m x n observation matrix.
Tensor cacw_forward(const CacwModule& module, const Tensor& observations, double eps = 1e-8);

/// Global-average-pool baseline: column means -> MLP n -> d -> n.
class PoolHead {
 public:
  PoolHead(Index n, Index d, OutputActivation activation, std::mt19937_64& rng);
  Index n() const { return w1.dim(1); }
  Index d() const { return w1.dim(0); }
  OutputActivation activation() const { return activation_; }
  std::vector<Tensor> parameters() const { return {w1, b1, w2, b2}; }
  static Index parameter_count(Index n, Index d) { return 2 * d * n + d + n; }

  Tensor w1, b1, w2, b2;  // [d,n] [d] [n,d] [n]

 private:
  OutputActivation activation_;
};

/// Self-attention baseline: R = softmax_rows(Z Z^T / sqrt(m)) with Z the
/// centered transpose of X, followed by the same shared row MLP as CACW.
class AttentionHead {
 public:
  AttentionHead(Index n, Index d, OutputActivation activation, std::mt19937_64& rng);
  const CacwModule& mlp() const { return mlp_; }
  CacwModule& mlp() { return mlp_; }
  Index n() const { return mlp_.n(); }
  std::vector<Tensor> parameters() const { return mlp_.parameters(); }
  static Index parameter_count(Index n, Index d) { return CacwModule::parameter_count(n, d); }

 private:
  CacwModule mlp_;
};

/// PCA baseline: the top ceil(n/2) eigenvectors of the (detached) covariance;
/// row i of the n x k basis goes through a shared MLP k -> d -> 1.
class PcaHead {
 public:
  PcaHead(Index n, Index d, OutputActivation activation, std::mt19937_64& rng);
  Index n() const { return n_; }
  static Index components(Index n) { return (n + 1) / 2; }
  const CacwModule& mlp() const { return mlp_; }
  CacwModule& mlp() { return mlp_; }
  std::vector<Tensor> parameters() const { return mlp_.parameters(); }
  static Index parameter_count(Index n, Index d) { return CacwModule::parameter_count(components(n), d); }

 private:
  Index n_;
  CacwModule mlp_;
};

Tensor baseline_pool_weights(const PoolHead& head, const Tensor& observations);
Tensor baseline_attention_weights(const AttentionHead& head, const Tensor& observations);
Tensor baseline_pca_weights(const PcaHead& head, const Tensor& observations);

/// Any of the four weight generators, interchangeable inside IFW and CFW slots.
using WeightGenerator = std::variant<CacwModule, PoolHead, AttentionHead, PcaHead>;

WeightGenerator make_weight_generator(WeightMethod method, Index n, Index d, OutputActivation activation,
                                      std::mt19937_64& rng);
WeightMethod method_of(const WeightGenerator& generator);
/// Weight vector [n] for an m x n observation matrix.
Tensor generate(const WeightGenerator& generator, const Tensor& observations);
std::vector<Tensor> parameters(const WeightGenerator& generator);
Index parameter_count(WeightMethod method, Index n, Index d);

}  // namespace adwm
