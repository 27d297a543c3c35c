#include "adwm/cacw.hpp"

#include <cmath>

#include "adwm/linalg.hpp"

namespace adwm {

namespace {

Tensor init_uniform(Shape shape, Index fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Tensor::uniform(std::move(shape), rng, -bound, bound, true);
}

Tensor activate(const Tensor& t, OutputActivation activation) {
  return activation == OutputActivation::sigmoid ? sigmoid(t) : t;
}

// Shared row MLP: column j of `inputs` [in, cols] maps to output j.
Tensor shared_mlp(const CacwModule& m, const Tensor& inputs) {
  Tensor hidden = leaky_relu(matmul(m.w1, inputs) + m.b1);
  Tensor out = matmul(m.w2, hidden) + m.b2;
  return activate(reshape(out, {inputs.dim(1)}), m.activation());
}

void require_observations(const Tensor& x, Index n, std::string_view who) {
  if (x.rank() != 2 || x.dim(1) != n) {
    throw DimensionError(std::string(who) + ": expected an m x " + std::to_string(n) +
                         " observation matrix, got " + to_string(x.shape()));
  }
}

// Column means of an m x n matrix, differentiable.
Tensor column_means(const Tensor& x) {
  return spatial_mean(transpose(x));
}

}  // namespace

std::string_view to_string(WeightMethod method) {
  switch (method) {
    case WeightMethod::cacw: return "cacw";
    case WeightMethod::pool: return "pool";
    case WeightMethod::attention: return "attention";
    case WeightMethod::pca: return "pca";
  }
  return "?";
}

WeightMethod parse_weight_method(std::string_view name) {
  if (name == "cacw") return WeightMethod::cacw;
  if (name == "pool") return WeightMethod::pool;
  if (name == "attention") return WeightMethod::attention;
  if (name == "pca") return WeightMethod::pca;
  throw ConfigError("unknown weighting method '" + std::string(name) + "'");
}

Index hidden_width(double fraction, Index n) {
  if (!(fraction > 0.0)) throw ConfigError("hidden width fraction must be positive");
  // The small slack keeps e.g. 0.6 * 5 from rounding up to 4.
  const auto d = static_cast<Index>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  return std::max<Index>(d, 1);
}

// ---------------------------------------------------------------- CACW

CacwModule::CacwModule(Index n, Index d, OutputActivation activation, std::mt19937_64& rng)
    : w1(init_uniform({d, n}, n, rng)),
      b1(init_uniform({d}, n, rng)),
      w2(init_uniform({1, d}, d, rng)),
      b2(init_uniform({1}, d, rng)),
      activation_(activation) {}

CacwModule CacwModule::zeros(Index n, Index d, OutputActivation activation) {
  if (n < 1 || d < 1) throw ConfigError("CACW needs n >= 1 and d >= 1");
  return CacwModule(Tensor::zeros({d, n}, true), Tensor::zeros({d}, true), Tensor::zeros({1, d}, true),
                    Tensor::zeros({1}, true), activation);
}

Tensor generate_weights(const CacwModule& module, const Tensor& correlation_matrix) {
  if (correlation_matrix.rank() != 2 || correlation_matrix.dim(0) != module.n() ||
      correlation_matrix.dim(1) != module.n()) {
    throw DimensionError("generate_weights: module expects " + std::to_string(module.n()) + "x" +
                         std::to_string(module.n()) + ", got " + to_string(correlation_matrix.shape()));
  }
  // Column i of the transpose is row i of C~.
  return shared_mlp(module, transpose(correlation_matrix));
}

Tensor cacw_forward(const CacwModule& module, const Tensor& observations, double eps) {
  require_observations(observations, module.n(), "cacw_forward");
  return generate_weights(module, correlation(covariance(observations), eps));
}

// ---------------------------------------------------------------- baselines

PoolHead::PoolHead(Index n, Index d, OutputActivation activation, std::mt19937_64& rng)
    : w1(init_uniform({d, n}, n, rng)),
      b1(init_uniform({d}, n, rng)),
      w2(init_uniform({n, d}, d, rng)),
      b2(init_uniform({n}, d, rng)),
      activation_(activation) {}

AttentionHead::AttentionHead(Index n, Index d, OutputActivation activation, std::mt19937_64& rng)
    : mlp_(n, d, activation, rng) {}

PcaHead::PcaHead(Index n, Index d, OutputActivation activation, std::mt19937_64& rng)
    : n_(n), mlp_(components(n), d, activation, rng) {}

Tensor baseline_pool_weights(const PoolHead& head, const Tensor& observations) {
  require_observations(observations, head.n(), "baseline_pool_weights");
  Tensor pooled = reshape(column_means(observations), {head.n(), 1});
  Tensor hidden = leaky_relu(matmul(head.w1, pooled) + head.b1);
  Tensor out = matmul(head.w2, hidden) + head.b2;
  return activate(reshape(out, {head.n()}), head.activation());
}

Tensor baseline_attention_weights(const AttentionHead& head, const Tensor& observations) {
  require_observations(observations, head.n(), "baseline_attention_weights");
  const Index m = observations.dim(0);
  Tensor z = transpose(observations) - column_means(observations);  // [n, m]
  Tensor relevance = softmax(scale(matmul(z, transpose(z)), 1.0 / std::sqrt(static_cast<double>(m))));
  return generate_weights(head.mlp(), relevance);
}

Tensor baseline_pca_weights(const PcaHead& head, const Tensor& observations) {
  require_observations(observations, head.n(), "baseline_pca_weights");
  const auto cov = linalg::covariance(observations.matrix());
  const auto pca = linalg::jacobi_eigen(cov);
  const Index k = PcaHead::components(head.n());
  // Rows of the n x k basis become the columns of a k x n input.
  const linalg::Matrix<double> basis_t = pca.basis(k).transpose();
  Eigen::ArrayXd values(k * head.n());
  Eigen::Map<RowMatrixXd>(values.data(), k, head.n()) = basis_t;
  return shared_mlp(head.mlp(), Tensor::from({k, head.n()}, std::move(values)));
}

// ---------------------------------------------------------------- dispatch

WeightGenerator make_weight_generator(WeightMethod method, Index n, Index d, OutputActivation activation,
                                      std::mt19937_64& rng) {
  if (n < 1 || d < 1) throw ConfigError("weight generator needs n >= 1 and d >= 1");
  switch (method) {
    case WeightMethod::cacw: return CacwModule(n, d, activation, rng);
    case WeightMethod::pool: return PoolHead(n, d, activation, rng);
    case WeightMethod::attention: return AttentionHead(n, d, activation, rng);
    case WeightMethod::pca: return PcaHead(n, d, activation, rng);
  }
  throw ConfigError("unknown weighting method");
}

WeightMethod method_of(const WeightGenerator& generator) {
  return static_cast<WeightMethod>(generator.index());
}

Tensor generate(const WeightGenerator& generator, const Tensor& observations) {
  struct Visitor {
    const Tensor& x;
    Tensor operator()(const CacwModule& m) const { return cacw_forward(m, x); }
    Tensor operator()(const PoolHead& m) const { return baseline_pool_weights(m, x); }
    Tensor operator()(const AttentionHead& m) const { return baseline_attention_weights(m, x); }
    Tensor operator()(const PcaHead& m) const { return baseline_pca_weights(m, x); }
  };
  return std::visit(Visitor{observations}, generator);
}

std::vector<Tensor> parameters(const WeightGenerator& generator) {
  return std::visit([](const auto& m) { return m.parameters(); }, generator);
}

Index parameter_count(WeightMethod method, Index n, Index d) {
  switch (method) {
    case WeightMethod::cacw: return CacwModule::parameter_count(n, d);
    case WeightMethod::pool: return PoolHead::parameter_count(n, d);
    case WeightMethod::attention: return AttentionHead::parameter_count(n, d);
    case WeightMethod::pca: return PcaHead::parameter_count(n, d);
  }
  return 0;
}

}  // namespace adwm
