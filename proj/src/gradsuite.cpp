#include "adwm/gradsuite.hpp"

#include <algorithm>
#include <array>
#include <functional>
#include <random>

#include "adwm/adwm.hpp"
#include "adwm/backbone.hpp"
#include "adwm/trainer.hpp"

namespace adwm {

namespace {

struct Suite {
  std::vector<GradCheckResult> results;

  void record(const std::string& name, double err) {
    auto it = std::find_if(results.begin(), results.end(), [&](const auto& r) { return r.name == name; });
    if (it == results.end()) {
      results.push_back({name, err, 1});
    } else {
      it->worst = std::max(it->worst, err);
      ++it->seeds;
    }
  }
};

void op_checks(Suite& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto leaf = [&](Shape shape) { return Tensor::randn(std::move(shape), rng, 1.0, true); };
  Tensor a = leaf({3, 4}), b = leaf({4, 2}), w = leaf({2, 4}), x3 = leaf({3, 5, 4}), k = leaf({2, 3, 3, 3}), v = leaf({3});
  const Tensor proj3 = leaf({3, 5, 4}).detach(), proj2 = leaf({3, 4}).detach(), proj1 = leaf({3}).detach();

  s.record("matmul", gradcheck([&] { return sum(matmul(a, b) * matmul(a, b)); }, std::array{a, b}));
  s.record("transpose", gradcheck([&] { return sum(transpose(a) * transpose(a)); }, std::array{a}));
  s.record("reshape", gradcheck([&] { return sum(reshape(a, {2, 6}) * reshape(proj2, {2, 6}) * reshape(a, {2, 6})); },
                                std::array{a}));
  s.record("conv2d", gradcheck([&] { return sum(conv2d(x3, k) * conv2d(x3, k)); }, std::array{x3, k}));
  s.record("add", gradcheck([&] { return sum((x3 + v) * (x3 + v) * proj3); }, std::array{x3, v}));
  s.record("sub", gradcheck([&] { return sum((x3 - v) * (x3 - v) * proj3); }, std::array{x3, v}));
  s.record("mul", gradcheck([&] { return sum(x3 * v * proj3); }, std::array{x3, v}));
  s.record("scale", gradcheck([&] { return sum(scale(a, -3.0) * a); }, std::array{a}));
  s.record("sigmoid", gradcheck([&] { return sum(sigmoid(x3) * proj3); }, std::array{x3}));
  s.record("leaky_relu", gradcheck([&] { return sum(leaky_relu(x3) * proj3); }, std::array{x3}));
  s.record("relu", gradcheck([&] { return sum(relu(x3) * proj3); }, std::array{x3}));
  s.record("abs", gradcheck([&] { return sum(abs(x3) * proj3); }, std::array{x3}));
  s.record("softmax", gradcheck([&] { return sum(softmax(v) * proj1) + sum(softmax(a) * proj2); }, std::array{v, a}));
  s.record("sum", gradcheck([&] { return sum(a * a); }, std::array{a}));
  s.record("mean", gradcheck([&] { return mean(x3 * x3); }, std::array{x3}));
  s.record("spatial_mean", gradcheck([&] { return sum(spatial_mean(x3) * proj1 * spatial_mean(x3)); }, std::array{x3}));
  s.record("select", gradcheck([&] { return sum(select(x3, 1) * select(x3, 2)); }, std::array{x3}));
  s.record("stack", gradcheck(
                        [&] {
                          const Tensor parts[] = {v, v * v};
                          return sum(stack(parts) * stack(parts));
                        },
                        std::array{v}));
  s.record("concat", gradcheck(
                         [&] {
                           const Tensor parts[] = {x3, reshape(select(x3, 0), {1, 5, 4})};
                           return sum(concat(parts) * concat(parts));
                         },
                         std::array{x3}));
  s.record("covariance", gradcheck([&] { return sum(covariance(a) * covariance(a)); }, std::array{a}));
  s.record("correlation", gradcheck([&] { return sum(matmul(correlation(covariance(b)), w) * w); }, std::array{b}));
  s.record("upsample_bilinear",
           gradcheck([&] { return sum(upsample_bilinear(x3, 3) * upsample_bilinear(x3, 3)); }, std::array{x3}));
  s.record("upsample_nearest",
           gradcheck([&] { return sum(upsample_nearest(x3, 2) * upsample_nearest(x3, 2)); }, std::array{x3}));
  s.record("chw_to_hwc", gradcheck([&] { return sum(chw_to_hwc(x3) * chw_to_hwc(x3 * x3)); }, std::array{x3}));
  s.record("hwc_to_chw", gradcheck([&] { return sum(hwc_to_chw(x3) * hwc_to_chw(x3 * x3)); }, std::array{x3}));
  s.record("l1_loss", gradcheck([&] { return l1_loss(x3, proj3); }, std::array{x3}));
}

void head_checks(Suite& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x5bd1e995u);
  Tensor x = Tensor::randn({12, 4}, rng, 1.0, true);
  const Tensor probe = Tensor::randn({4}, rng);
  for (WeightMethod method : {WeightMethod::cacw, WeightMethod::pool, WeightMethod::attention, WeightMethod::pca}) {
    WeightGenerator gen = make_weight_generator(method, 4, 3, OutputActivation::sigmoid, rng);
    std::vector<Tensor> inputs = parameters(gen);
    if (method != WeightMethod::pca) inputs.push_back(x);  // the PCA basis is a constant of X
    s.record("head_" + std::string(to_string(method)),
             gradcheck([&] { return sum(generate(gen, x) * probe); }, inputs));
  }

  const Index c = 4, n = 3;
  WeightGenerator ifw = make_weight_generator(WeightMethod::cacw, c, 3, OutputActivation::sigmoid, rng);
  Tensor f = Tensor::randn({c, 5, 6}, rng, 1.0, true);
  const Tensor fprobe = Tensor::randn({c, 5, 6}, rng);
  std::vector<Tensor> inputs = parameters(ifw);
  inputs.push_back(f);
  s.record("ifw", gradcheck([&] { return sum(ifw_apply(ifw, f).features * fprobe); }, inputs));

  WeightGenerator cfw = make_weight_generator(WeightMethod::cacw, n, 2, OutputActivation::identity, rng);
  std::vector<Tensor> layers;
  for (Index i = 0; i < n; ++i) layers.push_back(Tensor::randn({c, 5, 6}, rng, 1.0, true));
  inputs = parameters(cfw);
  inputs.insert(inputs.end(), layers.begin(), layers.end());
  s.record("cfw", gradcheck(
                      [&] {
                        FeatureStack stack(layers);
                        return sum(cfw_apply(cfw, stack, stack).fused * fprobe);
                      },
                      inputs));
}

void model_check(Suite& s, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.bands = 2;
  cfg.channels = 3;
  cfg.blocks = 2;
  cfg.variant = Variant::adwm;
  PansharpenModel model(cfg, seed);
  std::mt19937_64 rng(seed + 1);
  Tensor pan = Tensor::uniform({8, 8}, rng, 0.0, 1.0, true);
  const Tensor lrms = Tensor::uniform({2, 2, 2}, rng, 0.0, 1.0);
  const Tensor probe = Tensor::randn({8, 8, 2}, rng);
  std::vector<Tensor> inputs = model.parameters();
  inputs.push_back(pan);
  s.record("model_adwm", gradcheck([&] { return sum(model_forward(model, pan, lrms) * probe); }, inputs));
}

}  // namespace

std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed, int seeds) {
  Suite suite;
  for (int i = 0; i < seeds; ++i) {
    const std::uint64_t s = seed + static_cast<std::uint64_t>(i);
    op_checks(suite, s);
    head_checks(suite, s);
    model_check(suite, s);
  }
  return suite.results;
}

}  // namespace adwm
