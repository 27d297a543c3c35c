#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "adwm/backbone.hpp"
#include "adwm/data.hpp"
#include "adwm/metrics.hpp"

namespace adwm {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  double lr0 = 2e-3;
  Index halve_every = 150;  // epochs
  Index batch_size = 16;
  Index epochs = 1;
  std::uint64_t seed = 0;
  AdamConfig adam;

  void validate() const;
};

/// lr0 * 0.5^floor(epoch / halve_every), epochs counted from 0.
double learning_rate(const TrainConfig& config, Index epoch);

/// Mean absolute error; the gradient at exact ties is 0.
Tensor l1_loss(const Tensor& pred, const Tensor& gt);

struct AdamState {
  std::vector<Eigen::ArrayXd> m, v;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update of every leaf in `params`.
void adam_step(std::span<Tensor> params, std::span<const Eigen::ArrayXd> grads, AdamState& state, double lr,
               const AdamConfig& config = {});

struct EpochLog {
  Index epoch;
  double lr;
  double train_l1;
  double val_psnr;  // NaN without a validation set
};

struct TrainOutputs {
  std::optional<std::filesystem::path> checkpoint;  // final weights; best goes to "<checkpoint>.best"
  std::optional<std::filesystem::path> log;
};

struct TrainResult {
  std::vector<EpochLog> log;
  Index best_epoch = -1;
  double best_val_psnr = 0.0;
};

using EpochCallback = std::function<void(Index epoch, const PansharpenModel& model)>;

/// Mean PSNR of the model on a sample set, no gradients; samples may run in parallel.
double evaluate_psnr(const PansharpenModel& model, const std::vector<SamplePair>& samples);

/// Fixed epoch loop with seeded per-epoch shuffles. Throws NumericError naming the
/// batch when a loss is not finite.
TrainResult train(PansharpenModel& model, const std::vector<SamplePair>& train_set,
                  const std::vector<SamplePair>& val_set, const TrainConfig& config, const TrainOutputs& outputs = {},
                  const EpochCallback& on_epoch = {});

using Predictor = std::function<Tensor(const SamplePair&)>;

/// Per-sample metric rows plus means: reduced-resolution metrics against gt, or
/// with `full_res` the no-reference metrics on (fused, lrms, pan) only.
MetricsReport evaluate_dataset(const Predictor& predict, const std::vector<SamplePair>& samples, bool full_res,
                               Index window = 32);
Predictor model_predictor(const PansharpenModel& model);

std::filesystem::path best_checkpoint_path(const std::filesystem::path& checkpoint);

}  // namespace adwm
