#include "adwm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "adwm/metrics.hpp"
#include "adwm/runtime.hpp"

namespace adwm {

namespace {

std::string format_log_value(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (halve_every < 1) throw ConfigError("halve_every must be >= 1");
}

double learning_rate(const TrainConfig& config, Index epoch) {
  return config.lr0 * std::ldexp(1.0, -static_cast<int>(epoch / config.halve_every));
}

Tensor l1_loss(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape()) {
    throw DimensionError("l1_loss: shapes differ, " + to_string(pred.shape()) + " vs " + to_string(gt.shape()));
  }
  return mean(abs(pred - gt));
}

void adam_step(std::span<Tensor> params, std::span<const Eigen::ArrayXd> grads, AdamState& state, double lr,
               const AdamConfig& config) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: parameter and gradient counts differ");
  if (state.m.empty()) {
    for (const Tensor& p : params) {
      state.m.push_back(Eigen::ArrayXd::Zero(p.numel()));
      state.v.push_back(Eigen::ArrayXd::Zero(p.numel()));
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: state does not match the parameters");
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Eigen::ArrayXd& g = grads[i];
    if (g.size() != params[i].numel()) throw DimensionError("adam_step: gradient " + std::to_string(i) + " has wrong size");
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g.square();
    params[i].mutable_data() -= lr * (state.m[i] / c1) / ((state.v[i] / c2).sqrt() + config.eps);
  }
}

double evaluate_psnr(const PansharpenModel& model, const std::vector<SamplePair>& samples) {
  if (samples.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> values(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    NoGradGuard guard;
    values[i] = psnr(samples[i].gt, model_forward(model, samples[i].pan, samples[i].lrms));
  });
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

MetricsReport evaluate_dataset(const Predictor& predict, const std::vector<SamplePair>& samples, bool full_res,
                               Index window) {
  if (samples.empty()) throw ConfigError("evaluation set is empty");
  MetricsReport report;
  report.columns = full_res ? kFullColumns : kReducedColumns;
  report.rows.resize(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    NoGradGuard guard;
    const SamplePair& s = samples[i];
    const Tensor fused = predict(s);
    report.rows[i] = full_res ? full_metrics(s.id, fused, s.lrms, s.pan, window)
                              : reduced_metrics(s.id, s.gt, fused, window);
  });
  report.metadata = {{"mode", full_res ? "full-resolution" : "reduced-resolution"},
                     {"samples", std::to_string(samples.size())},
                     {"window", std::to_string(window)}};
  return report;
}

Predictor model_predictor(const PansharpenModel& model) {
  return [&model](const SamplePair& s) { return model_forward(model, s.pan, s.lrms); };
}

std::filesystem::path best_checkpoint_path(const std::filesystem::path& checkpoint) {
  return std::filesystem::path(checkpoint.string() + ".best");
}

TrainResult train(PansharpenModel& model, const std::vector<SamplePair>& train_set,
                  const std::vector<SamplePair>& val_set, const TrainConfig& config, const TrainOutputs& outputs,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty()) throw ConfigError("training set is empty");
  std::vector<Tensor> params = model.parameters();
  AdamState state;
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  std::ofstream log;
  if (outputs.log) {
    log.open(*outputs.log, std::ios::trunc);
    if (!log) throw ConfigError("cannot write log " + outputs.log->string());
    log << "epoch,lr,train_l1,val_psnr\n";
  }

  TrainResult result;
  const std::size_t batch = static_cast<std::size_t>(config.batch_size);
  std::vector<Eigen::ArrayXd> grads(params.size());
  for (Index epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = learning_rate(config, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0, batch_id = 0; start < order.size(); start += batch, ++batch_id) {
      const std::size_t end = std::min(order.size(), start + batch);
      const double inv = 1.0 / static_cast<double>(end - start);
      for (Tensor& p : params) p.zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const SamplePair& s = train_set[order[k]];
        Tensor loss = l1_loss(model_forward(model, s.pan, s.lrms), s.gt);
        const double value = loss.item();
        if (!std::isfinite(value)) {
          std::string ids;
          for (std::size_t j = start; j < end; ++j) ids += (j == start ? "" : ",") + train_set[order[j]].id;
          throw NumericError("non-finite loss " + format_log_value(value) + " at epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(batch_id) + " (sample " + s.id + "; batch members " + ids +
                             ")");
        }
        loss_sum += value;
        scale(loss, inv).backward();
      }
      for (std::size_t i = 0; i < params.size(); ++i) {
        grads[i] = params[i].has_grad() ? params[i].grad() : Eigen::ArrayXd::Zero(params[i].numel());
      }
      adam_step(params, grads, state, lr, config.adam);
    }
    for (Tensor& p : params) p.zero_grad();

    EpochLog row{epoch, lr, loss_sum / static_cast<double>(order.size()), evaluate_psnr(model, val_set)};
    result.log.push_back(row);
    if (log) {
      log << row.epoch << ',' << format_log_value(row.lr) << ',' << format_log_value(row.train_l1) << ','
          << format_log_value(row.val_psnr) << '\n';
      log.flush();
    }
    // Without validation data the latest epoch counts as best.
    const bool better = std::isnan(row.val_psnr) || result.best_epoch < 0 || row.val_psnr > result.best_val_psnr;
    if (better) {
      result.best_epoch = epoch;
      result.best_val_psnr = row.val_psnr;
      if (outputs.checkpoint) {
        save_checkpoint(best_checkpoint_path(*outputs.checkpoint), model,
                        {static_cast<std::uint32_t>(epoch + 1), config.seed});
      }
    }
    if (on_epoch) on_epoch(epoch, model);
  }
  if (outputs.checkpoint) {
    save_checkpoint(*outputs.checkpoint, model, {static_cast<std::uint32_t>(config.epochs), config.seed});
  }
  return result;
}

}  // namespace adwm
