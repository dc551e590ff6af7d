#include "gsf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "gsf/adam.hpp"
#include "gsf/error.hpp"
#include "gsf/ops.hpp"
#include "gsf/random.hpp"

namespace gsf::train {

namespace {

using Snapshot = std::vector<std::vector<float>>;

Snapshot take_snapshot(const std::vector<ad::Parameter>& params) {
  Snapshot s;
  s.reserve(params.size());
  for (const auto& p : params) s.push_back(p.tensor.values());
  return s;
}

void restore(std::vector<ad::Parameter>& params, const Snapshot& s) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i].tensor.values() = s[i];
}

// Marks parameters as trainable for the guard's lifetime.
class TrainableGuard {
 public:
  explicit TrainableGuard(std::vector<ad::Parameter>& params) : params_(params) {
    for (auto& p : params_) p.tensor.set_requires_grad(true);
  }
  ~TrainableGuard() {
    for (auto& p : params_) {
      p.tensor.set_requires_grad(false);
      p.tensor.zero_grad();
    }
  }
  TrainableGuard(const TrainableGuard&) = delete;
  TrainableGuard& operator=(const TrainableGuard&) = delete;

 private:
  std::vector<ad::Parameter>& params_;
};

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  if (!(learning_rate > 0.0f)) throw ConfigError(fmt::format("train: learning rate must be > 0, got {}", learning_rate));
  if (!(grad_clip > 0.0)) throw ConfigError(fmt::format("train: grad_clip must be > 0, got {}", grad_clip));
  if (checkpoint_interval > 0 && checkpoint_path.empty()) {
    throw ConfigError("train: checkpoint_interval set without a checkpoint path");
  }
}

std::size_t batches_per_epoch(std::size_t train_count, std::size_t batch_size) {
  return (train_count + batch_size - 1) / batch_size;
}

double evaluate_bpd(const flow::FlowModel& model, const ad::Tensor& images, std::size_t chunk) {
  if (images.rank() != 4 || images.dim(0) == 0) throw ShapeError("evaluate_bpd: expected a non-empty (N,H,W,3) batch");
  ad::NoGradScope no_grad;
  const std::size_t n = images.dim(0);
  double total = 0.0;
  for (std::size_t b = 0; b < n; b += chunk) {
    const auto ll = model.log_likelihood(data::take_rows(images, b, std::min(n, b + chunk)));
    for (float v : ll.data()) total += v;
  }
  return flow::bits_per_dim(total / static_cast<double>(n), model.config().pixel_dims());
}

TrainResult train(flow::FlowModel& model, const data::Dataset& dataset, const TrainConfig& config,
                  const ProgressFn& progress) {
  config.validate();
  dataset.validate();
  const auto& mc = model.config();
  if (dataset.height != mc.height || dataset.width != mc.width) {
    throw ConfigError(fmt::format("train: dataset is {}x{} but the model expects {}x{}", dataset.height,
                                  dataset.width, mc.height, mc.width));
  }
  auto train_idx = dataset.indices(data::Split::Train);
  if (train_idx.empty()) throw ConfigError("train: dataset has no training images");

  TrainResult result;
  if (config.epochs == 0) return result;

  const std::size_t dims = mc.pixel_dims();
  const float to_bpd = static_cast<float>(-1.0 / (static_cast<double>(dims) * std::log(2.0)));
  const double bpd_offset = std::log2(255.0);
  const std::size_t per_epoch = batches_per_epoch(train_idx.size(), config.batch_size);

  auto params = model.parameters();
  TrainableGuard trainable(params);
  ad::AdamState adam(params, {.learning_rate = config.learning_rate});
  Rng noise_rng(derive_seed(config.seed, 1));
  Snapshot last_good;

  auto abort = [&](const std::string& why) {
    restore(params, last_good);
    if (!config.checkpoint_path.empty()) flow::save_checkpoint(model, config.checkpoint_path);
    throw NumericError(fmt::format("train aborted at step {}: {}; restored last good parameters{}", result.steps, why,
                                   config.checkpoint_path.empty() ? std::string()
                                                                  : " to " + config.checkpoint_path.string()));
  };

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng order_rng(derive_seed(config.seed, 1000 + epoch));
    std::shuffle(train_idx.begin(), train_idx.end(), order_rng);
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t begin = b * config.batch_size;
      const std::size_t end = std::min(train_idx.size(), begin + config.batch_size);
      ad::Tensor x = dataset.batch(std::span<const std::size_t>(train_idx.data() + begin, end - begin));
      if (config.dequantize) {
        std::uniform_real_distribution<float> u(-0.5f / 255.0f, 0.5f / 255.0f);
        for (float& v : x.data()) v += u(noise_rng);
      }
      if (!model.actnorm_initialized()) model.initialize_actnorm(x);
      if (last_good.empty()) last_good = take_snapshot(params);

      ad::Tape tape;
      double bpd = 0.0;
      try {
        ad::GradScope scope(tape);
        ad::zero_grads(params);
        ad::Tensor loss = ad::mul_scalar(ad::mean(model.log_likelihood(x)), to_bpd);
        bpd = static_cast<double>(loss.item()) + bpd_offset;
        if (!std::isfinite(bpd)) abort("non-finite loss");
        tape.backward(loss);
      } catch (const NumericError& e) {
        if (std::string_view(e.what()).starts_with("train aborted")) throw;
        abort(e.what());
      }
      ad::clip_grad_norm(params, config.grad_clip);
      try {
        ad::adam_step(params, adam);
      } catch (const NumericError& e) {
        abort(e.what());
      }
      last_good = take_snapshot(params);

      LossPoint point{epoch, result.steps, bpd};
      result.curve.push_back(point);
      ++result.steps;
      if (progress) progress(point);
    }
    if (config.checkpoint_interval > 0 && (epoch + 1) % config.checkpoint_interval == 0) {
      flow::save_checkpoint(model, config.checkpoint_path);
    }
  }
  return result;
}

}  // namespace gsf::train
