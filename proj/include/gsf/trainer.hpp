#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "gsf/dataset.hpp"
#include "gsf/flow.hpp"

namespace gsf::train {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  float learning_rate = 1e-3f;
  std::uint64_t seed = 0;
  std::size_t checkpoint_interval = 0;  // epochs between checkpoints, 0 = only on abort
  std::filesystem::path checkpoint_path;
  bool dequantize = true;
  double grad_clip = 50.0;

  void validate() const;
};

struct LossPoint {
  std::size_t epoch;
  std::size_t step;  // global optimizer step, 0-based
  double nll_bits_per_dim;
};

struct TrainResult {
  std::vector<LossPoint> curve;
  std::size_t steps = 0;
};

using ProgressFn = std::function<void(const LossPoint&)>;

// Minimizes the mean negative log-likelihood (in bits per dimension) of the
// training split with Adam. Actnorm is initialized from the first batch if
// needed. Dequantization adds U(-0.5, 0.5) pixel noise, centring each
// integer pixel in its bin.
//
// A non-finite loss or gradient restores the last good parameters, writes
// them to `checkpoint_path` when set, and throws NumericError.
TrainResult train(flow::FlowModel& model, const data::Dataset& dataset, const TrainConfig& config,
                  const ProgressFn& progress = {});

// Mean bits per dimension over the given images, evaluated in chunks.
double evaluate_bpd(const flow::FlowModel& model, const ad::Tensor& images, std::size_t chunk = 64);

// Number of optimizer steps per epoch for `train_count` images.
std::size_t batches_per_epoch(std::size_t train_count, std::size_t batch_size);

}  // namespace gsf::train
