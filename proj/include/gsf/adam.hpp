#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gsf/tensor.hpp"

namespace gsf::ad {

// A learnable tensor and the name used in error messages and checkpoints.
struct Parameter {
  std::string name;
  Tensor tensor;
};

struct AdamOptions {
  float learning_rate = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
};

// Per-parameter moments plus the shared step counter.
struct AdamState {
  AdamOptions options;
  std::vector<std::vector<float>> first_moment;
  std::vector<std::vector<float>> second_moment;
  std::uint64_t step = 0;

  AdamState() = default;
  AdamState(std::span<const Parameter> params, AdamOptions opts);
};

// One Adam update from the gradients currently stored on `params`. A
// parameter without a gradient is treated as having a zero gradient.
// Throws NumericError naming the parameter when a gradient is non-finite.
void adam_step(std::span<Parameter> params, AdamState& state);

// Scales all gradients so their global L2 norm is at most `max_norm`.
// Returns the norm before clipping.
double clip_grad_norm(std::span<Parameter> params, double max_norm);

void zero_grads(std::span<Parameter> params);

}  // namespace gsf::ad
