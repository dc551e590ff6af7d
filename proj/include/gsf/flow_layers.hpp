#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "gsf/adam.hpp"
#include "gsf/random.hpp"
#include "gsf/tensor.hpp"

namespace gsf::flow {

using ad::Tensor;

// Output of an invertible block: transformed tensor and per-sample
// log|det J|, shape (N).
struct BlockOutput {
  Tensor y;
  Tensor logdet;
};

// Per-channel affine y = (x + bias) * exp(log_scale).
class ActNorm {
 public:
  explicit ActNorm(std::size_t channels);

  BlockOutput forward(const Tensor& x) const;
  Tensor inverse(const Tensor& y) const;

  // Sets bias/scale so `x` maps to zero mean, unit variance per channel.
  void initialize(const Tensor& x);
  bool initialized() const { return initialized_; }
  void mark_initialized(bool on) { initialized_ = on; }

  Tensor log_scale;
  Tensor bias;

 private:
  bool initialized_ = false;
};

// Invertible 1x1 convolution, W = P * L * (U + diag(sign * exp(log_diag)))
// with fixed permutation P and unit-lower L.
class InvertibleConv1x1 {
 public:
  InvertibleConv1x1(std::size_t channels, Rng& rng);

  BlockOutput forward(const Tensor& x) const;
  Tensor inverse(const Tensor& y) const;

  // Differentiable reconstruction of W.
  Tensor weight() const;
  std::size_t channels() const { return channels_; }

  std::vector<float> permutation;  // permutation[i] = column of the 1 in row i of P
  std::vector<float> sign;
  Tensor lower;
  Tensor upper;
  Tensor log_diag;

 private:
  std::size_t channels_;
};

// Affine coupling: the first half of the channels conditions a shift and a
// tanh-bounded log-scale applied to the second half.
class AffineCoupling {
 public:
  AffineCoupling(std::size_t channels, std::size_t hidden, Rng& rng);

  BlockOutput forward(const Tensor& x) const;
  Tensor inverse(const Tensor& y) const;

  Tensor conv1_weight, conv1_bias;
  Tensor conv2_weight, conv2_bias;

 private:
  struct Params {
    Tensor shift;
    Tensor log_scale;
  };
  Params condition(const Tensor& xa) const;

  std::size_t channels_;
};

// actnorm -> invertible 1x1 -> affine coupling
class FlowStep {
 public:
  FlowStep(std::size_t channels, std::size_t hidden, Rng& rng);

  BlockOutput forward(const Tensor& x) const;
  Tensor inverse(const Tensor& y) const;

  // Appends parameters with `prefix`, in checkpoint order.
  void collect(const std::string& prefix, std::vector<ad::Parameter>& out);

  ActNorm actnorm;
  InvertibleConv1x1 invconv;
  AffineCoupling coupling;

  std::string label;  // used in non-finite diagnostics
};

}  // namespace gsf::flow
