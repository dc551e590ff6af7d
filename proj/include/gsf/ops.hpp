#pragma once

#include <cstddef>

#include "gsf/tensor.hpp"

// Differentiable tensor operations. Each op records itself on the active
// tape when any operand is tracked. Shape mismatches throw ShapeError.
//
// Image tensors use NHWC layout: (batch, height, width, channels).
namespace gsf::ad {

// Elementwise, operands of identical shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor square(const Tensor& x);

Tensor add_scalar(const Tensor& x, float c);
Tensor mul_scalar(const Tensor& x, float c);

// Tensor of `shape` filled with the single value of `s`.
Tensor broadcast_scalar(const Tensor& s, const Shape& shape);

// (m,k) x (k,n) -> (m,n)
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// Vector (n) -> diagonal matrix (n,n).
Tensor diag(const Tensor& v);

// Stride-1 convolution with zero "same" padding. x: (N,H,W,Ci),
// weight: (kh,kw,Ci,Co) with odd kh/kw, bias: (Co).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// (N, ...) -> (N)
Tensor sum_per_sample(const Tensor& x);

Tensor reshape(const Tensor& x, const Shape& shape);

// Channel (last axis) slicing and concatenation.
Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_channels(const Tensor& a, const Tensor& b);

// Space-to-depth: (N,H,W,C) -> (N,H/2,W/2,4C). Output channel
// (dy*2 + dx)*C + c takes input pixel (2y+dy, 2x+dx, c).
Tensor squeeze2x2(const Tensor& x);
Tensor unsqueeze2x2(const Tensor& x);

// Per-channel multiply / add along the last axis; s and b have shape (C).
Tensor scale_channels(const Tensor& x, const Tensor& s);
Tensor shift_channels(const Tensor& x, const Tensor& b);

// Per-sample, per-channel normalization over H and W.
Tensor instance_norm(const Tensor& x, float eps = 1e-5f);
// 2x2 mean pooling, (N,H,W,C) -> (N,H/2,W/2,C).
Tensor avg_pool2x2(const Tensor& x);
// (N,H,W,C) -> (N,C)
Tensor global_avg_pool(const Tensor& x);

}  // namespace gsf::ad
