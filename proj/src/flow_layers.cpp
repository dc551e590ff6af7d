#include "gsf/flow_layers.hpp"

#include <cmath>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "gsf/error.hpp"
#include "gsf/ops.hpp"

namespace gsf::flow {

namespace {

using MatrixD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::size_t spatial(const Tensor& x) { return x.dim(1) * x.dim(2); }

Tensor constant_logdet(const Tensor& per_sample_scalar, std::size_t batch) {
  return ad::broadcast_scalar(per_sample_scalar, {batch});
}

}  // namespace

// ActNorm

ActNorm::ActNorm(std::size_t channels)
    : log_scale(ad::Shape{channels}, 0.0f), bias(ad::Shape{channels}, 0.0f) {}

BlockOutput ActNorm::forward(const Tensor& x) const {
  Tensor y = ad::scale_channels(ad::shift_channels(x, bias), ad::exp(log_scale));
  Tensor ld = ad::mul_scalar(ad::sum(log_scale), static_cast<float>(spatial(x)));
  return {y, constant_logdet(ld, x.dim(0))};
}

Tensor ActNorm::inverse(const Tensor& y) const {
  return ad::shift_channels(ad::scale_channels(y, ad::exp(ad::neg(log_scale))), ad::neg(bias));
}

void ActNorm::initialize(const Tensor& x) {
  const std::size_t C = x.shape().back();
  const std::size_t rows = x.size() / C;
  for (std::size_t c = 0; c < C; ++c) {
    double m = 0.0;
    for (std::size_t r = 0; r < rows; ++r) m += x[r * C + c];
    m /= static_cast<double>(rows);
    double v = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double d = x[r * C + c] - m;
      v += d * d;
    }
    v /= static_cast<double>(rows);
    bias.data()[c] = static_cast<float>(-m);
    log_scale.data()[c] = static_cast<float>(-std::log(std::sqrt(v) + 1e-6));
  }
  initialized_ = true;
}

// InvertibleConv1x1

InvertibleConv1x1::InvertibleConv1x1(std::size_t channels, Rng& rng)
    : lower(ad::Shape{channels, channels}),
      upper(ad::Shape{channels, channels}),
      log_diag(ad::Shape{channels}),
      channels_(channels) {
  std::normal_distribution<double> dist(0.0, 1.0);
  MatrixD g(channels, channels);
  for (Eigen::Index i = 0; i < g.rows(); ++i)
    for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = dist(rng);
  MatrixD q = Eigen::HouseholderQR<MatrixD>(g).householderQ();

  // q = P^T * L * U with P from partial pivoting.
  Eigen::PartialPivLU<MatrixD> lu(q);
  MatrixD packed = lu.matrixLU();
  MatrixD p_t = lu.permutationP().transpose().toDenseMatrix().cast<double>();

  permutation.resize(channels);
  sign.resize(channels);
  for (std::size_t i = 0; i < channels; ++i) {
    for (std::size_t j = 0; j < channels; ++j) {
      const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
      if (p_t(ii, jj) != 0.0) permutation[i] = static_cast<float>(j);
      if (j < i) lower.data()[i * channels + j] = static_cast<float>(packed(ii, jj));
      if (j > i) upper.data()[i * channels + j] = static_cast<float>(packed(ii, jj));
    }
    const double d = packed(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
    sign[i] = d < 0.0 ? -1.0f : 1.0f;
    log_diag.data()[i] = static_cast<float>(std::log(std::fabs(d)));
  }
}

Tensor InvertibleConv1x1::weight() const {
  const std::size_t C = channels_;
  std::vector<float> p(C * C, 0.0f), lmask(C * C, 0.0f), umask(C * C, 0.0f), eye(C * C, 0.0f);
  for (std::size_t i = 0; i < C; ++i) {
    p[i * C + static_cast<std::size_t>(permutation[i])] = 1.0f;
    eye[i * C + i] = 1.0f;
    for (std::size_t j = 0; j < C; ++j) {
      if (j < i) lmask[i * C + j] = 1.0f;
      if (j > i) umask[i * C + j] = 1.0f;
    }
  }
  const ad::Shape sq{C, C};
  Tensor l = ad::add(ad::mul(lower, Tensor(sq, std::move(lmask))), Tensor(sq, std::move(eye)));
  Tensor d = ad::mul(ad::exp(log_diag), Tensor(ad::Shape{C}, sign));
  Tensor u = ad::add(ad::mul(upper, Tensor(sq, std::move(umask))), ad::diag(d));
  return ad::matmul(Tensor(sq, std::move(p)), ad::matmul(l, u));
}

BlockOutput InvertibleConv1x1::forward(const Tensor& x) const {
  const std::size_t C = channels_;
  if (x.shape().back() != C) {
    throw ShapeError(fmt::format("invconv: expected {} channels, got shape {}", C,
                                 ad::shape_string(x.shape())));
  }
  Tensor flat = ad::reshape(x, {x.size() / C, C});
  Tensor y = ad::reshape(ad::matmul(flat, ad::transpose(weight())), x.shape());
  Tensor ld = ad::mul_scalar(ad::sum(log_diag), static_cast<float>(spatial(x)));
  return {y, constant_logdet(ld, x.dim(0))};
}

Tensor InvertibleConv1x1::inverse(const Tensor& y) const {
  const std::size_t C = channels_;
  if (y.shape().back() != C) {
    throw ShapeError(fmt::format("invconv inverse: expected {} channels, got shape {}", C,
                                 ad::shape_string(y.shape())));
  }
  // W = P^T L U, so W^-1 = U^-1 L^-1 P, evaluated in double precision.
  const auto n = static_cast<Eigen::Index>(C);
  MatrixD l = MatrixD::Identity(n, n), u = MatrixD::Zero(n, n), p = MatrixD::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto idx = static_cast<std::size_t>(i * n + j);
      if (j < i) l(i, j) = lower[idx];
      if (j > i) u(i, j) = upper[idx];
    }
    u(i, i) = sign[static_cast<std::size_t>(i)] *
              std::exp(static_cast<double>(log_diag[static_cast<std::size_t>(i)]));
    p(static_cast<Eigen::Index>(permutation[static_cast<std::size_t>(i)]), i) = 1.0;
  }
  MatrixD linv_p = l.triangularView<Eigen::UnitLower>().solve(p);
  MatrixD winv = u.triangularView<Eigen::Upper>().solve(linv_p);

  std::vector<float> winv_t(C * C);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      winv_t[static_cast<std::size_t>(j * n + i)] = static_cast<float>(winv(i, j));
  Tensor flat = ad::reshape(y, {y.size() / C, C});
  return ad::reshape(ad::matmul(flat, Tensor(ad::Shape{C, C}, std::move(winv_t))), y.shape());
}

// AffineCoupling

AffineCoupling::AffineCoupling(std::size_t channels, std::size_t hidden, Rng& rng)
    : conv2_weight(ad::Shape{3, 3, hidden, channels}, 0.0f),
      conv2_bias(ad::Shape{channels}, 0.0f),
      channels_(channels) {
  if (channels % 2 != 0 || channels == 0) {
    throw ConfigError(fmt::format("coupling: channel count {} must be even", channels));
  }
  const float stddev = 1.0f / std::sqrt(static_cast<float>(9 * channels / 2));
  conv1_weight = normal_tensor({3, 3, channels / 2, hidden}, rng, 0.5f * stddev);
  conv1_bias = Tensor(ad::Shape{hidden}, 0.0f);
}

AffineCoupling::Params AffineCoupling::condition(const Tensor& xa) const {
  Tensor h = ad::relu(ad::conv2d(xa, conv1_weight, conv1_bias));
  h = ad::conv2d(h, conv2_weight, conv2_bias);
  const std::size_t half = channels_ / 2;
  return {ad::slice_channels(h, 0, half), ad::tanh(ad::slice_channels(h, half, channels_))};
}

BlockOutput AffineCoupling::forward(const Tensor& x) const {
  if (x.shape().back() != channels_) {
    throw ShapeError(fmt::format("coupling: expected {} channels, got shape {}", channels_,
                                 ad::shape_string(x.shape())));
  }
  const std::size_t half = channels_ / 2;
  Tensor xa = ad::slice_channels(x, 0, half);
  Tensor xb = ad::slice_channels(x, half, channels_);
  auto [shift, log_scale] = condition(xa);
  Tensor yb = ad::add(ad::mul(xb, ad::exp(log_scale)), shift);
  return {ad::concat_channels(xa, yb), ad::sum_per_sample(log_scale)};
}

Tensor AffineCoupling::inverse(const Tensor& y) const {
  if (y.shape().back() != channels_) {
    throw ShapeError(fmt::format("coupling inverse: expected {} channels, got shape {}", channels_,
                                 ad::shape_string(y.shape())));
  }
  const std::size_t half = channels_ / 2;
  Tensor ya = ad::slice_channels(y, 0, half);
  Tensor yb = ad::slice_channels(y, half, channels_);
  auto [shift, log_scale] = condition(ya);
  Tensor xb = ad::mul(ad::sub(yb, shift), ad::exp(ad::neg(log_scale)));
  return ad::concat_channels(ya, xb);
}

// FlowStep

FlowStep::FlowStep(std::size_t channels, std::size_t hidden, Rng& rng)
    : actnorm(channels), invconv(channels, rng), coupling(channels, hidden, rng) {}

BlockOutput FlowStep::forward(const Tensor& x) const {
  auto a = actnorm.forward(x);
  ad::check_finite(a.y, label + " actnorm");
  auto b = invconv.forward(a.y);
  ad::check_finite(b.y, label + " invconv");
  auto c = coupling.forward(b.y);
  ad::check_finite(c.y, label + " coupling");
  return {c.y, ad::add(ad::add(a.logdet, b.logdet), c.logdet)};
}

Tensor FlowStep::inverse(const Tensor& y) const {
  Tensor c = coupling.inverse(y);
  ad::check_finite(c, label + " coupling inverse");
  Tensor b = invconv.inverse(c);
  ad::check_finite(b, label + " invconv inverse");
  Tensor a = actnorm.inverse(b);
  ad::check_finite(a, label + " actnorm inverse");
  return a;
}

void FlowStep::collect(const std::string& prefix, std::vector<ad::Parameter>& out) {
  out.push_back({prefix + ".actnorm.log_scale", actnorm.log_scale});
  out.push_back({prefix + ".actnorm.bias", actnorm.bias});
  out.push_back({prefix + ".invconv.lower", invconv.lower});
  out.push_back({prefix + ".invconv.upper", invconv.upper});
  out.push_back({prefix + ".invconv.log_diag", invconv.log_diag});
  out.push_back({prefix + ".coupling.conv1.weight", coupling.conv1_weight});
  out.push_back({prefix + ".coupling.conv1.bias", coupling.conv1_bias});
  out.push_back({prefix + ".coupling.conv2.weight", coupling.conv2_weight});
  out.push_back({prefix + ".coupling.conv2.bias", coupling.conv2_bias});
}

}  // namespace gsf::flow
