#include "gsf/adam.hpp"

#include <cmath>

#include <fmt/format.h>

#include "gsf/error.hpp"

namespace gsf::ad {

AdamState::AdamState(std::span<const Parameter> params, AdamOptions opts) : options(opts) {
  for (const auto& p : params) {
    first_moment.emplace_back(p.tensor.size(), 0.0f);
    second_moment.emplace_back(p.tensor.size(), 0.0f);
  }
}

void adam_step(std::span<Parameter> params, AdamState& state) {
  if (state.first_moment.size() != params.size()) {
    throw ShapeError(fmt::format("adam: state holds {} parameters, got {}",
                                 state.first_moment.size(), params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& p = params[k];
    if (state.first_moment[k].size() != p.tensor.size()) {
      throw ShapeError(fmt::format("adam: moment size mismatch for parameter '{}'", p.name));
    }
    for (float g : p.tensor.grad()) {
      if (!std::isfinite(g)) {
        throw NumericError(fmt::format("adam: non-finite gradient in parameter '{}'", p.name));
      }
    }
  }

  ++state.step;
  const auto& o = state.options;
  const double t = static_cast<double>(state.step);
  const float c1 = static_cast<float>(1.0 - std::pow(static_cast<double>(o.beta1), t));
  const float c2 = static_cast<float>(1.0 - std::pow(static_cast<double>(o.beta2), t));

  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& tensor = params[k].tensor;
    auto grad = tensor.grad();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    auto w = tensor.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const float g = grad.empty() ? 0.0f : grad[i];
      m[i] = o.beta1 * m[i] + (1.0f - o.beta1) * g;
      v[i] = o.beta2 * v[i] + (1.0f - o.beta2) * g * g;
      const float mhat = m[i] / c1;
      const float vhat = v[i] / c2;
      w[i] -= o.learning_rate * mhat / (std::sqrt(vhat) + o.epsilon);
    }
  }
}

double clip_grad_norm(std::span<Parameter> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (float g : p.tensor.grad()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const float scale = static_cast<float>(max_norm / norm);
    for (auto& p : params)
      for (float& g : p.tensor.mutable_grad()) g *= scale;
  }
  return norm;
}

void zero_grads(std::span<Parameter> params) {
  for (auto& p : params) p.tensor.zero_grad();
}

}  // namespace gsf::ad
