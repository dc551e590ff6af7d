#pragma once

// Finite-difference oracle shared by the test suites. It only calls the
// forward path of the function under test; gradients are formed from
// central differences accumulated in double precision.

#include <cmath>
#include <functional>
#include <vector>

#include "gsf/ops.hpp"
#include "gsf/random.hpp"
#include "gsf/tensor.hpp"

namespace gsf::testing {

using ad::Tensor;

struct GradcheckResult {
  double relative_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  std::vector<double> analytic;
  std::vector<double> numeric;
};

inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
  return std::sqrt(diff) / denom;
}

// Checks d/d(inputs) of sum(f(inputs) * w) for fixed random weights w.
inline GradcheckResult gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                 std::vector<Tensor> inputs, double h = 1e-3,
                                 std::uint64_t seed = 99) {
  Rng rng(seed);
  Tensor probe;
  {
    ad::NoGradScope off;
    probe = f(inputs);
  }
  Tensor weights = uniform_tensor(probe.shape(), rng, -1.0f, 1.0f);

  GradcheckResult r;
  {
    for (auto& t : inputs) {
      t.zero_grad();
      t.set_requires_grad(true);
    }
    ad::Tape tape;
    ad::GradScope scope(tape);
    Tensor loss = ad::sum(ad::mul(f(inputs), weights));
    tape.backward(loss);
    for (auto& t : inputs) {
      for (std::size_t i = 0; i < t.size(); ++i) r.analytic.push_back(t.has_grad() ? t.grad()[i] : 0.0);
      t.set_requires_grad(false);
      t.zero_grad();
    }
  }

  ad::NoGradScope off;
  for (auto& t : inputs) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const float original = t.data()[i];
      t.data()[i] = static_cast<float>(original + h);
      const double hi_w = static_cast<double>(t.data()[i]);
      Tensor plus = f(inputs);
      t.data()[i] = static_cast<float>(original - h);
      const double lo_w = static_cast<double>(t.data()[i]);
      Tensor minus = f(inputs);
      t.data()[i] = original;
      double acc = 0.0;
      for (std::size_t k = 0; k < plus.size(); ++k) {
        acc += (static_cast<double>(plus[k]) - static_cast<double>(minus[k])) * weights[k];
      }
      r.numeric.push_back(acc / (hi_w - lo_w));
    }
  }
  r.relative_error = relative_error(r.analytic, r.numeric);
  return r;
}

}  // namespace gsf::testing
