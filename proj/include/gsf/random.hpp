#pragma once

#include <cstdint>
#include <random>

#include "gsf/tensor.hpp"

namespace gsf {

using Rng = std::mt19937_64;

inline ad::Tensor normal_tensor(const ad::Shape& shape, Rng& rng, float stddev = 1.0f) {
  std::normal_distribution<float> dist(0.0f, stddev);
  ad::Tensor t(shape);
  for (float& v : t.data()) v = dist(rng);
  return t;
}

inline ad::Tensor uniform_tensor(const ad::Shape& shape, Rng& rng, float lo, float hi) {
  std::uniform_real_distribution<float> dist(lo, hi);
  ad::Tensor t(shape);
  for (float& v : t.data()) v = dist(rng);
  return t;
}

// Derives an independent stream seed from a base seed and a stream index.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

}  // namespace gsf
