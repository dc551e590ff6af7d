#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gsf/flow.hpp"
#include "gsf/random.hpp"

namespace gsf::codec {

inline constexpr unsigned kSignBit = 31;
inline constexpr std::uint32_t kExponentMask = 0x7F800000u;
inline constexpr unsigned kMaxFractionBit = 22;

// IEEE-754 binary32 word of a finite float. Throws NumericError on NaN/Inf.
std::uint32_t float_to_bits(float x);
float bits_to_float(std::uint32_t word);

// Which bits of each latent float carry payload: optionally the sign bit,
// then fraction bits beta down to alpha (bit 22 is the most significant).
struct BitPlan {
  bool use_sign = false;
  bool use_fraction = true;
  unsigned alpha = 0;
  unsigned beta = kMaxFractionBit;

  // Accepts "S", "S,a:b", "a:b", "none", or the triple "sign,a,b" where sign
  // is 0/1 and a,b may be "-" to disable the fraction range.
  static BitPlan parse(std::string_view text);
  std::string to_string() const;  // canonical "S", "S,a:b", "a:b" or "none"

  unsigned bits_per_float() const;
  // Word bit indices in fill order.
  std::vector<unsigned> positions() const;
  void validate() const;

  bool operator==(const BitPlan&) const = default;
};

struct Capacity {
  std::size_t bits;
  double bpp;
};

Capacity plan_capacity(const BitPlan& plan, std::size_t latent_floats, std::size_t height, std::size_t width);

// Bit sequence, one bit per element.
struct Payload {
  std::vector<std::uint8_t> bits;

  std::size_t size() const { return bits.size(); }
  bool operator==(const Payload&) const = default;

  static Payload random(std::size_t length, Rng& rng);
  // Unpacks the first `bit_length` bits of `bytes`, MSB first.
  static Payload from_bytes(std::span<const std::uint8_t> bytes, std::size_t bit_length);
  // MSB-first packing; the last byte is zero-padded.
  std::vector<std::uint8_t> to_bytes() const;
};

// Latent floats as 32-bit words, flattened level by level, each row-major.
struct LatentBitImage {
  std::vector<std::uint32_t> words;
  std::vector<ad::Shape> shapes;

  static LatentBitImage from_latent(const flow::MultiScaleLatent& z);
  flow::MultiScaleLatent to_latent() const;
};

// Writes payload bits into the plan's positions, float by float. Floats
// past the end of the payload are untouched. Throws CapacityError when the
// payload does not fit.
flow::MultiScaleLatent embed(const flow::MultiScaleLatent& z, const Payload& payload, const BitPlan& plan);
Payload extract(const flow::MultiScaleLatent& z, const BitPlan& plan, std::size_t length);

// Latent file: "GSFZ", version, L, then (N,h,w,c) per level as u32, then
// little-endian float32 words.
void save_latent(const flow::MultiScaleLatent& z, std::ostream& out);
flow::MultiScaleLatent load_latent(std::istream& in);
void save_latent(const flow::MultiScaleLatent& z, const std::filesystem::path& path);
flow::MultiScaleLatent load_latent(const std::filesystem::path& path);

}  // namespace gsf::codec
