#include "gsf/codec.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <sstream>

#include <fmt/format.h>

#include "gsf/binary_io.hpp"
#include "gsf/error.hpp"

namespace gsf::codec {

namespace {

constexpr char kLatentMagic[4] = {'G', 'S', 'F', 'Z'};
constexpr std::uint32_t kLatentVersion = 1;

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

unsigned parse_index(std::string_view s, std::string_view whole) {
  s = trim(s);
  unsigned v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError(fmt::format("plan '{}': '{}' is not a bit index", whole, s));
  }
  return v;
}

void parse_range(std::string_view s, std::string_view whole, BitPlan& plan) {
  const auto colon = s.find(':');
  if (colon == std::string_view::npos) throw ConfigError(fmt::format("plan '{}': expected a range 'a:b'", whole));
  plan.use_fraction = true;
  plan.alpha = parse_index(s.substr(0, colon), whole);
  plan.beta = parse_index(s.substr(colon + 1), whole);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(trim(s.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

void check_latent(const flow::MultiScaleLatent& z) {
  for (const auto& level : z.levels)
    for (float v : level.data())
      if (!std::isfinite(v)) throw NumericError("codec: latent contains a non-finite value");
}

}  // namespace

std::uint32_t float_to_bits(float x) {
  if (!std::isfinite(x)) throw NumericError(fmt::format("float_to_bits: non-finite input {}", x));
  return std::bit_cast<std::uint32_t>(x);
}

float bits_to_float(std::uint32_t word) { return std::bit_cast<float>(word); }

BitPlan BitPlan::parse(std::string_view text) {
  const std::string_view s = trim(text);
  if (s.empty()) throw ConfigError("plan: empty");
  BitPlan plan;
  if (s == "none") {
    plan.use_fraction = false;
    plan.validate();
    return plan;
  }
  const auto parts = split(s, ',');
  if (parts.size() == 3) {
    if (parts[0] == "1" || parts[0] == "S" || parts[0] == "s") {
      plan.use_sign = true;
    } else if (parts[0] != "0") {
      throw ConfigError(fmt::format("plan '{}': sign field must be 0 or 1", s));
    }
    if (parts[1] == "-" && parts[2] == "-") {
      plan.use_fraction = false;
    } else {
      plan.alpha = parse_index(parts[1], s);
      plan.beta = parse_index(parts[2], s);
    }
  } else if (parts.size() == 2) {
    if (parts[0] != "S" && parts[0] != "s") throw ConfigError(fmt::format("plan '{}': expected 'S,a:b'", s));
    plan.use_sign = true;
    parse_range(parts[1], s, plan);
  } else if (parts.size() == 1 && (s == "S" || s == "s")) {
    plan.use_sign = true;
    plan.use_fraction = false;
  } else if (parts.size() == 1) {
    parse_range(s, s, plan);
  } else {
    throw ConfigError(fmt::format("plan '{}': unrecognized format", s));
  }
  plan.validate();
  return plan;
}

std::string BitPlan::to_string() const {
  if (!use_sign && !use_fraction) return "none";
  if (!use_fraction) return "S";
  const std::string range = fmt::format("{}:{}", alpha, beta);
  return use_sign ? "S," + range : range;
}

void BitPlan::validate() const {
  if (use_fraction && !(alpha <= beta && beta <= kMaxFractionBit)) {
    throw ConfigError(fmt::format("plan: need 0 <= alpha <= beta <= 22, got alpha={} beta={}", alpha, beta));
  }
}

unsigned BitPlan::bits_per_float() const { return (use_sign ? 1u : 0u) + (use_fraction ? beta - alpha + 1 : 0u); }

std::vector<unsigned> BitPlan::positions() const {
  std::vector<unsigned> out;
  if (use_sign) out.push_back(kSignBit);
  if (use_fraction)
    for (unsigned b = beta + 1; b-- > alpha;) out.push_back(b);
  return out;
}

Capacity plan_capacity(const BitPlan& plan, std::size_t latent_floats, std::size_t height, std::size_t width) {
  plan.validate();
  const std::size_t bits = latent_floats * plan.bits_per_float();
  return {bits, static_cast<double>(bits) / static_cast<double>(height * width)};
}

Payload Payload::random(std::size_t length, Rng& rng) {
  Payload p;
  p.bits.resize(length);
  std::uint64_t word = 0;
  for (std::size_t i = 0; i < length; ++i) {
    if (i % 64 == 0) word = rng();
    p.bits[i] = static_cast<std::uint8_t>((word >> (i % 64)) & 1u);
  }
  return p;
}

Payload Payload::from_bytes(std::span<const std::uint8_t> bytes, std::size_t bit_length) {
  if (bit_length > bytes.size() * 8) {
    throw FormatError(fmt::format("payload: {} bits requested but only {} bytes available", bit_length, bytes.size()));
  }
  Payload p;
  p.bits.resize(bit_length);
  for (std::size_t i = 0; i < bit_length; ++i) p.bits[i] = (bytes[i / 8] >> (7 - i % 8)) & 1u;
  return p;
}

std::vector<std::uint8_t> Payload::to_bytes() const {
  std::vector<std::uint8_t> out((bits.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) out[i / 8] |= static_cast<std::uint8_t>(0x80u >> (i % 8));
  return out;
}

LatentBitImage LatentBitImage::from_latent(const flow::MultiScaleLatent& z) {
  LatentBitImage img;
  img.words.reserve(z.element_count());
  for (const auto& level : z.levels) {
    img.shapes.push_back(level.shape());
    for (float v : level.data()) img.words.push_back(float_to_bits(v));
  }
  return img;
}

flow::MultiScaleLatent LatentBitImage::to_latent() const {
  std::size_t total = 0;
  for (const auto& s : shapes) total += ad::element_count(s);
  if (total != words.size()) {
    throw FormatError(fmt::format("latent bit image: shapes hold {} floats but {} words are present", total, words.size()));
  }
  flow::MultiScaleLatent z;
  std::size_t offset = 0;
  for (const auto& s : shapes) {
    ad::Tensor t(s);
    for (float& v : t.data()) v = bits_to_float(words[offset++]);
    z.levels.push_back(std::move(t));
  }
  return z;
}

flow::MultiScaleLatent embed(const flow::MultiScaleLatent& z, const Payload& payload, const BitPlan& plan) {
  plan.validate();
  check_latent(z);
  const std::size_t floats = z.element_count();
  const std::size_t capacity = floats * plan.bits_per_float();
  if (payload.size() > capacity) {
    throw CapacityError(fmt::format("payload of {} bits exceeds capacity of {} bits ({} floats x {} bits, plan {})",
                                    payload.size(), capacity, floats, plan.bits_per_float(), plan.to_string()));
  }
  auto img = LatentBitImage::from_latent(z);
  const auto pos = plan.positions();
  std::size_t k = 0;
  for (std::size_t f = 0; f < img.words.size() && k < payload.size(); ++f) {
    std::uint32_t w = img.words[f];
    for (unsigned b : pos) {
      if (k == payload.size()) break;
      w = (w & ~(1u << b)) | (static_cast<std::uint32_t>(payload.bits[k++] & 1u) << b);
    }
    img.words[f] = w;
  }
  auto out = img.to_latent();
  out.temperature = z.temperature;
  return out;
}

Payload extract(const flow::MultiScaleLatent& z, const BitPlan& plan, std::size_t length) {
  plan.validate();
  const std::size_t floats = z.element_count();
  const std::size_t capacity = floats * plan.bits_per_float();
  if (length > capacity) {
    throw CapacityError(
        fmt::format("extract: {} bits requested but plan {} holds {} bits", length, plan.to_string(), capacity));
  }
  Payload p;
  p.bits.reserve(length);
  const auto pos = plan.positions();
  for (const auto& level : z.levels) {
    for (float v : level.data()) {
      if (p.size() == length) return p;
      const std::uint32_t w = std::bit_cast<std::uint32_t>(v);
      for (unsigned b : pos) {
        if (p.size() == length) break;
        p.bits.push_back(static_cast<std::uint8_t>((w >> b) & 1u));
      }
    }
  }
  return p;
}

void save_latent(const flow::MultiScaleLatent& z, std::ostream& out) {
  out.write(kLatentMagic, 4);
  io::write_u32(out, kLatentVersion);
  io::write_u32(out, static_cast<std::uint32_t>(z.levels.size()));
  for (const auto& level : z.levels) {
    if (level.rank() != 4) throw ShapeError("save_latent: levels must be (N,h,w,c)");
    for (std::size_t d : level.shape()) io::write_u32(out, static_cast<std::uint32_t>(d));
  }
  for (const auto& level : z.levels) io::write_f32s(out, level.data());
}

flow::MultiScaleLatent load_latent(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kLatentMagic)) throw FormatError("latent file: bad magic");
  const auto version = io::read_u32(in, "latent version");
  if (version != kLatentVersion) throw FormatError(fmt::format("latent file: unsupported version {}", version));
  const auto levels = io::read_u32(in, "latent level count");
  if (levels == 0 || levels > 16) throw FormatError(fmt::format("latent file: implausible level count {}", levels));
  std::vector<ad::Shape> shapes(levels);
  for (auto& s : shapes) {
    for (int d = 0; d < 4; ++d) {
      const auto v = io::read_u32(in, "latent level shape");
      if (v == 0 || v > (1u << 20)) throw FormatError(fmt::format("latent file: implausible dimension {}", v));
      s.push_back(v);
    }
  }
  flow::MultiScaleLatent z;
  for (const auto& s : shapes) {
    ad::Tensor t(s);
    io::read_f32s(in, t.data(), fmt::format("latent data for level of shape {}", ad::shape_string(s)));
    z.levels.push_back(std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("latent file: data is longer than the header's level shapes");
  }
  return z;
}

void save_latent(const flow::MultiScaleLatent& z, const std::filesystem::path& path) {
  std::ostringstream ss(std::ios::binary);
  save_latent(z, ss);
  io::write_file_atomic(path, ss.str());
}

flow::MultiScaleLatent load_latent(const std::filesystem::path& path) {
  std::istringstream ss(io::read_file(path), std::ios::binary);
  return load_latent(ss);
}

}  // namespace gsf::codec
