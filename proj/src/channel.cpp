#include "gsf/channel.hpp"

#include <algorithm>
#include <cfenv>
#include <cmath>

#include <fmt/format.h>

#include "gsf/error.hpp"
#include "gsf/image_io.hpp"

namespace gsf::channel {

ChannelKind parse_channel(std::string_view text) {
  if (text == "u8") return ChannelKind::QuantizedU8;
  if (text == "float") return ChannelKind::Float32;
  throw ConfigError(fmt::format("channel '{}': expected 'u8' or 'float'", text));
}

std::string to_string(ChannelKind kind) { return kind == ChannelKind::QuantizedU8 ? "u8" : "float"; }

ad::Tensor apply_channel(const ad::Tensor& image, ChannelKind kind) {
  ad::Tensor out = image.clone();
  if (kind == ChannelKind::Float32) return out;
  const int saved = std::fegetround();
  std::fesetround(FE_TONEAREST);
  for (float& v : out.data()) {
    const float p = std::clamp(io::to_pixel_domain(v), 0.0f, 255.0f);
    v = io::to_model_domain(std::nearbyint(p));
  }
  std::fesetround(saved);
  return out;
}

double acc(const codec::Payload& secret, const codec::Payload& recovered) {
  if (secret.size() != recovered.size()) {
    throw ConfigError(fmt::format("acc: length mismatch ({} vs {} bits)", secret.size(), recovered.size()));
  }
  if (secret.size() == 0) return 1.0;
  std::size_t same = 0;
  for (std::size_t i = 0; i < secret.size(); ++i) same += (secret.bits[i] & 1u) == (recovered.bits[i] & 1u);
  return static_cast<double>(same) / static_cast<double>(secret.size());
}

RoundTrip roundtrip(const flow::FlowModel& model, const flow::MultiScaleLatent& z, const codec::Payload& payload,
                    const codec::BitPlan& plan, ChannelKind kind) {
  ad::NoGradScope no_grad;
  RoundTrip rt;
  rt.stego_latent = codec::embed(z, payload, plan);
  rt.stego_image = apply_channel(model.inverse(rt.stego_latent), kind);
  rt.recovered_latent = model.forward(rt.stego_image).latent;
  rt.extracted = codec::extract(rt.recovered_latent, plan, payload.size());
  rt.acc = acc(payload, rt.extracted);
  return rt;
}

}  // namespace gsf::channel
