#pragma once

#include <string>
#include <string_view>

#include "gsf/codec.hpp"
#include "gsf/flow.hpp"

namespace gsf::channel {

enum class ChannelKind { QuantizedU8, Float32 };

// "u8" or "float".
ChannelKind parse_channel(std::string_view text);
std::string to_string(ChannelKind kind);

// Simulated save/load of a model-domain image. QuantizedU8 maps to pixel
// values, clips to [0,255], rounds half to even and maps back; Float32 is
// the identity.
ad::Tensor apply_channel(const ad::Tensor& image, ChannelKind kind);

// Fraction of agreeing bits. Throws ConfigError on length mismatch; two
// empty sequences agree fully.
double acc(const codec::Payload& secret, const codec::Payload& recovered);

struct RoundTrip {
  flow::MultiScaleLatent stego_latent;
  ad::Tensor stego_image;  // after the channel
  flow::MultiScaleLatent recovered_latent;
  codec::Payload extracted;
  double acc = 1.0;
};

// embed -> inverse flow -> channel -> forward flow -> extract.
RoundTrip roundtrip(const flow::FlowModel& model, const flow::MultiScaleLatent& z, const codec::Payload& payload,
                    const codec::BitPlan& plan, ChannelKind kind);

}  // namespace gsf::channel
