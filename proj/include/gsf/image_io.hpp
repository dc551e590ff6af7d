#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "gsf/tensor.hpp"

namespace gsf::io {

// Interleaved HWC raster.
struct RasterU8 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // H*W*3
};

struct RasterF32 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;  // H*W*3
};

// Binary PPM (P6, maxval 255).
RasterU8 read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const RasterU8& image);

// Portable float map ("PF", little-endian, rows stored bottom-up).
// Values are stored verbatim, so a write/read round trip is bit-exact.
RasterF32 read_pfm(const std::filesystem::path& path);
void write_pfm(const std::filesystem::path& path, const RasterF32& image);

// Pixel value p in [0,255] <-> model domain p/255 - 0.5.
float to_model_domain(float pixel);
float to_pixel_domain(float model_value);

// (H,W,3) pixel tensor <-> (1,H,W,3) model-domain tensor.
ad::Tensor pixels_to_model(const ad::Tensor& pixels);

}  // namespace gsf::io
