#include "gsf/image_io.hpp"

#include <bit>
#include <cctype>
#include <fstream>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "gsf/binary_io.hpp"
#include "gsf/error.hpp"

namespace gsf::io {

namespace {

// Reads the next whitespace-separated header token, skipping '#' comments.
std::string header_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

std::size_t header_size(std::istream& in, const std::filesystem::path& path, const char* what) {
  const std::string tok = header_token(in);
  try {
    std::size_t pos = 0;
    const long v = std::stol(tok, &pos);
    if (pos != tok.size() || v <= 0) throw std::invalid_argument(tok);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw FormatError(fmt::format("{}: invalid {} '{}'", path.string(), what, tok));
  }
}

}  // namespace

RasterU8 read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("{}: cannot open", path.string()));
  if (header_token(in) != "P6") throw FormatError(fmt::format("{}: not a binary PPM (P6)", path.string()));
  RasterU8 img;
  img.width = header_size(in, path, "width");
  img.height = header_size(in, path, "height");
  if (header_size(in, path, "maxval") != 255) {
    throw FormatError(fmt::format("{}: only maxval 255 is supported", path.string()));
  }
  img.pixels.resize(img.width * img.height * 3);
  if (!in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()))) {
    throw FormatError(fmt::format("{}: truncated pixel data", path.string()));
  }
  return img;
}

void write_ppm(const std::filesystem::path& path, const RasterU8& image) {
  std::string bytes = fmt::format("P6\n{} {}\n255\n", image.width, image.height);
  bytes.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
  write_file_atomic(path, bytes);
}

RasterF32 read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("{}: cannot open", path.string()));
  if (header_token(in) != "PF") throw FormatError(fmt::format("{}: not a color PFM", path.string()));
  RasterF32 img;
  img.width = header_size(in, path, "width");
  img.height = header_size(in, path, "height");
  const std::string scale = header_token(in);
  if (scale.empty() || scale[0] != '-') {
    throw FormatError(fmt::format("{}: only little-endian PFM is supported", path.string()));
  }
  const std::size_t row = img.width * 3;
  img.pixels.resize(img.height * row);
  for (std::size_t r = 0; r < img.height; ++r) {
    const std::size_t y = img.height - 1 - r;
    read_f32s(in, std::span<float>(img.pixels.data() + y * row, row), path.string());
  }
  return img;
}

void write_pfm(const std::filesystem::path& path, const RasterF32& image) {
  std::ostringstream out(std::ios::binary);
  out << fmt::format("PF\n{} {}\n-1.0\n", image.width, image.height);
  const std::size_t row = image.width * 3;
  for (std::size_t r = 0; r < image.height; ++r) {
    const std::size_t y = image.height - 1 - r;
    write_f32s(out, std::span<const float>(image.pixels.data() + y * row, row));
  }
  write_file_atomic(path, out.str());
}

float to_model_domain(float pixel) { return pixel / 255.0f - 0.5f; }
float to_pixel_domain(float model_value) { return (model_value + 0.5f) * 255.0f; }

ad::Tensor pixels_to_model(const ad::Tensor& pixels) {
  if (pixels.rank() != 3 || pixels.dim(2) != 3) {
    throw ShapeError(fmt::format("pixels_to_model: expected (H,W,3), got {}",
                                 ad::shape_string(pixels.shape())));
  }
  ad::Tensor out({1, pixels.dim(0), pixels.dim(1), 3});
  for (std::size_t i = 0; i < pixels.size(); ++i) out.data()[i] = to_model_domain(pixels[i]);
  return out;
}

}  // namespace gsf::io
