#include "gsf/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "gsf/error.hpp"
#include "gsf/image_io.hpp"
#include "gsf/random.hpp"

namespace gsf::data {

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < images.size(); ++i)
    if (splits[i] == split) out.push_back(i);
  return out;
}

ad::Tensor Dataset::batch(std::span<const std::size_t> which) const {
  const std::size_t per = height * width * 3;
  ad::Tensor out({which.size(), height, width, 3});
  auto dst = out.data();
  for (std::size_t k = 0; k < which.size(); ++k) {
    const auto& img = images.at(which[k]);
    for (std::size_t i = 0; i < per; ++i) dst[k * per + i] = io::to_model_domain(img[i]);
  }
  return out;
}

ad::Tensor Dataset::batch(Split split) const {
  const auto idx = indices(split);
  return batch(idx);
}

void Dataset::validate() const {
  if (images.empty()) throw ConfigError(fmt::format("dataset '{}' is empty", source));
  if (splits.size() != images.size()) throw ConfigError("dataset: split tags do not match image count");
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& img = images[i];
    if (img.shape() != ad::Shape{height, width, 3}) {
      throw ConfigError(fmt::format("dataset: image {} has shape {}, expected ({},{},3)", i,
                                    ad::shape_string(img.shape()), height, width));
    }
    for (float v : img.data()) {
      if (!(v >= 0.0f && v <= 255.0f)) {
        throw ConfigError(fmt::format("dataset: image {} has pixel {} outside [0,255]", i, v));
      }
    }
  }
}

ad::Tensor take_rows(const ad::Tensor& batch, std::size_t begin, std::size_t end) {
  if (batch.rank() == 0 || begin > end || end > batch.dim(0)) {
    throw ShapeError(fmt::format("take_rows: [{}, {}) out of range for {}", begin, end, ad::shape_string(batch.shape())));
  }
  ad::Shape shape = batch.shape();
  const std::size_t per = batch.size() / std::max<std::size_t>(shape[0], 1);
  shape[0] = end - begin;
  std::vector<float> values(batch.data().begin() + begin * per, batch.data().begin() + end * per);
  return ad::Tensor(std::move(shape), std::move(values));
}

ad::Tensor gather_rows(const ad::Tensor& batch, std::span<const std::size_t> which) {
  if (batch.rank() == 0) throw ShapeError("gather_rows: scalar input");
  ad::Shape shape = batch.shape();
  const std::size_t per = batch.size() / std::max<std::size_t>(shape[0], 1);
  shape[0] = which.size();
  std::vector<float> values;
  values.reserve(which.size() * per);
  for (std::size_t r : which) {
    if (r >= batch.dim(0)) throw ShapeError(fmt::format("gather_rows: row {} out of range", r));
    values.insert(values.end(), batch.data().begin() + r * per, batch.data().begin() + (r + 1) * per);
  }
  return ad::Tensor(std::move(shape), std::move(values));
}

void assign_splits(Dataset& dataset, std::size_t period) {
  dataset.splits.assign(dataset.images.size(), Split::Train);
  if (period == 0) return;
  for (std::size_t i = 0; i < dataset.images.size(); ++i)
    if (i % period == period - 1) dataset.splits[i] = Split::Eval;
}

Dataset synth_dataset(std::uint64_t seed, std::size_t count, std::size_t height, std::size_t width) {
  if (count == 0) throw ConfigError("synth_dataset: count must be >= 1");
  if (height == 0 || width == 0) throw ConfigError("synth_dataset: dims must be positive");
  Dataset ds;
  ds.height = height;
  ds.width = width;
  ds.source = fmt::format("synthetic(seed={},n={},{}x{})", seed, count, height, width);
  const double h = static_cast<double>(height), w = static_cast<double>(width);
  const double extent = std::max(h, w);

  for (std::size_t n = 0; n < count; ++n) {
    Rng rng(derive_seed(seed, n));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto color = [&] {
      return std::array<double, 3>{255.0 * u01(rng), 255.0 * u01(rng), 255.0 * u01(rng)};
    };
    const auto c0 = color(), c1 = color();
    const double angle = 2.0 * std::numbers::pi * u01(rng);
    const double dx = std::cos(angle), dy = std::sin(angle);
    struct Blob {
      double cy, cx, sigma;
      std::array<double, 3> rgb;
    };
    std::vector<Blob> blobs(2 + static_cast<std::size_t>(u01(rng) * 3.0));
    for (auto& b : blobs) {
      b.cy = h * u01(rng);
      b.cx = w * u01(rng);
      b.sigma = extent * (0.12 + 0.2 * u01(rng));
      b.rgb = color();
    }

    ad::Tensor img({height, width, 3});
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double t = 0.5 + ((x + 0.5 - w / 2) * dx + (y + 0.5 - h / 2) * dy) / extent;
        std::array<double, 3> px;
        for (int c = 0; c < 3; ++c) px[c] = c0[c] + (c1[c] - c0[c]) * std::clamp(t, 0.0, 1.0);
        for (const auto& b : blobs) {
          const double ry = y + 0.5 - b.cy, rx = x + 0.5 - b.cx;
          const double a = std::exp(-(ry * ry + rx * rx) / (2.0 * b.sigma * b.sigma));
          for (int c = 0; c < 3; ++c) px[c] = px[c] * (1.0 - a) + b.rgb[c] * a;
        }
        for (std::size_t c = 0; c < 3; ++c) {
          img.data()[(y * width + x) * 3 + c] =
              static_cast<float>(std::clamp(std::round(px[c]), 0.0, 255.0));
        }
      }
    }
    ds.images.push_back(std::move(img));
  }
  assign_splits(ds);
  return ds;
}

Dataset ingest_images(const std::filesystem::path& dir, std::size_t expected_height,
                      std::size_t expected_width) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw ConfigError(fmt::format("dataset path {} is not a directory", dir.string()));
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ppm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
    return a.filename().string() < b.filename().string();
  });
  if (files.empty()) throw ConfigError(fmt::format("dataset directory {} contains no .ppm images", dir.string()));

  Dataset ds;
  ds.source = dir.string();
  ds.height = expected_height;
  ds.width = expected_width;
  std::vector<std::string> unreadable;
  for (const auto& f : files) {
    io::RasterU8 raster;
    try {
      raster = io::read_ppm(f);
    } catch (const FormatError& e) {
      unreadable.push_back(e.what());
      continue;
    }
    if (ds.height == 0) {
      ds.height = raster.height;
      ds.width = raster.width;
    }
    if (raster.height != ds.height || raster.width != ds.width) {
      throw ConfigError(fmt::format("dataset: {} is {}x{}, expected {}x{}", f.filename().string(),
                                    raster.height, raster.width, ds.height, ds.width));
    }
    ad::Tensor img({raster.height, raster.width, 3});
    for (std::size_t i = 0; i < raster.pixels.size(); ++i) img.data()[i] = raster.pixels[i];
    ds.images.push_back(std::move(img));
  }
  if (!unreadable.empty()) {
    std::string msg = fmt::format("dataset: {} unreadable file(s):", unreadable.size());
    for (const auto& u : unreadable) msg += "\n  " + u;
    throw FormatError(msg);
  }
  assign_splits(ds);
  ds.validate();
  return ds;
}

}  // namespace gsf::data
