#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gsf/tensor.hpp"

namespace gsf::data {

enum class Split { Train, Eval };

// Images are (H,W,3) tensors of pixel values in [0,255].
struct Dataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<ad::Tensor> images;
  std::vector<Split> splits;
  std::string source;

  std::size_t size() const { return images.size(); }
  std::vector<std::size_t> indices(Split split) const;

  // Stacks the selected images into a model-domain (N,H,W,3) batch.
  ad::Tensor batch(std::span<const std::size_t> which) const;
  ad::Tensor batch(Split split) const;

  // Throws ConfigError on dimension or range violations.
  void validate() const;
};

// Copies of rows [begin, end) / the listed rows of an (N, ...) tensor.
ad::Tensor take_rows(const ad::Tensor& batch, std::size_t begin, std::size_t end);
ad::Tensor gather_rows(const ad::Tensor& batch, std::span<const std::size_t> which);

// Tags every `period`-th image (index % period == period - 1) as Eval.
void assign_splits(Dataset& dataset, std::size_t period = 8);

// Smooth colored fields: a linear gradient background with a few soft
// Gaussian blobs, quantized to integers. Image i depends only on (seed, i).
Dataset synth_dataset(std::uint64_t seed, std::size_t count, std::size_t height, std::size_t width);

// Loads every *.ppm file in `dir`, ordered by filename. With nonzero
// expected dims, images must match them.
Dataset ingest_images(const std::filesystem::path& dir, std::size_t expected_height = 0,
                      std::size_t expected_width = 0);

}  // namespace gsf::data
