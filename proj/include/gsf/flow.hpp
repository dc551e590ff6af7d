#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "gsf/adam.hpp"
#include "gsf/flow_layers.hpp"
#include "gsf/random.hpp"
#include "gsf/tensor.hpp"

namespace gsf::flow {

inline constexpr std::size_t kImageChannels = 3;

struct FlowConfig {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t levels = 3;   // L
  std::size_t steps = 4;    // K, flow steps per level
  std::size_t hidden = 64;  // coupling subnetwork width

  // Throws ConfigError unless H and W are divisible by 2^L and all sizes
  // are positive.
  void validate() const;
  std::size_t pixel_dims() const { return height * width * kImageChannels; }
};

struct LatentShape {
  std::size_t height;
  std::size_t width;
  std::size_t channels;
  std::size_t size() const { return height * width * channels; }
  bool operator==(const LatentShape&) const = default;
};

// Latents Z_1..Z_L, each (N,h,w,c). Level i < L-1 has shape
// (H/2^(i+1), W/2^(i+1), 6*2^i); the last has (H/2^L, W/2^L, 12*2^(L-1)).
struct MultiScaleLatent {
  std::vector<Tensor> levels;
  float temperature = 0.7f;

  std::size_t batch() const { return levels.empty() ? 0 : levels.front().dim(0); }
  std::size_t element_count() const;
  MultiScaleLatent clone() const;
};

struct FlowOutput {
  MultiScaleLatent latent;
  Tensor logdet;                    // (N), total
  std::vector<Tensor> step_logdets;  // (N) per flow step, in forward order
};

struct Sample {
  MultiScaleLatent latent;
  Tensor image;
};

// Multi-scale Glow: squeeze -> K flow steps -> split, repeated L times.
// Images are (N,H,W,3) in the model domain pixel/255 - 0.5.
class FlowModel {
 public:
  FlowModel(FlowConfig config, std::uint64_t seed);

  const FlowConfig& config() const { return config_; }
  std::vector<LatentShape> latent_shapes() const;

  FlowOutput forward(const Tensor& images) const;
  Tensor inverse(const MultiScaleLatent& latent) const;

  // Per-sample log density in the model domain, shape (N).
  Tensor log_likelihood(const Tensor& images) const;

  // Draws each latent i.i.d. N(0, temperature^2).
  Sample sample(float temperature, Rng& rng, std::size_t count = 1) const;
  MultiScaleLatent zero_latent(std::size_t count = 1) const;

  // Data-dependent actnorm initialization from a batch.
  void initialize_actnorm(const Tensor& images);
  bool actnorm_initialized() const;

  std::vector<ad::Parameter> parameters();

  std::vector<std::vector<FlowStep>>& levels() { return levels_; }
  const std::vector<std::vector<FlowStep>>& levels() const { return levels_; }

 private:
  void check_images(const Tensor& images) const;

  FlowConfig config_;
  std::vector<std::vector<FlowStep>> levels_;
};

// Standard-normal log density summed per sample, shape (N).
Tensor standard_normal_log_density(const MultiScaleLatent& latent);

// Discrete bits-per-dimension for a model-domain log density of an image
// with `dims` values quantized to 256 levels.
double bits_per_dim(double log_likelihood, std::size_t dims);

// Checkpoint: "GSFW", version, H, W, L, K, hidden, actnorm flag, then
// little-endian float32 blocks per step in declared order.
void save_checkpoint(const FlowModel& model, std::ostream& out);
FlowModel load_checkpoint(std::istream& in);
void save_checkpoint(const FlowModel& model, const std::filesystem::path& path);
FlowModel load_checkpoint(const std::filesystem::path& path);

}  // namespace gsf::flow
