#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "gsf/channel.hpp"
#include "gsf/codec.hpp"
#include "gsf/experiment.hpp"
#include "gsf/flow.hpp"
#include "gsf/latent_optimizer.hpp"
#include "gsf/trainer.hpp"

namespace gsf::cli {

// Everything a command needs, loadable from a flat "key = value" file.
struct RunConfig {
  // model
  std::size_t height = 16, width = 16, levels = 3, steps = 4, hidden = 64;
  // data and training
  std::string dataset;  // directory of .ppm images, or "synthetic"
  std::size_t synth_count = 512;
  std::size_t epochs = 30, batch_size = 32, checkpoint_interval = 0;
  float learning_rate = 1e-3f;
  bool dequantize = true;
  double grad_clip = 50.0;
  // assessor and latent optimization
  std::size_t assessor_epochs = 30, generated_count = 512;
  float assessor_lr = 3e-3f;
  float epsilon = 1e-3f, thresh = 0.1f, delta = 0.7f;
  std::size_t n = 3, max_step = 100;
  // embedding and evaluation
  std::string plan = "S,0:22";
  std::string channel = "u8";
  std::string plans = "default";  // ';'-separated list, or "default"
  std::string channels = "float,u8";
  std::string sources = "random";
  std::size_t trials = 32, stego_count = 2000;
  std::size_t payload_bits = 0;  // embed only this many leading bits of the payload file; 0 = all
  std::uint64_t seed = 0;
  // paths
  std::string out = "out";
  std::string checkpoint, assessor, latent, payload, image, meta, reference;

  // Applies one "key = value" assignment. Throws ConfigError on unknown
  // keys or unparsable values.
  void set(std::string_view key, std::string_view value);
  // Parses a whole file body; '#' starts a comment.
  void merge_text(std::string_view text, std::string_view origin = "config");
  void merge_file(const std::filesystem::path& path);

  // Checks every field against module constraints.
  void validate() const;
  // Canonical text, one "key = value" line per field in declaration order.
  std::string to_text() const;

  flow::FlowConfig flow_config() const;
  train::TrainConfig train_config() const;
  opt::OptConfig opt_config() const;
  opt::AssessorTrainConfig assessor_config() const;
  codec::BitPlan bit_plan() const;
  channel::ChannelKind channel_kind() const;
  exp::TableConfig table_config() const;
};

}  // namespace gsf::cli
