#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gsf/channel.hpp"
#include "gsf/codec.hpp"
#include "gsf/latent_optimizer.hpp"
#include "gsf/steganalysis.hpp"

namespace gsf::exp {

enum class LatentSource { Random, Optimized };

LatentSource parse_source(std::string_view text);  // "random" or "optimized"
std::string to_string(LatentSource source);

// Reference pool and scorer for optimized latents.
struct OptimizedSource {
  opt::QualityAssessor assessor;
  ad::Tensor references;  // (M,H,W,3) model domain, M >= n
  opt::OptConfig config;
};

// Per-(source, trial) latents, computed once and shared across plans and
// channels so that comparisons between them are paired.
class LatentBank {
 public:
  LatentBank(const flow::FlowModel& model, std::uint64_t seed, float delta,
             const OptimizedSource* optimized = nullptr);

  const flow::MultiScaleLatent& get(LatentSource source, std::size_t trial);

 private:
  const flow::FlowModel& model_;
  std::uint64_t seed_;
  float delta_;
  const OptimizedSource* optimized_;
  std::map<std::pair<LatentSource, std::size_t>, flow::MultiScaleLatent> cache_;
};

struct TableConfig {
  std::vector<codec::BitPlan> plans;
  std::vector<channel::ChannelKind> channels;
  std::vector<LatentSource> sources;
  std::size_t trials = 32;
  std::uint64_t seed = 0;
  float delta = 0.7f;  // sampling temperature of random latents

  void validate() const;
};

// Standard sweep: sign-only and fraction ranges up to 72 bpp, plus the 0 bpp baseline.
std::vector<codec::BitPlan> default_plans();

struct ExperimentRow {
  std::string plan;
  double bpp = 0.0;
  std::optional<double> acc_mean;  // empty for the 0 bpp baseline
  std::optional<double> acc_std;
  std::string channel;
  std::size_t trials = 0;
  std::string source;
  std::vector<double> acc;  // per trial
};

// One row per (plan, channel, source), in that nesting order. Each trial
// embeds a full-capacity random payload. Throws ConfigError if an optimized
// source is requested without `optimized`.
std::vector<ExperimentRow> run_table(const flow::FlowModel& model, const TableConfig& config,
                                     const OptimizedSource* optimized = nullptr);

// Mean agreement per word bit position (index 0..31) of the recovered
// latents, using a full-capacity payload at plan 0:22 plus sign.
std::vector<double> bit_plane_agreement(const flow::FlowModel& model, channel::ChannelKind kind, std::size_t trials,
                                        std::uint64_t seed, float delta);

struct SteganalysisConfig {
  codec::BitPlan plan;
  channel::ChannelKind channel = channel::ChannelKind::QuantizedU8;
  std::size_t count = 2000;  // images per class; half train, half held out
  std::uint64_t seed = 0;
  float delta = 0.7f;
};

// Cover: plain generated images. Stego: generated images whose latents carry
// a full-capacity random payload. Both pass through the channel.
stega::PeReport run_steganalysis(const flow::FlowModel& model, const SteganalysisConfig& config);

std::string table_csv(const std::vector<ExperimentRow>& rows);
std::string roc_csv(const stega::PeReport& report);
std::string pe_csv(const stega::PeReport& report);

}  // namespace gsf::exp
