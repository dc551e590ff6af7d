#include "gsf/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "gsf/dataset.hpp"
#include "gsf/error.hpp"

namespace gsf::exp {

namespace {

constexpr std::size_t kChunk = 128;

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

// Decodes `count` latents drawn at temperature delta, embeds a random
// full-capacity payload (if the plan has bits), and passes the images
// through the channel.
ad::Tensor generate(const flow::FlowModel& model, std::size_t count, const codec::BitPlan& plan,
                    channel::ChannelKind kind, std::uint64_t seed, float delta) {
  ad::NoGradScope no_grad;
  const auto& c = model.config();
  ad::Tensor out({count, c.height, c.width, 3});
  const std::size_t per = c.pixel_dims();
  for (std::size_t b = 0; b < count; b += kChunk) {
    const std::size_t n = std::min(kChunk, count - b);
    Rng rng(derive_seed(seed, b));
    flow::MultiScaleLatent z;
    z.temperature = delta;
    for (const auto& s : model.latent_shapes()) z.levels.push_back(normal_tensor({n, s.height, s.width, s.channels}, rng, delta));
    const std::size_t capacity = z.element_count() * plan.bits_per_float();
    if (capacity > 0) z = codec::embed(z, codec::Payload::random(capacity, rng), plan);
    const ad::Tensor img = channel::apply_channel(model.inverse(z), kind);
    std::copy(img.data().begin(), img.data().end(), out.data().begin() + b * per);
  }
  return out;
}

}  // namespace

LatentSource parse_source(std::string_view text) {
  if (text == "random") return LatentSource::Random;
  if (text == "optimized") return LatentSource::Optimized;
  throw ConfigError(fmt::format("latent source '{}': expected 'random' or 'optimized'", text));
}

std::string to_string(LatentSource source) { return source == LatentSource::Random ? "random" : "optimized"; }

LatentBank::LatentBank(const flow::FlowModel& model, std::uint64_t seed, float delta, const OptimizedSource* optimized)
    : model_(model), seed_(seed), delta_(delta), optimized_(optimized) {}

const flow::MultiScaleLatent& LatentBank::get(LatentSource source, std::size_t trial) {
  const auto key = std::make_pair(source, trial);
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  flow::MultiScaleLatent z;
  if (source == LatentSource::Random) {
    Rng rng(derive_seed(seed_, 2 * trial));
    z.temperature = delta_;
    for (const auto& s : model_.latent_shapes()) z.levels.push_back(normal_tensor({1, s.height, s.width, s.channels}, rng, delta_));
  } else {
    if (!optimized_) throw ConfigError("optimized latent source requested without an assessor and references");
    const auto& refs = optimized_->references;
    const std::size_t n = optimized_->config.n;
    if (refs.rank() != 4 || refs.dim(0) < n) {
      throw ConfigError(fmt::format("optimized source: need at least n={} reference images", n));
    }
    Rng rng(derive_seed(seed_, 2 * trial + 1));
    std::vector<std::size_t> pool(refs.dim(0));
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(n);
    z = opt::optimize_latent(model_, optimized_->assessor, data::gather_rows(refs, pool), optimized_->config).latent;
  }
  return cache_.emplace(key, std::move(z)).first->second;
}

void TableConfig::validate() const {
  if (plans.empty() || channels.empty() || sources.empty()) throw ConfigError("table: plans, channels and sources must be non-empty");
  if (trials == 0) throw ConfigError("table: trials must be >= 1");
  if (!(delta > 0.0f)) throw ConfigError("table: delta must be > 0");
  for (const auto& p : plans) p.validate();
}

std::vector<codec::BitPlan> default_plans() {
  std::vector<codec::BitPlan> out;
  for (const char* p : {"none", "S", "S,22:22", "S,21:22", "S,12:22", "S,0:22", "22:22", "14:22", "7:22", "0:22"}) {
    out.push_back(codec::BitPlan::parse(p));
  }
  return out;
}

std::vector<ExperimentRow> run_table(const flow::FlowModel& model, const TableConfig& config,
                                     const OptimizedSource* optimized) {
  config.validate();
  const auto& mc = model.config();
  std::size_t floats = 0;
  for (const auto& s : model.latent_shapes()) floats += s.size();
  for (auto src : config.sources) {
    if (src == LatentSource::Optimized && !optimized) {
      throw ConfigError("table: optimized source requested without an assessor and references");
    }
  }

  LatentBank bank(model, derive_seed(config.seed, 1), config.delta, optimized);
  std::vector<ExperimentRow> rows;
  for (std::size_t p = 0; p < config.plans.size(); ++p) {
    const auto& plan = config.plans[p];
    const auto cap = codec::plan_capacity(plan, floats, mc.height, mc.width);
    for (auto kind : config.channels) {
      for (auto src : config.sources) {
        ExperimentRow row;
        row.plan = plan.to_string();
        row.bpp = cap.bpp;
        row.channel = channel::to_string(kind);
        row.trials = config.trials;
        row.source = to_string(src);
        if (cap.bits > 0) {
          for (std::size_t t = 0; t < config.trials; ++t) {
            Rng rng(derive_seed(derive_seed(config.seed, 2), p * 1000003u + t));
            const auto payload = codec::Payload::random(cap.bits, rng);
            row.acc.push_back(channel::roundtrip(model, bank.get(src, t), payload, plan, kind).acc);
          }
          row.acc_mean = mean_of(row.acc);
          row.acc_std = sample_std(row.acc);
        }
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

std::vector<double> bit_plane_agreement(const flow::FlowModel& model, channel::ChannelKind kind, std::size_t trials,
                                        std::uint64_t seed, float delta) {
  const auto plan = codec::BitPlan::parse("S,0:22");
  LatentBank bank(model, seed, delta);
  std::vector<double> agree(32, 0.0);
  std::size_t words = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto& z = bank.get(LatentSource::Random, t);
    Rng rng(derive_seed(seed, 1u << 20 | t));
    const auto payload = codec::Payload::random(z.element_count() * plan.bits_per_float(), rng);
    const auto rt = channel::roundtrip(model, z, payload, plan, kind);
    const auto sent = codec::LatentBitImage::from_latent(rt.stego_latent).words;
    const auto got = codec::LatentBitImage::from_latent(rt.recovered_latent).words;
    for (std::size_t i = 0; i < sent.size(); ++i) {
      const std::uint32_t same = ~(sent[i] ^ got[i]);
      for (unsigned b = 0; b < 32; ++b) agree[b] += (same >> b) & 1u;
    }
    words += sent.size();
  }
  for (double& a : agree) a /= static_cast<double>(std::max<std::size_t>(words, 1));
  return agree;
}

stega::PeReport run_steganalysis(const flow::FlowModel& model, const SteganalysisConfig& config) {
  config.plan.validate();
  if (config.count < 4) throw ConfigError("steganalysis: count must be >= 4");
  const auto none = codec::BitPlan::parse("none");
  const ad::Tensor cover = generate(model, config.count, none, config.channel, derive_seed(config.seed, 1), config.delta);
  const ad::Tensor stego = generate(model, config.count, config.plan, config.channel, derive_seed(config.seed, 2), config.delta);
  return stega::heldout_pe(cover, stego);
}

std::string table_csv(const std::vector<ExperimentRow>& rows) {
  std::string out = "plan,bpp,acc_mean,acc_std,channel,trials,source\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{:.4f},{},{},{},{},{}\n", r.plan, r.bpp, r.acc_mean ? fmt::format("{:.6f}", *r.acc_mean) : "",
                       r.acc_std ? fmt::format("{:.6f}", *r.acc_std) : "", r.channel, r.trials, r.source);
  }
  return out;
}

std::string roc_csv(const stega::PeReport& report) {
  std::string out = "threshold,p_fa,p_md\n";
  for (const auto& p : report.sweep) out += fmt::format("{:.9g},{:.6f},{:.6f}\n", p.threshold, p.p_fa, p.p_md);
  return out;
}

std::string pe_csv(const stega::PeReport& report) {
  return fmt::format("pe,threshold,auc,cover_count,stego_count\n{:.6f},{:.9g},{:.6f},{},{}\n", report.pe,
                     report.threshold, report.auc, report.cover_count, report.stego_count);
}

}  // namespace gsf::exp
