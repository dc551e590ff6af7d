#include "gsf/flow.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include <fmt/format.h>

#include "gsf/binary_io.hpp"
#include "gsf/error.hpp"
#include "gsf/ops.hpp"

namespace gsf::flow {

namespace {

constexpr char kCheckpointMagic[4] = {'G', 'S', 'F', 'W'};
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void FlowConfig::validate() const {
  if (height == 0 || width == 0 || levels == 0 || steps == 0 || hidden == 0) {
    throw ConfigError("flow config: H, W, L, K and hidden must be positive");
  }
  const std::size_t div = std::size_t{1} << levels;
  if (height % div || width % div) {
    throw ConfigError(
        fmt::format("flow config: H={} and W={} must be divisible by 2^L={}", height, width, div));
  }
}

std::size_t MultiScaleLatent::element_count() const {
  std::size_t n = 0;
  for (const auto& z : levels) n += z.size();
  return n;
}

MultiScaleLatent MultiScaleLatent::clone() const {
  MultiScaleLatent out;
  out.temperature = temperature;
  for (const auto& z : levels) out.levels.push_back(z.clone());
  return out;
}

FlowModel::FlowModel(FlowConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  std::size_t channels = kImageChannels;
  for (std::size_t i = 0; i < config_.levels; ++i) {
    channels *= 4;
    std::vector<FlowStep> steps;
    steps.reserve(config_.steps);
    for (std::size_t k = 0; k < config_.steps; ++k) {
      steps.emplace_back(channels, config_.hidden, rng);
      steps.back().label = fmt::format("level {} step {}", i, k);
    }
    levels_.push_back(std::move(steps));
    if (i + 1 < config_.levels) channels /= 2;
  }
}

std::vector<LatentShape> FlowModel::latent_shapes() const {
  std::vector<LatentShape> shapes;
  std::size_t h = config_.height, w = config_.width, c = kImageChannels;
  for (std::size_t i = 0; i < config_.levels; ++i) {
    h /= 2;
    w /= 2;
    c *= 4;
    if (i + 1 < config_.levels) {
      shapes.push_back({h, w, c / 2});
      c /= 2;
    } else {
      shapes.push_back({h, w, c});
    }
  }
  return shapes;
}

void FlowModel::check_images(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != config_.height || images.dim(2) != config_.width ||
      images.dim(3) != kImageChannels) {
    throw ShapeError(fmt::format("flow: expected images (N,{},{},3), got {}", config_.height,
                                 config_.width, ad::shape_string(images.shape())));
  }
}

FlowOutput FlowModel::forward(const Tensor& images) const {
  check_images(images);
  FlowOutput out;
  Tensor x = images;
  Tensor total(ad::Shape{images.dim(0)}, 0.0f);
  for (std::size_t i = 0; i < levels_.size(); ++i) {
    x = ad::squeeze2x2(x);
    for (const auto& step : levels_[i]) {
      auto r = step.forward(x);
      x = r.y;
      total = ad::add(total, r.logdet);
      out.step_logdets.push_back(r.logdet);
    }
    if (i + 1 < levels_.size()) {
      const std::size_t c = x.shape().back();
      out.latent.levels.push_back(ad::slice_channels(x, c / 2, c));
      x = ad::slice_channels(x, 0, c / 2);
    } else {
      out.latent.levels.push_back(x);
    }
  }
  out.logdet = total;
  return out;
}

Tensor FlowModel::inverse(const MultiScaleLatent& latent) const {
  const auto shapes = latent_shapes();
  if (latent.levels.size() != shapes.size()) {
    throw ShapeError(fmt::format("flow inverse: expected {} latent levels, got {}", shapes.size(),
                                 latent.levels.size()));
  }
  const std::size_t n = latent.batch();
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& z = latent.levels[i];
    const auto& s = shapes[i];
    if (z.rank() != 4 || z.dim(0) != n || z.dim(1) != s.height || z.dim(2) != s.width ||
        z.dim(3) != s.channels) {
      throw ShapeError(fmt::format("flow inverse: latent level {} has shape {}, expected (N,{},{},{})",
                                   i, ad::shape_string(z.shape()), s.height, s.width, s.channels));
    }
  }
  Tensor x = latent.levels.back();
  for (std::size_t i = levels_.size(); i-- > 0;) {
    if (i + 1 < levels_.size()) x = ad::concat_channels(x, latent.levels[i]);
    for (std::size_t k = levels_[i].size(); k-- > 0;) x = levels_[i][k].inverse(x);
    x = ad::unsqueeze2x2(x);
  }
  return x;
}

Tensor standard_normal_log_density(const MultiScaleLatent& latent) {
  const std::size_t n = latent.batch();
  Tensor acc(ad::Shape{n}, 0.0f);
  for (const auto& z : latent.levels) acc = ad::add(acc, ad::sum_per_sample(ad::square(z)));
  const std::size_t dims = n ? latent.element_count() / n : 0;
  const float norm = -0.5f * static_cast<float>(dims) * std::log(2.0f * std::numbers::pi_v<float>);
  return ad::add_scalar(ad::mul_scalar(acc, -0.5f), norm);
}

Tensor FlowModel::log_likelihood(const Tensor& images) const {
  auto out = forward(images);
  Tensor ll = ad::add(standard_normal_log_density(out.latent), out.logdet);
  ad::check_finite(ll, "log_likelihood");
  return ll;
}

double bits_per_dim(double log_likelihood, std::size_t dims) {
  const double d = static_cast<double>(dims);
  return -(log_likelihood - d * std::log(255.0)) / (d * std::log(2.0));
}

MultiScaleLatent FlowModel::zero_latent(std::size_t count) const {
  MultiScaleLatent z;
  for (const auto& s : latent_shapes()) z.levels.emplace_back(ad::Shape{count, s.height, s.width, s.channels});
  z.temperature = 0.0f;
  return z;
}

Sample FlowModel::sample(float temperature, Rng& rng, std::size_t count) const {
  if (!(temperature > 0.0f)) {
    throw ConfigError(fmt::format("sample: temperature must be > 0, got {}", temperature));
  }
  Sample s;
  s.latent.temperature = temperature;
  for (const auto& shape : latent_shapes()) {
    s.latent.levels.push_back(
        normal_tensor({count, shape.height, shape.width, shape.channels}, rng, temperature));
  }
  s.image = inverse(s.latent);
  return s;
}

void FlowModel::initialize_actnorm(const Tensor& images) {
  check_images(images);
  ad::NoGradScope no_grad;
  Tensor x = images;
  for (std::size_t i = 0; i < levels_.size(); ++i) {
    x = ad::squeeze2x2(x);
    for (auto& step : levels_[i]) {
      step.actnorm.initialize(x);
      x = step.forward(x).y;
    }
    if (i + 1 < levels_.size()) x = ad::slice_channels(x, 0, x.shape().back() / 2);
  }
}

bool FlowModel::actnorm_initialized() const {
  for (const auto& level : levels_)
    for (const auto& step : level)
      if (!step.actnorm.initialized()) return false;
  return true;
}

std::vector<ad::Parameter> FlowModel::parameters() {
  std::vector<ad::Parameter> out;
  for (std::size_t i = 0; i < levels_.size(); ++i)
    for (std::size_t k = 0; k < levels_[i].size(); ++k)
      levels_[i][k].collect(fmt::format("level{}.step{}", i, k), out);
  return out;
}

// Checkpoint

void save_checkpoint(const FlowModel& model, std::ostream& out) {
  const auto& c = model.config();
  out.write(kCheckpointMagic, 4);
  io::write_u32(out, kCheckpointVersion);
  for (std::size_t v : {c.height, c.width, c.levels, c.steps, c.hidden}) {
    io::write_u32(out, static_cast<std::uint32_t>(v));
  }
  io::write_u32(out, model.actnorm_initialized() ? 1u : 0u);
  for (const auto& level : model.levels()) {
    for (const auto& step : level) {
      io::write_f32s(out, step.actnorm.log_scale.data());
      io::write_f32s(out, step.actnorm.bias.data());
      io::write_f32s(out, step.invconv.permutation);
      io::write_f32s(out, step.invconv.sign);
      io::write_f32s(out, step.invconv.lower.data());
      io::write_f32s(out, step.invconv.upper.data());
      io::write_f32s(out, step.invconv.log_diag.data());
      io::write_f32s(out, step.coupling.conv1_weight.data());
      io::write_f32s(out, step.coupling.conv1_bias.data());
      io::write_f32s(out, step.coupling.conv2_weight.data());
      io::write_f32s(out, step.coupling.conv2_bias.data());
    }
  }
}

FlowModel load_checkpoint(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kCheckpointMagic)) {
    throw FormatError("checkpoint: bad magic");
  }
  const auto version = io::read_u32(in, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw FormatError(fmt::format("checkpoint: unsupported version {}", version));
  }
  FlowConfig c;
  c.height = io::read_u32(in, "checkpoint height");
  c.width = io::read_u32(in, "checkpoint width");
  c.levels = io::read_u32(in, "checkpoint levels");
  c.steps = io::read_u32(in, "checkpoint steps");
  c.hidden = io::read_u32(in, "checkpoint hidden");
  const bool initialized = io::read_u32(in, "checkpoint actnorm flag") != 0;
  if (c.levels > 16 || c.height > 4096 || c.width > 4096 || c.steps > 1024 || c.hidden > 4096) {
    throw FormatError("checkpoint: implausible header values");
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(fmt::format("checkpoint: {}", e.what()));
  }
  FlowModel model(c, 0);
  for (auto& level : model.levels()) {
    for (auto& step : level) {
      io::read_f32s(in, step.actnorm.log_scale.data(), "actnorm");
      io::read_f32s(in, step.actnorm.bias.data(), "actnorm");
      io::read_f32s(in, step.invconv.permutation, "invconv");
      io::read_f32s(in, step.invconv.sign, "invconv");
      io::read_f32s(in, step.invconv.lower.data(), "invconv");
      io::read_f32s(in, step.invconv.upper.data(), "invconv");
      io::read_f32s(in, step.invconv.log_diag.data(), "invconv");
      io::read_f32s(in, step.coupling.conv1_weight.data(), "coupling");
      io::read_f32s(in, step.coupling.conv1_bias.data(), "coupling");
      io::read_f32s(in, step.coupling.conv2_weight.data(), "coupling");
      io::read_f32s(in, step.coupling.conv2_bias.data(), "coupling");
      step.actnorm.mark_initialized(initialized);
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("checkpoint: trailing bytes after parameter blocks");
  }
  return model;
}

void save_checkpoint(const FlowModel& model, const std::filesystem::path& path) {
  std::ostringstream ss(std::ios::binary);
  save_checkpoint(model, ss);
  io::write_file_atomic(path, ss.str());
}

FlowModel load_checkpoint(const std::filesystem::path& path) {
  std::istringstream ss(io::read_file(path), std::ios::binary);
  return load_checkpoint(ss);
}

}  // namespace gsf::flow
