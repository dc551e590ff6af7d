#include "gsf/assessor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "gsf/binary_io.hpp"
#include "gsf/dataset.hpp"
#include "gsf/error.hpp"
#include "gsf/ops.hpp"
#include "gsf/random.hpp"

namespace gsf::opt {

namespace {

constexpr char kMagic[4] = {'G', 'S', 'F', 'Q'};
constexpr std::uint32_t kVersion = 1;

void check_batch(const Tensor& images, std::size_t h, std::size_t w, const char* what) {
  if (images.rank() != 4 || images.dim(1) != h || images.dim(2) != w || images.dim(3) != 3) {
    throw ShapeError(fmt::format("{}: expected (N,{},{},3) images, got {}", what, h, w, ad::shape_string(images.shape())));
  }
}

}  // namespace

QualityAssessor::QualityAssessor(std::size_t height, std::size_t width, std::uint64_t seed)
    : height_(height), width_(width) {
  if (height % 4 || width % 4 || height == 0 || width == 0) {
    throw ConfigError(fmt::format("assessor: H={} and W={} must be positive multiples of 4", height, width));
  }
  Rng rng(seed);
  std::size_t in = 3;
  for (std::size_t out : kWidths) {
    const float std = std::sqrt(2.0f / static_cast<float>(9 * in));
    conv_weight.push_back(normal_tensor({3, 3, in, out}, rng, std));
    conv_bias.emplace_back(ad::Shape{out});
    in = out;
  }
  head_weight = normal_tensor({in, 1}, rng, std::sqrt(1.0f / static_cast<float>(in)));
  head_bias = Tensor(ad::Shape{1});
}

Tensor QualityAssessor::score(const Tensor& images) const {
  check_batch(images, height_, width_, "assessor");
  Tensor x = images;
  for (std::size_t b = 0; b < conv_weight.size(); ++b) {
    x = ad::relu(ad::instance_norm(ad::conv2d(x, conv_weight[b], conv_bias[b])));
    if (b + 1 < conv_weight.size()) x = ad::avg_pool2x2(x);
  }
  const std::size_t n = images.dim(0);
  Tensor s = ad::reshape(ad::matmul(ad::global_avg_pool(x), head_weight), {n});
  return ad::add(s, ad::broadcast_scalar(head_bias, {n}));
}

std::vector<ad::Parameter> QualityAssessor::parameters() {
  std::vector<ad::Parameter> out;
  for (std::size_t b = 0; b < conv_weight.size(); ++b) {
    out.push_back({fmt::format("block{}.conv.weight", b), conv_weight[b]});
    out.push_back({fmt::format("block{}.conv.bias", b), conv_bias[b]});
  }
  out.push_back({"head.weight", head_weight});
  out.push_back({"head.bias", head_bias});
  return out;
}

void AssessorTrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("assessor: batch_size must be >= 1");
  if (!(learning_rate > 0.0f)) throw ConfigError("assessor: learning rate must be > 0");
  if (holdout_period == 1) throw ConfigError("assessor: holdout_period 1 leaves nothing to train on");
}

double assessor_accuracy(const QualityAssessor& assessor, const Tensor& real, const Tensor& generated) {
  ad::NoGradScope no_grad;
  std::size_t correct = 0, total = 0;
  const Tensor real_scores = assessor.score(real);
  const Tensor generated_scores = assessor.score(generated);
  for (float s : real_scores.data()) correct += s > 0.0f, ++total;
  for (float s : generated_scores.data()) correct += s < 0.0f, ++total;
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

TrainedAssessor train_assessor(const Tensor& real, const Tensor& generated, const AssessorTrainConfig& config) {
  config.validate();
  if (real.rank() != 4 || generated.rank() != 4 || real.dim(0) == 0 || generated.dim(0) == 0) {
    throw ConfigError("train_assessor: both real and generated sets must be non-empty (N,H,W,3) batches");
  }
  const std::size_t h = real.dim(1), w = real.dim(2);
  check_batch(real, h, w, "train_assessor real");
  check_batch(generated, h, w, "train_assessor generated");

  // Split each class into train and holdout rows.
  struct Item {
    bool real;
    std::size_t row;
  };
  std::vector<Item> train_items;
  std::vector<std::size_t> hold_real, hold_gen, fit_real, fit_gen;
  for (std::size_t i = 0; i < real.dim(0); ++i) {
    const bool hold = config.holdout_period && i % config.holdout_period == config.holdout_period - 1;
    (hold ? hold_real : fit_real).push_back(i);
  }
  for (std::size_t i = 0; i < generated.dim(0); ++i) {
    const bool hold = config.holdout_period && i % config.holdout_period == config.holdout_period - 1;
    (hold ? hold_gen : fit_gen).push_back(i);
  }
  if (fit_real.empty() || fit_gen.empty()) throw ConfigError("train_assessor: a class has no training rows");
  for (std::size_t r : fit_real) train_items.push_back({true, r});
  for (std::size_t r : fit_gen) train_items.push_back({false, r});

  TrainedAssessor out{QualityAssessor(h, w, derive_seed(config.seed, 0)), {}};
  auto params = out.assessor.parameters();
  for (auto& p : params) p.tensor.set_requires_grad(true);
  ad::AdamState adam(params, {.learning_rate = config.learning_rate});
  const std::size_t per = h * w * 3;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, 100 + epoch));
    std::shuffle(train_items.begin(), train_items.end(), rng);
    for (std::size_t b = 0; b < train_items.size(); b += config.batch_size) {
      const std::size_t e = std::min(train_items.size(), b + config.batch_size);
      Tensor x({e - b, h, w, 3});
      Tensor sign({e - b});
      for (std::size_t k = b; k < e; ++k) {
        const auto& src = train_items[k].real ? real : generated;
        std::copy_n(src.data().begin() + train_items[k].row * per, per, x.data().begin() + (k - b) * per);
        sign.data()[k - b] = train_items[k].real ? -1.0f : 1.0f;
      }
      ad::Tape tape;
      {
        ad::GradScope scope(tape);
        ad::zero_grads(params);
        // softplus(-s) for real, softplus(s) for generated
        Tensor loss = ad::mean(ad::softplus(ad::mul(out.assessor.score(x), sign)));
        tape.backward(loss);
      }
      ad::adam_step(params, adam);
    }
  }
  for (auto& p : params) {
    p.tensor.set_requires_grad(false);
    p.tensor.zero_grad();
  }

  out.report.train_accuracy = assessor_accuracy(out.assessor, data::gather_rows(real, fit_real),
                                                data::gather_rows(generated, fit_gen));
  out.report.holdout_count = hold_real.size() + hold_gen.size();
  if (!hold_real.empty() && !hold_gen.empty()) {
    out.report.holdout_accuracy = assessor_accuracy(out.assessor, data::gather_rows(real, hold_real),
                                                    data::gather_rows(generated, hold_gen));
  }
  return out;
}

void save_assessor(const QualityAssessor& assessor, std::ostream& out) {
  out.write(kMagic, 4);
  io::write_u32(out, kVersion);
  io::write_u32(out, static_cast<std::uint32_t>(assessor.height()));
  io::write_u32(out, static_cast<std::uint32_t>(assessor.width()));
  for (std::size_t b = 0; b < assessor.conv_weight.size(); ++b) {
    io::write_f32s(out, assessor.conv_weight[b].data());
    io::write_f32s(out, assessor.conv_bias[b].data());
  }
  io::write_f32s(out, assessor.head_weight.data());
  io::write_f32s(out, assessor.head_bias.data());
}

QualityAssessor load_assessor(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kMagic)) throw FormatError("assessor: bad magic");
  const auto version = io::read_u32(in, "assessor version");
  if (version != kVersion) throw FormatError(fmt::format("assessor: unsupported version {}", version));
  const std::size_t h = io::read_u32(in, "assessor height");
  const std::size_t w = io::read_u32(in, "assessor width");
  if (h > 4096 || w > 4096) throw FormatError("assessor: implausible dims");
  QualityAssessor a = [&] {
    try {
      return QualityAssessor(h, w, 0);
    } catch (const ConfigError& e) {
      throw FormatError(fmt::format("assessor: {}", e.what()));
    }
  }();
  for (std::size_t b = 0; b < a.conv_weight.size(); ++b) {
    io::read_f32s(in, a.conv_weight[b].data(), "assessor conv");
    io::read_f32s(in, a.conv_bias[b].data(), "assessor conv");
  }
  io::read_f32s(in, a.head_weight.data(), "assessor head");
  io::read_f32s(in, a.head_bias.data(), "assessor head");
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("assessor: trailing bytes");
  return a;
}

void save_assessor(const QualityAssessor& assessor, const std::filesystem::path& path) {
  std::ostringstream ss(std::ios::binary);
  save_assessor(assessor, ss);
  io::write_file_atomic(path, ss.str());
}

QualityAssessor load_assessor(const std::filesystem::path& path) {
  std::istringstream ss(io::read_file(path), std::ios::binary);
  return load_assessor(ss);
}

}  // namespace gsf::opt
