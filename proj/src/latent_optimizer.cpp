#include "gsf/latent_optimizer.hpp"

#include <cmath>

#include <fmt/format.h>

#include "gsf/error.hpp"
#include "gsf/ops.hpp"

namespace gsf::opt {

void OptConfig::validate() const {
  if (!(epsilon >= 0.0f) || !std::isfinite(epsilon)) {
    throw ConfigError(fmt::format("optimize: epsilon must be finite and >= 0, got {}", epsilon));
  }
  if (max_step == 0) throw ConfigError("optimize: max_step must be >= 1");
  if (n == 0) throw ConfigError("optimize: n must be >= 1");
  if (std::isnan(thresh)) throw ConfigError("optimize: thresh is NaN");
}

flow::MultiScaleLatent init_latent(const flow::FlowModel& model, const Tensor& images) {
  const auto& c = model.config();
  if (images.rank() != 4 || images.dim(0) == 0 || images.dim(1) != c.height || images.dim(2) != c.width ||
      images.dim(3) != 3) {
    throw ShapeError(fmt::format("init_latent: expected (n,{},{},3) images with n >= 1, got {}", c.height, c.width,
                                 ad::shape_string(images.shape())));
  }
  ad::NoGradScope no_grad;
  const auto projected = model.forward(images).latent;
  const std::size_t n = images.dim(0);
  flow::MultiScaleLatent z;
  for (const auto& level : projected.levels) {
    ad::Shape shape = level.shape();
    const std::size_t per = level.size() / n;
    shape[0] = 1;
    Tensor mean(shape);
    for (std::size_t j = 0; j < per; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += level[i * per + j];
      mean.data()[j] = static_cast<float>(acc / static_cast<double>(n));
    }
    z.levels.push_back(std::move(mean));
  }
  return z;
}

double diff(std::span<const float> real_scores, float score_gen) {
  if (real_scores.empty()) throw ConfigError("diff: no real scores");
  double mean = 0.0;
  for (float s : real_scores) {
    if (!std::isfinite(s)) throw NumericError("diff: non-finite real score");
    mean += s;
  }
  if (!std::isfinite(score_gen)) throw NumericError("diff: non-finite generated score");
  mean /= static_cast<double>(real_scores.size());
  return std::fabs(mean - static_cast<double>(score_gen));
}

Tensor diff_of_latent(const flow::FlowModel& model, const QualityAssessor& assessor, float mean_real,
                      const flow::MultiScaleLatent& latent) {
  const Tensor score = assessor.score(model.inverse(latent));
  return ad::abs(ad::add_scalar(ad::neg(score), mean_real));
}

OptResult optimize_latent(const flow::FlowModel& model, const QualityAssessor& assessor, const Tensor& references,
                          const OptConfig& config) {
  config.validate();
  if (references.rank() != 4 || references.dim(0) != config.n) {
    throw ShapeError(fmt::format("optimize: expected {} reference images, got {}", config.n,
                                 ad::shape_string(references.shape())));
  }
  OptResult result;
  result.latent = init_latent(model, references);
  {
    ad::NoGradScope no_grad;
    const Tensor real = assessor.score(references);
    double mean = 0.0;
    for (float s : real.data()) mean += s;
    result.mean_real_score = mean / static_cast<double>(real.size());
  }
  const float mean_real = static_cast<float>(result.mean_real_score);

  for (std::size_t step = 1; step <= config.max_step; ++step) {
    flow::MultiScaleLatent z = result.latent.clone();
    for (auto& level : z.levels) level.set_requires_grad(true);
    ad::Tape tape;
    double d = 0.0;
    double score = 0.0;
    try {
      ad::GradScope scope(tape);
      const Tensor score_t = assessor.score(model.inverse(z));
      const Tensor diff_t = ad::abs(ad::add_scalar(ad::neg(score_t), mean_real));
      score = score_t.item();
      d = diff_t.item();
      if (!std::isfinite(d)) {
        result.aborted = true;
        break;
      }
      tape.backward(diff_t);
    } catch (const NumericError&) {
      result.aborted = true;
      break;
    }
    bool finite = true;
    for (const auto& level : z.levels)
      for (float g : level.grad()) finite = finite && std::isfinite(g);
    result.trace.push_back({step, d, score});
    if (!finite) {
      result.aborted = true;
      break;
    }
    for (std::size_t l = 0; l < z.levels.size(); ++l) {
      auto dst = result.latent.levels[l].data();
      const auto g = z.levels[l].grad();
      if (g.empty()) continue;
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= config.epsilon * g[i];
    }
    if (d < config.thresh) {
      result.early_exit = true;
      break;
    }
  }
  return result;
}

}  // namespace gsf::opt
