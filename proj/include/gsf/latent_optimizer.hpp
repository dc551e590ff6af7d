#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "gsf/assessor.hpp"
#include "gsf/flow.hpp"

namespace gsf::opt {

struct OptConfig {
  float epsilon = 1e-3f;      // step size
  std::size_t max_step = 100;
  float thresh = 0.1f;
  std::size_t n = 3;          // reference images

  void validate() const;
};

struct TracePoint {
  std::size_t step;  // 1-based
  double diff;
  double score_gen;
};

struct OptResult {
  flow::MultiScaleLatent latent;
  std::vector<TracePoint> trace;
  double mean_real_score = 0.0;
  bool early_exit = false;  // stopped because Diff < thresh
  bool aborted = false;     // stopped on a non-finite gradient
};

// Elementwise mean of the projected latents of `images` (N,H,W,3), giving a
// batch-1 latent.
flow::MultiScaleLatent init_latent(const flow::FlowModel& model, const Tensor& images);

// |mean(real_scores) - score_gen|
double diff(std::span<const float> real_scores, float score_gen);

// Differentiable Diff of the image decoded from `latent` (batch 1).
Tensor diff_of_latent(const flow::FlowModel& model, const QualityAssessor& assessor, float mean_real,
                      const flow::MultiScaleLatent& latent);

// Gradient descent on Diff starting from init_latent(references). Each step
// decodes one image, records Diff, and applies Z -= epsilon * dDiff/dZ; the
// loop ends after max_step steps or after the first step whose Diff is
// below thresh. The subgradient of |.| at 0 is taken as 0.
OptResult optimize_latent(const flow::FlowModel& model, const QualityAssessor& assessor, const Tensor& references,
                          const OptConfig& config);

}  // namespace gsf::opt
