#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gsf/tensor.hpp"

namespace gsf::stega {

struct RocPoint {
  double threshold;
  double p_fa;  // cover flagged as stego
  double p_md;  // stego missed
};

struct PeReport {
  double pe = 0.5;
  double threshold = 0.0;
  std::vector<RocPoint> sweep;  // ascending threshold
  double auc = 0.5;
  std::size_t cover_count = 0;
  std::size_t stego_count = 0;
};

// Higher scores mean "stego". A sample is flagged when score > threshold.
// Thresholds are -inf, every midpoint between consecutive distinct scores,
// and the largest score; PE is the minimum of (P_FA + P_MD)/2 over them.
// AUC is the Mann-Whitney probability that a stego score beats a cover
// score, counting ties as one half.
PeReport pe_from_scores(std::span<const double> cover, std::span<const double> stego);

// Laplacian-residual statistics of a model-domain (H,W,3) image, measured
// in pixel units: per channel, mean |r|, standard deviation of r, and the
// fractions of |r| below 0.5, 1.5 and 4.
std::vector<double> residual_features(std::span<const float> image, std::size_t height, std::size_t width);

struct SteganalyzerConfig {
  std::size_t iterations = 300;
  double learning_rate = 0.5;
  double l2 = 1e-3;
};

// Standardized residual features -> logistic regression.
class Steganalyzer {
 public:
  // cover and stego are (N,H,W,3) model-domain batches.
  static Steganalyzer train(const ad::Tensor& cover, const ad::Tensor& stego, const SteganalyzerConfig& config = {});

  std::vector<double> scores(const ad::Tensor& images) const;

 private:
  double score_features(std::span<const double> features) const;

  std::vector<double> mean_, scale_, weight_;
  double bias_ = 0.0;
};

// Trains on the first half of each class and reports PE on the second.
PeReport heldout_pe(const ad::Tensor& cover, const ad::Tensor& stego, const SteganalyzerConfig& config = {});

}  // namespace gsf::stega
