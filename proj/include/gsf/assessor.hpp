#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "gsf/adam.hpp"
#include "gsf/tensor.hpp"

namespace gsf::opt {

using ad::Tensor;

// Small convolutional real-vs-generated scorer. Three blocks of
// conv3x3 -> instance norm -> relu (the first two followed by 2x2 average
// pooling), global average pooling and a linear scalar head. Scores are
// positive for images judged real and negative for generated ones.
class QualityAssessor {
 public:
  QualityAssessor(std::size_t height, std::size_t width, std::uint64_t seed);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }

  // (N,H,W,3) model-domain images -> (N) scores. Differentiable in the input.
  Tensor score(const Tensor& images) const;

  std::vector<ad::Parameter> parameters();

  static constexpr std::size_t kWidths[3] = {16, 32, 32};

  std::vector<Tensor> conv_weight;  // (3,3,Ci,Co)
  std::vector<Tensor> conv_bias;    // (Co)
  Tensor head_weight;               // (C,1)
  Tensor head_bias;                 // (1)

 private:
  std::size_t height_;
  std::size_t width_;
};

struct AssessorTrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  float learning_rate = 1e-3f;
  std::uint64_t seed = 0;
  std::size_t holdout_period = 5;  // every 5th image of each class is held out

  void validate() const;
};

struct AssessorReport {
  double train_accuracy = 0.0;
  double holdout_accuracy = 0.0;
  std::size_t holdout_count = 0;
};

struct TrainedAssessor {
  QualityAssessor assessor;
  AssessorReport report;
};

// Logistic training on real (label +) versus generated (label -) images,
// both (N,H,W,3) in the model domain. Throws ConfigError if either class is
// empty or the dims disagree.
TrainedAssessor train_assessor(const Tensor& real, const Tensor& generated, const AssessorTrainConfig& config);

// Fraction of images whose score sign matches the class.
double assessor_accuracy(const QualityAssessor& assessor, const Tensor& real, const Tensor& generated);

void save_assessor(const QualityAssessor& assessor, std::ostream& out);
QualityAssessor load_assessor(std::istream& in);
void save_assessor(const QualityAssessor& assessor, const std::filesystem::path& path);
QualityAssessor load_assessor(const std::filesystem::path& path);

}  // namespace gsf::opt
