#pragma once

// A 16x16, L=3 flow trained once per test binary on the synthetic set,
// plus an assessor trained against its samples.

#include "gsf/assessor.hpp"
#include "gsf/dataset.hpp"
#include "gsf/trainer.hpp"

namespace gsf::testing {

struct TrainedFixture {
  data::Dataset dataset;
  flow::FlowModel model;
  double initial_bpd = 0.0;
  double final_bpd = 0.0;
  train::TrainResult result;
};

inline flow::FlowConfig fixture_config() { return {16, 16, 3, 4, 32}; }

inline const TrainedFixture& trained_fixture() {
  static const TrainedFixture fixture = [] {
    TrainedFixture f{data::synth_dataset(7, 512, 16, 16), flow::FlowModel(fixture_config(), 1), 0.0, 0.0, {}};
    const auto eval = f.dataset.batch(data::Split::Eval);
    train::TrainConfig tc;
    tc.epochs = 10;
    tc.seed = 3;
    // Measure the starting point with data-initialized actnorm so the
    // comparison isolates what optimization contributes.
    f.model.initialize_actnorm(f.dataset.batch(data::Split::Train));
    f.initial_bpd = train::evaluate_bpd(f.model, eval);
    f.result = train::train(f.model, f.dataset, tc);
    f.final_bpd = train::evaluate_bpd(f.model, eval);
    return f;
  }();
  return fixture;
}

struct AssessorFixture {
  opt::TrainedAssessor trained;
  ad::Tensor real;       // training-split images
  ad::Tensor generated;  // model samples at temperature 0.7
};

inline const AssessorFixture& assessor_fixture() {
  static const AssessorFixture fixture = [] {
    const auto& f = trained_fixture();
    ad::Tensor generated;
    {
      ad::NoGradScope no_grad;
      Rng rng(5);
      generated = f.model.sample(0.7f, rng, 512).image;
    }
    const auto real = f.dataset.batch(data::Split::Train);
    opt::AssessorTrainConfig ac;
    ac.learning_rate = 3e-3f;
    ac.seed = 11;
    return AssessorFixture{opt::train_assessor(real, generated, ac), real, generated};
  }();
  return fixture;
}

}  // namespace gsf::testing
