#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "gradcheck.hpp"
#include "gsf/error.hpp"
#include "gsf/latent_optimizer.hpp"
#include "trained_fixture.hpp"

using namespace gsf;
using ad::Tensor;

namespace {

Tensor references(std::size_t first, std::size_t n = 3) {
  const auto& f = testing::trained_fixture();
  auto idx = f.dataset.indices(data::Split::Eval);
  std::vector<std::size_t> pick(idx.begin() + first, idx.begin() + first + n);
  return f.dataset.batch(pick);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

float score_of(const flow::FlowModel& m, const opt::QualityAssessor& a, const flow::MultiScaleLatent& z) {
  ad::NoGradScope no_grad;
  return a.score(m.inverse(z)).item();
}

}  // namespace

TEST_CASE("quality assessor") {
  const auto& af = testing::assessor_fixture();
  const auto& a = af.trained.assessor;

  SUBCASE("sign convention on training images") {
    ad::NoGradScope no_grad;
    const auto real = a.score(af.real);
    const auto gen = a.score(af.generated);
    const double mr = std::accumulate(real.data().begin(), real.data().end(), 0.0) / real.size();
    const double mg = std::accumulate(gen.data().begin(), gen.data().end(), 0.0) / gen.size();
    CHECK(mr > 0.0);
    CHECK(mg < 0.0);
  }
  SUBCASE("held-out accuracy above 0.8") {
    MESSAGE("held-out accuracy " << af.trained.report.holdout_accuracy << " on "
                                 << af.trained.report.holdout_count << " images");
    CHECK(af.trained.report.holdout_count > 0);
    CHECK(af.trained.report.holdout_accuracy > 0.8);
  }
  SUBCASE("scores are finite") {
    ad::NoGradScope no_grad;
    Rng rng(2);
    const auto noise = uniform_tensor({8, 16, 16, 3}, rng, -0.5f, 0.5f);
    const auto scores = a.score(noise);
    for (float s : scores.data()) CHECK(std::isfinite(s));
  }
  SUBCASE("single-class input is rejected") {
    const Tensor empty({0, 16, 16, 3});
    CHECK_THROWS_AS(opt::train_assessor(af.real, empty, {}), ConfigError);
    CHECK_THROWS_AS(opt::train_assessor(empty, af.generated, {}), ConfigError);
  }
  SUBCASE("save and load preserve scores") {
    std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
    opt::save_assessor(a, ss);
    const auto b = opt::load_assessor(ss);
    ad::NoGradScope no_grad;
    const auto x = data::take_rows(af.generated, 0, 4);
    CHECK(a.score(x).values() == b.score(x).values());
  }
  SUBCASE("truncated file is rejected") {
    std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
    opt::save_assessor(a, ss);
    std::string bytes = ss.str();
    bytes.resize(bytes.size() - 3);
    std::istringstream in(bytes, std::ios::binary);
    CHECK_THROWS_AS(opt::load_assessor(in), FormatError);
  }
}

TEST_CASE("assessor score is differentiable in the input") {
  opt::QualityAssessor a(8, 8, 3);
  Rng rng(4);
  for (auto& p : a.parameters())
    for (float& v : p.tensor.data()) v += std::normal_distribution<float>(0.0f, 0.05f)(rng);
  const Tensor x = uniform_tensor({2, 8, 8, 3}, rng, -0.5f, 0.5f);
  // Small step: instance norm over 2x2 maps curves sharply.
  const auto r = testing::gradcheck([&](const std::vector<Tensor>& in) { return a.score(in[0]); }, {x}, 3e-4);
  CHECK(r.relative_error < 1e-2);
}

TEST_CASE("init_latent") {
  const auto& f = testing::trained_fixture();
  const auto& m = f.model;

  SUBCASE("n = 1 equals the projection exactly") {
    const auto x = references(0, 1);
    const auto z = opt::init_latent(m, x);
    ad::NoGradScope no_grad;
    const auto proj = m.forward(x).latent;
    for (std::size_t l = 0; l < z.levels.size(); ++l) CHECK(z.levels[l].values() == proj.levels[l].values());
  }
  SUBCASE("projections of z and -z average to zero") {
    Rng rng(8);
    flow::MultiScaleLatent z = m.sample(0.7f, rng).latent;
    flow::MultiScaleLatent neg = z.clone();
    for (auto& l : neg.levels)
      for (float& v : l.data()) v = -v;
    ad::Tensor images({2, 16, 16, 3});
    {
      ad::NoGradScope no_grad;
      const auto a = m.inverse(z), b = m.inverse(neg);
      std::copy(a.data().begin(), a.data().end(), images.data().begin());
      std::copy(b.data().begin(), b.data().end(), images.data().begin() + a.size());
    }
    const auto mean = opt::init_latent(m, images);
    float worst = 0.0f;
    for (const auto& l : mean.levels)
      for (float v : l.data()) worst = std::max(worst, std::fabs(v));
    CHECK(worst < 1e-4f);
  }
  SUBCASE("n = 3 matches a per-element average") {
    const auto x = references(0, 3);
    const auto z = opt::init_latent(m, x);
    flow::MultiScaleLatent single[3];
    {
      ad::NoGradScope no_grad;
      for (std::size_t i = 0; i < 3; ++i) single[i] = m.forward(data::take_rows(x, i, i + 1)).latent;
    }
    for (std::size_t l = 0; l < z.levels.size(); ++l) {
      REQUIRE(z.levels[l].dim(0) == 1);
      for (std::size_t j = 0; j < z.levels[l].size(); ++j) {
        const double avg =
            (double(single[0].levels[l][j]) + double(single[1].levels[l][j]) + double(single[2].levels[l][j])) / 3.0;
        CHECK(z.levels[l][j] == doctest::Approx(avg).epsilon(1e-5));
      }
    }
  }
  SUBCASE("dim mismatch") { CHECK_THROWS_AS(opt::init_latent(m, Tensor({1, 8, 8, 3})), ShapeError); }
}

TEST_CASE("diff") {
  const float real[] = {1.0f, 2.0f, 3.0f};
  CHECK(opt::diff(real, 0.0f) == 2.0);
  CHECK(opt::diff(real, 2.0f) == 0.0);
  CHECK(opt::diff(real, 5.0f) == 3.0);
  Rng rng(1);
  std::normal_distribution<float> d;
  for (int i = 0; i < 100; ++i) {
    const float r[] = {d(rng), d(rng)};
    CHECK(opt::diff(r, d(rng)) >= 0.0);
  }
  CHECK_THROWS_AS(opt::diff(std::span<const float>(), 0.0f), ConfigError);
  const float bad[] = {std::numeric_limits<float>::infinity()};
  CHECK_THROWS_AS(opt::diff(bad, 0.0f), NumericError);
}

TEST_CASE("optimize_latent") {
  const auto& f = testing::trained_fixture();
  const auto& a = testing::assessor_fixture().trained.assessor;

  SUBCASE("epsilon = 0 leaves Z unchanged") {
    opt::OptConfig c;
    c.epsilon = 0.0f;
    c.max_step = 5;
    c.thresh = -1.0f;
    const auto refs = references(0);
    const auto r = opt::optimize_latent(f.model, a, refs, c);
    const auto init = opt::init_latent(f.model, refs);
    CHECK(r.trace.size() == 5);
    for (std::size_t l = 0; l < init.levels.size(); ++l) CHECK(r.latent.levels[l].values() == init.levels[l].values());
  }
  SUBCASE("thresh = inf stops after exactly one step") {
    opt::OptConfig c;
    c.thresh = std::numeric_limits<float>::infinity();
    const auto r = opt::optimize_latent(f.model, a, references(3), c);
    CHECK(r.trace.size() == 1);
    CHECK(r.early_exit);
    CHECK(r.trace[0].step == 1);
  }
  SUBCASE("default run: late Diff minimum below early minimum") {
    opt::OptConfig c;
    c.thresh = 0.0f;
    const auto r = opt::optimize_latent(f.model, a, references(0), c);
    REQUIRE(r.trace.size() == 100);
    double first = 1e30, last = 1e30;
    for (std::size_t i = 0; i < 10; ++i) first = std::min(first, r.trace[i].diff);
    for (std::size_t i = 90; i < 100; ++i) last = std::min(last, r.trace[i].diff);
    MESSAGE("min diff first 10 " << first << ", last 10 " << last);
    CHECK(last < first);
  }
  SUBCASE("trace never continues past a step below thresh") {
    for (std::size_t s = 0; s < 6; ++s) {
      const auto r = opt::optimize_latent(f.model, a, references(3 * s), {});
      for (std::size_t i = 0; i + 1 < r.trace.size(); ++i) CHECK(r.trace[i].diff >= 0.1);
      CHECK((r.early_exit || r.trace.size() == 100));
    }
  }
  SUBCASE("non-finite score aborts with the last finite Z") {
    std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
    opt::save_assessor(a, ss);
    opt::QualityAssessor broken = opt::load_assessor(ss);
    broken.head_bias.data()[0] = std::nanf("");
    const auto refs = references(0);
    const auto r = opt::optimize_latent(f.model, broken, refs, {});
    CHECK(r.aborted);
    CHECK(r.trace.empty());
    const auto init = opt::init_latent(f.model, refs);
    for (std::size_t l = 0; l < init.levels.size(); ++l) CHECK(r.latent.levels[l].values() == init.levels[l].values());
  }
  SUBCASE("invalid configs") {
    opt::OptConfig c;
    c.max_step = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.epsilon = -1.0f;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.n = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_THROWS_AS(opt::optimize_latent(f.model, a, references(0, 2), {}), ShapeError);
  }
}

TEST_CASE("gradient of Diff with respect to Z") {
  const auto& f = testing::trained_fixture();
  const auto& a = testing::assessor_fixture().trained.assessor;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto refs = references(3 * seed);
    float mean_real = 0.0f;
    {
      ad::NoGradScope no_grad;
      const auto scores = a.score(refs);
      for (float s : scores.data()) mean_real += s / 3.0f;
    }
    flow::MultiScaleLatent z = opt::init_latent(f.model, refs);

    for (auto& l : z.levels) l.set_requires_grad(true);
    {
      ad::Tape tape;
      ad::GradScope scope(tape);
      tape.backward(opt::diff_of_latent(f.model, a, mean_real, z));
    }
    for (auto& l : z.levels) l.set_requires_grad(false);

    // 16 random (level, index) coordinates.
    Rng rng(seed);
    std::vector<double> analytic, numeric;
    const double h = 1e-3;
    for (int k = 0; k < 16; ++k) {
      const std::size_t l = std::uniform_int_distribution<std::size_t>(0, z.levels.size() - 1)(rng);
      const std::size_t i = std::uniform_int_distribution<std::size_t>(0, z.levels[l].size() - 1)(rng);
      analytic.push_back(z.levels[l].grad()[i]);
      ad::NoGradScope no_grad;
      const float orig = z.levels[l].data()[i];
      z.levels[l].data()[i] = static_cast<float>(orig + h);
      const double hi = z.levels[l].data()[i];
      const double fp = opt::diff_of_latent(f.model, a, mean_real, z).item();
      z.levels[l].data()[i] = static_cast<float>(orig - h);
      const double lo = z.levels[l].data()[i];
      const double fm = opt::diff_of_latent(f.model, a, mean_real, z).item();
      z.levels[l].data()[i] = orig;
      numeric.push_back((fp - fm) / (hi - lo));
    }
    const double err = testing::relative_error(analytic, numeric);
    MESSAGE("seed " << seed << " relative error " << err);
    CHECK(err < 1e-2);
  }
}

TEST_CASE("Diff trend over 8 seeds") {
  const auto& f = testing::trained_fixture();
  const auto& a = testing::assessor_fixture().trained.assessor;
  std::size_t improved = 0, closer = 0;
  for (std::size_t seed = 0; seed < 8; ++seed) {
    opt::OptConfig c;
    c.thresh = 0.0f;  // run all steps so quartiles are comparable
    const auto refs = references(3 * seed);
    const auto r = opt::optimize_latent(f.model, a, refs, c);
    REQUIRE(r.trace.size() == 100);
    std::vector<double> q1, q4;
    for (std::size_t i = 0; i < 25; ++i) q1.push_back(r.trace[i].diff);
    for (std::size_t i = 75; i < 100; ++i) q4.push_back(r.trace[i].diff);
    CHECK(median(q4) <= median(q1));

    const float s0 = score_of(f.model, a, opt::init_latent(f.model, refs));
    const float s1 = score_of(f.model, a, r.latent);
    improved += s1 >= s0;
    closer += std::fabs(s1 - r.mean_real_score) <= std::fabs(s0 - r.mean_real_score);
  }
  MESSAGE("score increased on " << improved << "/8 seeds; moved toward the real mean on " << closer << "/8");
  CHECK(improved >= 6);
  CHECK(closer >= 6);
}
