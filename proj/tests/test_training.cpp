#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "doctest.h"
#include "gsf/binary_io.hpp"
#include "gsf/dataset.hpp"
#include "gsf/error.hpp"
#include "gsf/image_io.hpp"
#include "gsf/trainer.hpp"
#include "trained_fixture.hpp"

using namespace gsf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("gsf_test_training_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_solid_ppm(const fs::path& path, std::size_t h, std::size_t w, std::uint8_t value) {
  io::RasterU8 r{h, w, std::vector<std::uint8_t>(h * w * 3, value)};
  io::write_ppm(path, r);
}

std::string checkpoint_bytes(const flow::FlowModel& m) {
  std::ostringstream ss(std::ios::binary);
  flow::save_checkpoint(m, ss);
  return ss.str();
}

flow::FlowConfig tiny() { return {8, 8, 2, 2, 8}; }

}  // namespace

TEST_CASE("image files") {
  const auto dir = scratch("io");
  SUBCASE("ppm round trip") {
    io::RasterU8 r{2, 3, {}};
    for (int i = 0; i < 18; ++i) r.pixels.push_back(static_cast<std::uint8_t>(i * 14));
    io::write_ppm(dir / "a.ppm", r);
    const auto back = io::read_ppm(dir / "a.ppm");
    CHECK(back.height == 2);
    CHECK(back.width == 3);
    CHECK(back.pixels == r.pixels);
  }
  SUBCASE("pfm stores floats bit-exactly") {
    Rng rng(1);
    io::RasterF32 r{3, 2, {}};
    std::normal_distribution<float> d;
    for (int i = 0; i < 18; ++i) r.pixels.push_back(d(rng));
    io::write_pfm(dir / "a.pfm", r);
    const auto back = io::read_pfm(dir / "a.pfm");
    CHECK(back.pixels == r.pixels);
  }
  SUBCASE("truncated ppm is rejected") {
    io::write_file_atomic(dir / "bad.ppm", "P6\n4 4\n255\nabc");
    CHECK_THROWS_AS(io::read_ppm(dir / "bad.ppm"), FormatError);
  }
}

TEST_CASE("ingest_images") {
  SUBCASE("empty directory is an error") {
    CHECK_THROWS_AS(data::ingest_images(scratch("empty")), ConfigError);
  }
  SUBCASE("ordered by filename and validated") {
    const auto dir = scratch("ordered");
    write_solid_ppm(dir / "b.ppm", 4, 4, 20);
    write_solid_ppm(dir / "a.ppm", 4, 4, 10);
    write_solid_ppm(dir / "c.ppm", 4, 4, 30);
    const auto ds = data::ingest_images(dir);
    REQUIRE(ds.size() == 3);
    CHECK(ds.images[0][0] == 10.0f);
    CHECK(ds.images[1][0] == 20.0f);
    CHECK(ds.images[2][0] == 30.0f);
    CHECK(ds.height == 4);
  }
  SUBCASE("mixed sizes name the first mismatched file") {
    const auto dir = scratch("mixed");
    write_solid_ppm(dir / "a.ppm", 4, 4, 1);
    write_solid_ppm(dir / "b.ppm", 8, 4, 1);
    write_solid_ppm(dir / "c.ppm", 4, 8, 1);
    try {
      data::ingest_images(dir);
      FAIL("expected an error");
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("b.ppm") != std::string::npos);
      CHECK(msg.find("c.ppm") == std::string::npos);
    }
  }
  SUBCASE("expected dims are enforced") {
    const auto dir = scratch("dims");
    write_solid_ppm(dir / "a.ppm", 4, 4, 1);
    CHECK_THROWS_AS(data::ingest_images(dir, 8, 8), ConfigError);
  }
  SUBCASE("unreadable files are listed") {
    const auto dir = scratch("unreadable");
    write_solid_ppm(dir / "a.ppm", 4, 4, 1);
    io::write_file_atomic(dir / "x.ppm", "P5\n1 1\n255\n\0");
    io::write_file_atomic(dir / "y.ppm", "garbage");
    try {
      data::ingest_images(dir);
      FAIL("expected an error");
    } catch (const FormatError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("x.ppm") != std::string::npos);
      CHECK(msg.find("y.ppm") != std::string::npos);
    }
  }
}

TEST_CASE("synth_dataset") {
  const auto a = data::synth_dataset(7, 256, 16, 16);
  const auto b = data::synth_dataset(7, 256, 16, 16);
  REQUIRE(a.size() == 256);
  a.validate();

  SUBCASE("same seed gives a bit-identical dataset") {
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.images[i].values() == b.images[i].values());
    CHECK(a.splits == b.splits);
  }
  SUBCASE("different seed differs") {
    const auto c = data::synth_dataset(8, 4, 16, 16);
    CHECK(c.images[0].values() != a.images[0].values());
  }
  SUBCASE("every image has non-zero variance in each channel") {
    for (const auto& img : a.images) {
      for (std::size_t c = 0; c < 3; ++c) {
        double s = 0.0, ss = 0.0;
        const std::size_t n = 16 * 16;
        for (std::size_t i = 0; i < n; ++i) {
          const double v = img[i * 3 + c];
          s += v;
          ss += v * v;
        }
        CHECK(ss / n - (s / n) * (s / n) > 0.0);
      }
    }
  }
  SUBCASE("histogram spans at least 100 distinct values") {
    std::set<float> distinct;
    for (const auto& img : a.images)
      for (float v : img.data()) distinct.insert(v);
    CHECK(distinct.size() >= 100);
    for (float v : distinct) CHECK(v == std::round(v));
  }
  SUBCASE("held-out split is non-empty and disjoint") {
    const auto tr = a.indices(data::Split::Train), ev = a.indices(data::Split::Eval);
    CHECK(!ev.empty());
    CHECK(tr.size() + ev.size() == a.size());
  }
  SUBCASE("n = 0 is rejected") { CHECK_THROWS_AS(data::synth_dataset(1, 0, 8, 8), ConfigError); }
  SUBCASE("batch maps to the model domain") {
    const std::size_t idx[] = {3};
    const auto batch = a.batch(idx);
    CHECK(batch.shape() == ad::Shape{1, 16, 16, 3});
    CHECK(batch[5] == doctest::Approx(a.images[3][5] / 255.0f - 0.5f));
  }
}

TEST_CASE("train") {
  const auto ds = data::synth_dataset(3, 40, 8, 8);

  SUBCASE("0 epochs leaves parameters unchanged") {
    flow::FlowModel m(tiny(), 4);
    const auto before = checkpoint_bytes(m);
    train::TrainConfig tc;
    tc.epochs = 0;
    const auto r = train::train(m, ds, tc);
    CHECK(r.curve.empty());
    CHECK(checkpoint_bytes(m) == before);
  }
  SUBCASE("loss curve length is epochs x batches per epoch") {
    flow::FlowModel m(tiny(), 4);
    train::TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 8;
    const auto r = train::train(m, ds, tc);
    const std::size_t n_train = ds.indices(data::Split::Train).size();
    CHECK(r.curve.size() == 3 * ((n_train + 7) / 8));
    CHECK(r.curve.back().epoch == 2);
    for (const auto& p : r.curve) CHECK(std::isfinite(p.nll_bits_per_dim));
  }
  SUBCASE("same seed gives identical checkpoint bytes") {
    flow::FlowModel a(tiny(), 4), b(tiny(), 4);
    train::TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 8;
    tc.seed = 9;
    train::train(a, ds, tc);
    train::train(b, ds, tc);
    CHECK(checkpoint_bytes(a) == checkpoint_bytes(b));
  }
  SUBCASE("parameters no longer require grad after training") {
    flow::FlowModel m(tiny(), 4);
    train::TrainConfig tc;
    tc.epochs = 1;
    train::train(m, ds, tc);
    for (const auto& p : m.parameters()) CHECK_FALSE(p.tensor.requires_grad());
  }
  SUBCASE("checkpoints are written at the interval") {
    const auto dir = scratch("ckpt");
    flow::FlowModel m(tiny(), 4);
    train::TrainConfig tc;
    tc.epochs = 2;
    tc.checkpoint_interval = 1;
    tc.checkpoint_path = dir / "m.gsfw";
    train::train(m, ds, tc);
    REQUIRE(fs::exists(tc.checkpoint_path));
    std::ostringstream ss(std::ios::binary);
    flow::save_checkpoint(flow::load_checkpoint(tc.checkpoint_path), ss);
    CHECK(ss.str() == checkpoint_bytes(m));
  }
  SUBCASE("NaN loss aborts and keeps the last good parameters") {
    const auto dir = scratch("nan");
    flow::FlowModel m(tiny(), 4);
    train::TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 8;
    tc.checkpoint_path = dir / "last_good.gsfw";
    std::string good;
    auto poison = [&](const train::LossPoint& p) {
      if (p.step != 1) return;
      good = checkpoint_bytes(m);
      m.levels()[1][0].coupling.conv2_bias.data()[0] = std::nanf("");
    };
    CHECK_THROWS_AS(train::train(m, ds, tc, poison), NumericError);
    REQUIRE(!good.empty());
    CHECK(checkpoint_bytes(m) == good);
    REQUIRE(fs::exists(tc.checkpoint_path));
    CHECK(checkpoint_bytes(flow::load_checkpoint(tc.checkpoint_path)) == good);
  }
  SUBCASE("dim mismatch is rejected") {
    flow::FlowModel m({16, 16, 2, 1, 4}, 4);
    train::TrainConfig tc;
    tc.epochs = 1;
    CHECK_THROWS_AS(train::train(m, ds, tc), ConfigError);
  }
  SUBCASE("invalid config is rejected") {
    train::TrainConfig tc;
    tc.batch_size = 0;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    tc.batch_size = 4;
    tc.learning_rate = 0.0f;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
  }
}

TEST_CASE("training on the synthetic set") {
  const auto& f = testing::trained_fixture();
  SUBCASE("held-out bits per dim drop by at least 0.5") {
    MESSAGE("eval bits/dim " << f.initial_bpd << " -> " << f.final_bpd);
    CHECK(f.initial_bpd - f.final_bpd >= 0.5);
  }
  SUBCASE("bits per dim finite for every eval image") {
    ad::NoGradScope no_grad;
    const auto ll = f.model.log_likelihood(f.dataset.batch(data::Split::Eval));
    for (float v : ll.data()) CHECK(std::isfinite(flow::bits_per_dim(v, f.model.config().pixel_dims())));
  }
  SUBCASE("round trip stays below 1e-4 after training") {
    ad::NoGradScope no_grad;
    const auto x = f.dataset.batch(data::Split::Eval);
    const auto back = f.model.inverse(f.model.forward(x).latent);
    float worst = 0.0f;
    for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::fabs(back[i] - x[i]));
    CHECK(worst < 1e-4f);
  }
}

TEST_CASE("round trip stays below 1e-4 during training") {
  const auto ds = data::synth_dataset(5, 64, 16, 16);
  flow::FlowModel m({16, 16, 3, 2, 16}, 2);
  const auto x = ds.batch(data::Split::Eval);
  train::TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 16;
  float worst = 0.0f;
  train::train(m, ds, tc, [&](const train::LossPoint&) {
    ad::NoGradScope no_grad;
    const auto back = m.inverse(m.forward(x).latent);
    for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::fabs(back[i] - x[i]));
  });
  CHECK(worst < 1e-4f);
}
