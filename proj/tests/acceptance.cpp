// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "flow_testing.hpp"
#include "gradcheck.hpp"
#include "gsf/binary_io.hpp"
#include "gsf/cli.hpp"
#include "gsf/experiment.hpp"
#include "op_cases.hpp"
#include "trained_fixture.hpp"

using namespace gsf;
using ad::Tensor;
using channel::ChannelKind;
using codec::BitPlan;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

float max_abs_diff(const Tensor& a, const Tensor& b) {
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Tensor references(std::size_t first, std::size_t n = 3) {
  const auto& f = testing::trained_fixture();
  const auto idx = f.dataset.indices(data::Split::Eval);
  return f.dataset.batch(std::vector<std::size_t>(idx.begin() + first, idx.begin() + first + n));
}

std::vector<double> gaussian(Rng& rng, std::size_t n, double mean) {
  std::normal_distribution<double> d(mean, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

Verdict bijectivity() {
  Verdict v;
  const auto t_train = Clock::now();
  const auto& f = testing::trained_fixture();
  v.note(fmt::format("model trained in {:.1f}s", seconds_since(t_train)));

  const auto t0 = Clock::now();
  const Tensor eval = f.dataset.batch(data::Split::Eval);
  v.require(eval.dim(0) == 64, "64 eval images");
  ad::NoGradScope no_grad;
  const float image_err = max_abs_diff(f.model.inverse(f.model.forward(eval).latent), eval);

  Rng rng(101);
  const auto z = f.model.sample(0.7f, rng, 64).latent;
  const auto back = f.model.forward(f.model.inverse(z)).latent;
  float latent_err = 0.0f;
  for (std::size_t l = 0; l < z.levels.size(); ++l) latent_err = std::max(latent_err, max_abs_diff(z.levels[l], back.levels[l]));
  const double secs = seconds_since(t0);

  v.note(fmt::format("image max err {:.2e}, latent max err {:.2e}, {:.2f}s", image_err, latent_err, secs));
  v.require(image_err < 1e-4f, "image round trip < 1e-4");
  v.require(latent_err < 1e-4f, "latent round trip < 1e-4");
  v.require(secs < 60.0, "round trips under 1 min");
  return v;
}

Verdict logdet() {
  Verdict v;
  flow::FlowModel model({4, 4, 2, 2, 8}, 71);
  testing::perturb(model, 72);
  Rng rng(73);
  double worst = 0.0;
  for (int i = 0; i < 8; ++i) {
    const Tensor x = uniform_tensor({1, 4, 4, 3}, rng, -0.5f, 0.5f);
    double analytic;
    {
      ad::NoGradScope no_grad;
      analytic = model.forward(x).logdet[0];
    }
    const double numeric = testing::numeric_log_abs_det(
        [&](const Tensor& t) { return testing::flatten_latent(model.forward(t).latent); }, x);
    worst = std::max(worst, std::fabs(analytic - numeric));
  }
  v.note(fmt::format("max |analytic - numeric| {:.2e} over 8 inputs", worst));
  v.require(worst < 1e-2, "within 1e-2");
  return v;
}

Verdict gradcheck() {
  Verdict v;
  double worst_op = 0.0;
  std::string worst_name;
  std::size_t count = 0;
  for (auto& c : testing::op_cases()) {
    const double e = testing::gradcheck(c.f, c.inputs).relative_error;
    ++count;
    if (e >= worst_op) worst_op = e, worst_name = c.name;
  }
  v.note(fmt::format("{} ops, worst {} at {:.2e}", count, worst_name, worst_op));
  v.require(worst_op < testing::kOpTolerance, "op gradchecks < 1e-3");

  const auto& f = testing::trained_fixture();
  const auto& a = testing::assessor_fixture().trained.assessor;
  double worst_z = 0.0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Tensor refs = references(3 * seed);
    float mean_real = 0.0f;
    {
      ad::NoGradScope no_grad;
      const Tensor s = a.score(refs);
      for (float x : s.data()) mean_real += x / 3.0f;
    }
    auto z = opt::init_latent(f.model, refs);
    for (auto& l : z.levels) l.set_requires_grad(true);
    {
      ad::Tape tape;
      ad::GradScope scope(tape);
      tape.backward(opt::diff_of_latent(f.model, a, mean_real, z));
    }
    for (auto& l : z.levels) l.set_requires_grad(false);

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
    worst_z = std::max(worst_z, testing::relative_error(analytic, numeric));
  }
  v.note(fmt::format("grad of Diff wrt Z worst {:.2e} over 3 seeds", worst_z));
  v.require(worst_z < 1e-2, "grad of Diff wrt Z < 1e-2");
  return v;
}

Verdict codec_exactness() {
  Verdict v;
  const flow::FlowModel shapes_only({16, 16, 3, 1, 4}, 0);
  const std::size_t floats = shapes_only.zero_latent(1).element_count();
  Rng rng(202);
  std::size_t bit_errors = 0, exponent_changes = 0;
  const char* plans[] = {"S", "S,0:22", "14:22", "22:22"};
  for (int trial = 0; trial < 1000; ++trial) {
    const auto plan = BitPlan::parse(plans[trial % 4]);
    auto z = shapes_only.zero_latent(1);
    for (auto& l : z.levels) l = normal_tensor(l.shape(), rng, 0.7f);
    const std::size_t cap = codec::plan_capacity(plan, floats, 16, 16).bits;
    const auto secret = codec::Payload::random(std::uniform_int_distribution<std::size_t>(1, cap)(rng), rng);
    const auto stego = codec::embed(z, secret, plan);
    const auto got = codec::extract(stego, plan, secret.size());
    for (std::size_t i = 0; i < secret.size(); ++i) bit_errors += got.bits[i] != secret.bits[i];
    const auto before = codec::LatentBitImage::from_latent(z).words;
    const auto after = codec::LatentBitImage::from_latent(stego).words;
    for (std::size_t i = 0; i < before.size(); ++i)
      exponent_changes += (before[i] & codec::kExponentMask) != (after[i] & codec::kExponentMask);
  }
  v.note(fmt::format("1000 trials: {} bit errors, {} exponent changes", bit_errors, exponent_changes));
  v.require(bit_errors == 0, "zero bit errors");
  v.require(exponent_changes == 0, "exponent bits untouched");

  const std::pair<const char*, double> table[] = {{"S", 3.0}, {"S,0:22", 72.0}, {"14:22", 27.0}, {"0:22", 69.0}};
  std::string got;
  for (const auto& [text, bpp] : table) {
    const double b = codec::plan_capacity(BitPlan::parse(text), floats, 16, 16).bpp;
    got += fmt::format("{}{}={}", got.empty() ? "" : " ", text, b);
    v.require(b == bpp, fmt::format("{} -> {} bpp", text, bpp));
  }
  v.note("bpp " + got);
  return v;
}

const std::vector<exp::ExperimentRow>& table_rows() {
  static const auto rows = [] {
    exp::TableConfig c;
    for (const char* p : {"S", "22:22", "14:22", "0:22", "S,0:22"}) c.plans.push_back(BitPlan::parse(p));
    c.channels = {ChannelKind::Float32, ChannelKind::QuantizedU8};
    c.sources = {exp::LatentSource::Random};
    c.trials = 32;
    c.seed = 303;
    return exp::run_table(testing::trained_fixture().model, c);
  }();
  return rows;
}

double acc_of(const std::string& plan, const std::string& ch) {
  for (const auto& r : table_rows())
    if (r.plan == plan && r.channel == ch) return *r.acc_mean;
  throw std::logic_error("missing table row " + plan + " " + ch);
}

Verdict channel_ordering() {
  Verdict v;
  std::string summary;
  for (const char* p : {"S", "22:22", "14:22", "0:22", "S,0:22"}) {
    const double fl = acc_of(p, "float"), q = acc_of(p, "u8");
    summary += fmt::format("{}{} {:.3f}/{:.3f}", summary.empty() ? "" : ", ", p, fl, q);
    v.require(fl >= q, fmt::format("{}: float >= u8", p));
  }
  v.note("float/u8 Acc over 32 trials: " + summary);
  v.require(acc_of("22:22", "float") >= acc_of("0:22", "float") - 0.02, "22:22 >= 0:22 - 0.02 (float)");
  return v;
}

Verdict high_plane() {
  Verdict v;
  const double a = acc_of("22:22", "float");
  v.note(fmt::format("plan 22:22 float Acc {:.4f} over 32 trials, unrestricted", a));
  v.require(a >= 0.95, ">= 0.95");
  return v;
}

Verdict optimizer() {
  Verdict v;
  const auto& f = testing::trained_fixture();
  const auto& a = testing::assessor_fixture().trained.assessor;
  std::size_t ok = 0;
  for (std::size_t seed = 0; seed < 8; ++seed) {
    opt::OptConfig c;
    c.thresh = 0.0f;
    const auto r = opt::optimize_latent(f.model, a, references(3 * seed), c);
    std::vector<double> q1, q4;
    for (std::size_t i = 0; i < 25; ++i) q1.push_back(r.trace[i].diff);
    for (std::size_t i = 75; i < 100; ++i) q4.push_back(r.trace[i].diff);
    ok += r.trace.size() == 100 && median(q4) <= median(q1);
  }
  v.note(fmt::format("last-quartile median <= first-quartile median on {}/8 seeds", ok));
  v.require(ok == 8, "all 8 seeds");

  const Tensor refs = references(0);
  const auto first = opt::optimize_latent(f.model, a, refs, {1e-3f, 1, 0.0f, 3});
  opt::OptConfig c;
  c.thresh = static_cast<float>(first.trace.front().diff) + 1.0f;
  const auto r = opt::optimize_latent(f.model, a, refs, c);
  v.note(fmt::format("thresh above initial Diff: {} step(s), early_exit={}", r.trace.size(), r.early_exit));
  v.require(r.early_exit && r.trace.size() == 1, "early exit at step 1");
  return v;
}

Verdict pe_oracle() {
  Verdict v;
  Rng rng(404);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 20; ++trial) {
    auto cover = gaussian(rng, 1 + rng() % 500, 0.0), stego = gaussian(rng, 1 + rng() % 500, 0.25 * (trial % 6));
    if (trial % 2)
      for (auto* s : {&cover, &stego})
        for (double& x : *s) x = std::round(x * 4.0) / 4.0;
    std::vector<double> ts{-std::numeric_limits<double>::infinity()};
    ts.insert(ts.end(), cover.begin(), cover.end());
    ts.insert(ts.end(), stego.begin(), stego.end());
    double brute = 1.0;
    for (double t : ts) {
      std::size_t fa = 0, md = 0;
      for (double s : cover) fa += s > t;
      for (double s : stego) md += !(s > t);
      brute = std::min(brute, 0.5 * (static_cast<double>(fa) / static_cast<double>(cover.size()) +
                                     static_cast<double>(md) / static_cast<double>(stego.size())));
    }
    mismatches += stega::pe_from_scores(cover, stego).pe != brute;
  }
  v.note(fmt::format("sweep vs brute force: {} mismatches in 20 sets", mismatches));
  v.require(mismatches == 0, "exact agreement");

  const double pe = stega::pe_from_scores(gaussian(rng, 20000, 0.0), gaussian(rng, 20000, 2.0)).pe;
  v.note(fmt::format("N(0,1) vs N(2,1): PE {:.4f} (closed form 0.1587)", pe));
  v.require(std::fabs(pe - 0.1587) <= 0.02, "Gaussian PE within 0.02");
  return v;
}

Verdict steganalysis() {
  Verdict v;
  exp::SteganalysisConfig c;
  c.plan = BitPlan::parse("none");
  c.seed = 505;
  const auto r = exp::run_steganalysis(testing::trained_fixture().model, c);
  v.note(fmt::format("held-out PE {:.4f} on {}+{} images, zero payload", r.pe, r.cover_count, r.stego_count));
  v.require(r.pe >= 0.45, "PE >= 0.45");
  return v;
}

Verdict reproducibility() {
  Verdict v;
  const fs::path root = fs::temp_directory_path() / "gsf_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);
  flow::save_checkpoint(testing::trained_fixture().model, root / "checkpoint.gsfw");

  auto evaluate = [&](const std::string& out) {
    cli::RunConfig c;
    c.checkpoint = (root / "checkpoint.gsfw").string();
    c.seed = 606;
    c.trials = 8;
    c.stego_count = 400;
    c.out = (root / out).string();
    fs::create_directories(c.out);
    c.validate();
    std::ostringstream log;
    cli::cmd_evaluate(c, log);
  };
  evaluate("a");
  evaluate("b");
  for (const char* name : {"table.csv", "pe.csv", "roc.csv"}) {
    const bool same = io::read_file(root / "a" / name) == io::read_file(root / "b" / name);
    v.require(same, fmt::format("{} byte-identical", name));
  }
  v.note("table.csv, pe.csv, roc.csv compared byte for byte across two runs");
  return v;
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"bijectivity of the trained 16x16x3 L=3 model", bijectivity},
      {"log-det matches dense Jacobian on 4x4x3", logdet},
      {"gradchecks (ops and Diff wrt Z)", gradcheck},
      {"codec exactness and capacity", codec_exactness},
      {"channel ordering", channel_ordering},
      {"high-plane reliability", high_plane},
      {"latent optimizer behavior", optimizer},
      {"PE oracle", pe_oracle},
      {"steganalysis sanity at zero payload", steganalysis},
      {"evaluate reproducibility", reproducibility},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    failures += !v.pass;
    std::cout << fmt::format("{} criterion {}: {} ({})\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, v.detail)
              << std::flush;
  }
  std::cout << fmt::format("{}/{} criteria passed in {:.1f}s\n", criteria.size() - failures, criteria.size(),
                           seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
