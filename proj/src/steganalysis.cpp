#include "gsf/steganalysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "gsf/dataset.hpp"
#include "gsf/error.hpp"

namespace gsf::stega {

namespace {

constexpr std::size_t kFeaturesPerChannel = 5;

void check_scores(std::span<const double> s, const char* what) {
  if (s.empty()) throw ConfigError(fmt::format("pe: {} set is empty", what));
  for (double v : s)
    if (!std::isfinite(v)) throw NumericError(fmt::format("pe: non-finite {} score", what));
}

void check_batch(const ad::Tensor& t, const char* what) {
  if (t.rank() != 4 || t.dim(3) != 3 || t.dim(0) == 0) {
    throw ConfigError(fmt::format("steganalyzer: {} must be a non-empty (N,H,W,3) batch, got {}", what,
                                  ad::shape_string(t.shape())));
  }
  if (t.dim(1) < 3 || t.dim(2) < 3) throw ConfigError("steganalyzer: images must be at least 3x3");
}

std::vector<std::vector<double>> batch_features(const ad::Tensor& images) {
  const std::size_t n = images.dim(0), h = images.dim(1), w = images.dim(2);
  const std::size_t per = h * w * 3;
  std::vector<std::vector<double>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(residual_features(images.data().subspan(i * per, per), h, w));
  return out;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

PeReport pe_from_scores(std::span<const double> cover, std::span<const double> stego) {
  check_scores(cover, "cover");
  check_scores(stego, "stego");
  struct Tagged {
    double score;
    bool stego;
  };
  std::vector<Tagged> all;
  all.reserve(cover.size() + stego.size());
  for (double s : cover) all.push_back({s, false});
  for (double s : stego) all.push_back({s, true});
  std::sort(all.begin(), all.end(), [](const Tagged& a, const Tagged& b) { return a.score < b.score; });

  PeReport r;
  r.cover_count = cover.size();
  r.stego_count = stego.size();
  const double nc = static_cast<double>(cover.size()), ns = static_cast<double>(stego.size());

  // Counts of samples at or below the current threshold.
  std::size_t cover_below = 0, stego_below = 0;
  auto push = [&](double threshold) {
    const double p_fa = static_cast<double>(cover.size() - cover_below) / nc;
    const double p_md = static_cast<double>(stego_below) / ns;
    r.sweep.push_back({threshold, p_fa, p_md});
  };
  push(-std::numeric_limits<double>::infinity());

  double auc = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i, c = 0, s = 0;
    for (; j < all.size() && all[j].score == all[i].score; ++j) (all[j].stego ? s : c)++;
    auc += static_cast<double>(s) * (static_cast<double>(cover_below) + 0.5 * static_cast<double>(c));
    cover_below += c;
    stego_below += s;
    push(j < all.size() ? 0.5 * (all[i].score + all[j].score) : all[i].score);
    i = j;
  }
  r.auc = auc / (nc * ns);

  r.pe = std::numeric_limits<double>::infinity();
  for (const auto& p : r.sweep) {
    const double pe = 0.5 * (p.p_fa + p.p_md);
    if (pe < r.pe) {
      r.pe = pe;
      r.threshold = p.threshold;
    }
  }
  return r;
}

std::vector<double> residual_features(std::span<const float> image, std::size_t height, std::size_t width) {
  if (image.size() != height * width * 3) throw ShapeError("residual_features: size does not match (H,W,3)");
  std::vector<double> f;
  f.reserve(3 * kFeaturesPerChannel);
  auto px = [&](std::size_t y, std::size_t x, std::size_t c) {
    return 255.0 * static_cast<double>(image[(y * width + x) * 3 + c]);
  };
  for (std::size_t c = 0; c < 3; ++c) {
    double sum_abs = 0.0, sum = 0.0, sum_sq = 0.0;
    std::size_t below[3] = {0, 0, 0}, count = 0;
    for (std::size_t y = 1; y + 1 < height; ++y) {
      for (std::size_t x = 1; x + 1 < width; ++x) {
        const double r = 4.0 * px(y, x, c) - px(y - 1, x, c) - px(y + 1, x, c) - px(y, x - 1, c) - px(y, x + 1, c);
        const double a = std::fabs(r);
        sum_abs += a;
        sum += r;
        sum_sq += r * r;
        below[0] += a < 0.5;
        below[1] += a < 1.5;
        below[2] += a < 4.0;
        ++count;
      }
    }
    const double n = static_cast<double>(count);
    const double mean = sum / n;
    f.push_back(sum_abs / n);
    f.push_back(std::sqrt(std::max(0.0, sum_sq / n - mean * mean)));
    for (std::size_t b : below) f.push_back(static_cast<double>(b) / n);
  }
  return f;
}

Steganalyzer Steganalyzer::train(const ad::Tensor& cover, const ad::Tensor& stego, const SteganalyzerConfig& config) {
  check_batch(cover, "cover");
  check_batch(stego, "stego");
  if (cover.dim(1) != stego.dim(1) || cover.dim(2) != stego.dim(2)) {
    throw ShapeError("steganalyzer: cover and stego dims differ");
  }
  auto x = batch_features(cover);
  const std::size_t n_cover = x.size();
  for (auto& f : batch_features(stego)) x.push_back(std::move(f));
  const std::size_t n = x.size(), d = x.front().size();

  Steganalyzer m;
  m.mean_.assign(d, 0.0);
  m.scale_.assign(d, 0.0);
  for (const auto& row : x)
    for (std::size_t k = 0; k < d; ++k) m.mean_[k] += row[k] / static_cast<double>(n);
  for (const auto& row : x)
    for (std::size_t k = 0; k < d; ++k) m.scale_[k] += (row[k] - m.mean_[k]) * (row[k] - m.mean_[k]) / static_cast<double>(n);
  for (double& s : m.scale_) s = s > 1e-24 ? 1.0 / std::sqrt(s) : 0.0;
  for (auto& row : x)
    for (std::size_t k = 0; k < d; ++k) row[k] = (row[k] - m.mean_[k]) * m.scale_[k];

  m.weight_.assign(d, 0.0);
  std::vector<double> grad(d);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double grad_b = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double y = i < n_cover ? 0.0 : 1.0;
      const double p = sigmoid(std::inner_product(x[i].begin(), x[i].end(), m.weight_.begin(), m.bias_));
      for (std::size_t k = 0; k < d; ++k) grad[k] += (p - y) * x[i][k];
      grad_b += p - y;
    }
    for (std::size_t k = 0; k < d; ++k) {
      m.weight_[k] -= config.learning_rate * (grad[k] / static_cast<double>(n) + config.l2 * m.weight_[k]);
    }
    m.bias_ -= config.learning_rate * grad_b / static_cast<double>(n);
  }
  return m;
}

double Steganalyzer::score_features(std::span<const double> features) const {
  double s = bias_;
  for (std::size_t k = 0; k < weight_.size(); ++k) s += weight_[k] * (features[k] - mean_[k]) * scale_[k];
  return s;
}

std::vector<double> Steganalyzer::scores(const ad::Tensor& images) const {
  check_batch(images, "input");
  std::vector<double> out;
  for (const auto& f : batch_features(images)) out.push_back(score_features(f));
  return out;
}

PeReport heldout_pe(const ad::Tensor& cover, const ad::Tensor& stego, const SteganalyzerConfig& config) {
  check_batch(cover, "cover");
  check_batch(stego, "stego");
  if (cover.dim(0) < 2 || stego.dim(0) < 2) throw ConfigError("heldout_pe: need at least 2 images per class");
  auto half = [](const ad::Tensor& t, bool second) {
    const std::size_t n = t.dim(0), mid = n / 2;
    return second ? data::take_rows(t, mid, n) : data::take_rows(t, 0, mid);
  };
  const auto model = Steganalyzer::train(half(cover, false), half(stego, false), config);
  const auto sc = model.scores(half(cover, true));
  const auto ss = model.scores(half(stego, true));
  return pe_from_scores(sc, ss);
}

}  // namespace gsf::stega
