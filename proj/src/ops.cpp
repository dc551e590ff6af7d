#include "gsf/ops.hpp"

#include <cmath>
#include <initializer_list>
#include <utility>

#include <fmt/format.h>

#include "gsf/error.hpp"

namespace gsf::ad {

namespace {

Tensor finish(Shape shape, std::vector<float> values, std::initializer_list<const Tensor*> inputs,
              Tape::BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  if (Tape* tape = active_tape()) {
    bool any = false;
    for (const Tensor* in : inputs) {
      const auto& n = in->node();
      if (n->requires_grad || (n->tape_serial != 0 && n->tape_serial == tape->serial())) any = true;
    }
    if (any) {
      std::vector<std::shared_ptr<Node>> nodes;
      nodes.reserve(inputs.size());
      for (const Tensor* in : inputs) nodes.push_back(in->node());
      tape->record(std::move(nodes), node, std::move(backward));
    }
  }
  return make_tensor(std::move(node));
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", op, shape_string(a.shape()),
                                 shape_string(b.shape())));
  }
}

void require_rank(const char* op, const Tensor& x, std::size_t rank) {
  if (x.rank() != rank) {
    throw ShapeError(
        fmt::format("{}: expected rank {}, got shape {}", op, rank, shape_string(x.shape())));
  }
}

template <typename F, typename D>
Tensor unary(const Tensor& x, F f, D dfdx) {
  std::vector<float> out(x.size());
  const float* xs = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xs[i]);
  return finish(x.shape(), std::move(out), {&x},
                [dfdx](const Node& o, std::span<Node* const> in) {
                  float* g = grad_target(o, in[0]);
                  if (!g) return;
                  const float* xv = in[0]->data.data();
                  const float* yv = o.data.data();
                  for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * dfdx(xv[i], yv[i]);
                });
}

std::size_t channels_of(const Tensor& x) { return x.shape().empty() ? 1 : x.shape().back(); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  std::vector<float> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return finish(a.shape(), std::move(out), {&a, &b}, [](const Node& o, std::span<Node* const> in) {
    for (int k = 0; k < 2; ++k) {
      if (float* g = grad_target(o, in[k])) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  std::vector<float> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return finish(a.shape(), std::move(out), {&a, &b}, [](const Node& o, std::span<Node* const> in) {
    if (float* g = grad_target(o, in[0])) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
    if (float* g = grad_target(o, in[1])) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  std::vector<float> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return finish(a.shape(), std::move(out), {&a, &b}, [](const Node& o, std::span<Node* const> in) {
    const auto& av = in[0]->data;
    const auto& bv = in[1]->data;
    if (float* g = grad_target(o, in[0])) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * bv[i];
    }
    if (float* g = grad_target(o, in[1])) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * av[i];
    }
  });
}

Tensor neg(const Tensor& x) { return mul_scalar(x, -1.0f); }

Tensor abs(const Tensor& x) {
  return unary(
      x, [](float v) { return std::fabs(v); },
      [](float v, float) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](float v) { return std::tanh(v); }, [](float, float y) { return 1.0f - y * y; });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, [](float v) { return std::exp(v); }, [](float, float y) { return y; });
}

Tensor log(const Tensor& x) {
  for (float v : x.data()) {
    if (!(v > 0.0f)) throw NumericError(fmt::format("log: non-positive input {}", v));
  }
  return unary(
      x, [](float v) { return std::log(v); }, [](float v, float) { return 1.0f / v; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](float v) { return v > 0.0f ? v : 0.0f; },
      [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

Tensor softplus(const Tensor& x) {
  return unary(
      x,
      [](float v) {
        return v > 0.0f ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
      },
      [](float v, float) {
        return v >= 0.0f ? 1.0f / (1.0f + std::exp(-v)) : std::exp(v) / (1.0f + std::exp(v));
      });
}

Tensor square(const Tensor& x) {
  return unary(
      x, [](float v) { return v * v; }, [](float v, float) { return 2.0f * v; });
}

Tensor add_scalar(const Tensor& x, float c) {
  return unary(
      x, [c](float v) { return v + c; }, [](float, float) { return 1.0f; });
}

Tensor mul_scalar(const Tensor& x, float c) {
  return unary(
      x, [c](float v) { return v * c; }, [c](float, float) { return c; });
}

Tensor broadcast_scalar(const Tensor& s, const Shape& shape) {
  if (s.size() != 1) {
    throw ShapeError(fmt::format("broadcast_scalar: operand shape {} is not a scalar",
                                 shape_string(s.shape())));
  }
  std::vector<float> out(element_count(shape), s[0]);
  return finish(shape, std::move(out), {&s}, [](const Node& o, std::span<Node* const> in) {
    if (float* g = grad_target(o, in[0])) {
      float acc = 0.0f;
      for (float v : o.grad) acc += v;
      g[0] += acc;
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError(fmt::format("matmul: inner dims differ, {} x {}", shape_string(a.shape()),
                                 shape_string(b.shape())));
  }
  std::vector<float> out(m * n, 0.0f);
  const float* av = a.data().data();
  const float* bv = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    float* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float s = av[i * k + p];
      const float* brow = bv + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  return finish({m, n}, std::move(out), {&a, &b},
                [m, k, n](const Node& o, std::span<Node* const> in) {
                  const float* go = o.grad.data();
                  const float* av = in[0]->data.data();
                  const float* bv = in[1]->data.data();
                  if (float* ga = grad_target(o, in[0])) {
                    // ga = go * b^T
                    for (std::size_t i = 0; i < m; ++i) {
                      for (std::size_t p = 0; p < k; ++p) {
                        float acc = 0.0f;
                        for (std::size_t j = 0; j < n; ++j) acc += go[i * n + j] * bv[p * n + j];
                        ga[i * k + p] += acc;
                      }
                    }
                  }
                  if (float* gb = grad_target(o, in[1])) {
                    // gb = a^T * go
                    for (std::size_t i = 0; i < m; ++i) {
                      for (std::size_t p = 0; p < k; ++p) {
                        const float s = av[i * k + p];
                        float* grow = gb + p * n;
                        const float* gorow = go + i * n;
                        for (std::size_t j = 0; j < n; ++j) grow[j] += s * gorow[j];
                      }
                    }
                  }
                });
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<float> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return finish({c, r}, std::move(out), {&a}, [r, c](const Node& o, std::span<Node* const> in) {
    if (float* g = grad_target(o, in[0])) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[j * r + i];
    }
  });
}

Tensor diag(const Tensor& v) {
  require_rank("diag", v, 1);
  const std::size_t n = v.dim(0);
  std::vector<float> out(n * n, 0.0f);
  for (std::size_t i = 0; i < n; ++i) out[i * n + i] = v[i];
  return finish({n, n}, std::move(out), {&v}, [n](const Node& o, std::span<Node* const> in) {
    if (float* g = grad_target(o, in[0])) {
      for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[i * n + i];
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", weight, 4);
  const std::size_t N = x.dim(0), H = x.dim(1), W = x.dim(2), Ci = x.dim(3);
  const std::size_t KH = weight.dim(0), KW = weight.dim(1), Co = weight.dim(3);
  if (weight.dim(2) != Ci || KH % 2 == 0 || KW % 2 == 0) {
    throw ShapeError(fmt::format("conv2d: weight {} incompatible with input {}",
                                 shape_string(weight.shape()), shape_string(x.shape())));
  }
  if (bias.shape() != Shape{Co}) {
    throw ShapeError(fmt::format("conv2d: bias {} does not match {} output channels",
                                 shape_string(bias.shape()), Co));
  }
  const long ph = static_cast<long>(KH / 2), pw = static_cast<long>(KW / 2);
  std::vector<float> out(N * H * W * Co);
  const float* xv = x.data().data();
  const float* wv = weight.data().data();
  const float* bv = bias.data().data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t xx = 0; xx < W; ++xx) {
        float* o = out.data() + ((n * H + y) * W + xx) * Co;
        for (std::size_t co = 0; co < Co; ++co) o[co] = bv[co];
        for (std::size_t ky = 0; ky < KH; ++ky) {
          const long iy = static_cast<long>(y) + static_cast<long>(ky) - ph;
          if (iy < 0 || iy >= static_cast<long>(H)) continue;
          for (std::size_t kx = 0; kx < KW; ++kx) {
            const long ix = static_cast<long>(xx) + static_cast<long>(kx) - pw;
            if (ix < 0 || ix >= static_cast<long>(W)) continue;
            const float* in = xv + ((n * H + static_cast<std::size_t>(iy)) * W +
                                    static_cast<std::size_t>(ix)) * Ci;
            const float* wk = wv + (ky * KW + kx) * Ci * Co;
            for (std::size_t ci = 0; ci < Ci; ++ci) {
              const float a = in[ci];
              const float* wr = wk + ci * Co;
              for (std::size_t co = 0; co < Co; ++co) o[co] += a * wr[co];
            }
          }
        }
      }
    }
  }
  return finish(
      {N, H, W, Co}, std::move(out), {&x, &weight, &bias},
      [=](const Node& o, std::span<Node* const> in) {
        const float* go = o.grad.data();
        const float* xv = in[0]->data.data();
        const float* wv = in[1]->data.data();
        float* gx = grad_target(o, in[0]);
        float* gw = grad_target(o, in[1]);
        float* gb = grad_target(o, in[2]);
        std::vector<float> wt;
        if (gx) {
          // (kh,kw,Ci,Co) -> (kh,kw,Co,Ci) so the input-grad loop is an axpy
          wt.resize(KH * KW * Ci * Co);
          for (std::size_t k = 0; k < KH * KW; ++k)
            for (std::size_t ci = 0; ci < Ci; ++ci)
              for (std::size_t co = 0; co < Co; ++co)
                wt[(k * Co + co) * Ci + ci] = wv[(k * Ci + ci) * Co + co];
        }
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t xx = 0; xx < W; ++xx) {
              const float* g = go + ((n * H + y) * W + xx) * Co;
              if (gb) {
                for (std::size_t co = 0; co < Co; ++co) gb[co] += g[co];
              }
              for (std::size_t ky = 0; ky < KH; ++ky) {
                const long iy = static_cast<long>(y) + static_cast<long>(ky) - ph;
                if (iy < 0 || iy >= static_cast<long>(H)) continue;
                for (std::size_t kx = 0; kx < KW; ++kx) {
                  const long ix = static_cast<long>(xx) + static_cast<long>(kx) - pw;
                  if (ix < 0 || ix >= static_cast<long>(W)) continue;
                  const std::size_t pix =
                      ((n * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)) * Ci;
                  const std::size_t k = ky * KW + kx;
                  if (gw) {
                    const float* xin = xv + pix;
                    float* gwk = gw + k * Ci * Co;
                    for (std::size_t ci = 0; ci < Ci; ++ci) {
                      const float a = xin[ci];
                      float* gr = gwk + ci * Co;
                      for (std::size_t co = 0; co < Co; ++co) gr[co] += a * g[co];
                    }
                  }
                  if (gx) {
                    float* gxi = gx + pix;
                    const float* wtk = wt.data() + k * Co * Ci;
                    for (std::size_t co = 0; co < Co; ++co) {
                      const float s = g[co];
                      const float* wr = wtk + co * Ci;
                      for (std::size_t ci = 0; ci < Ci; ++ci) gxi[ci] += s * wr[ci];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  return finish({}, {static_cast<float>(acc)}, {&x}, [](const Node& o, std::span<Node* const> in) {
    if (float* g = grad_target(o, in[0])) {
      const float s = o.grad[0];
      for (std::size_t i = 0; i < in[0]->data.size(); ++i) g[i] += s;
    }
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  return mul_scalar(sum(x), 1.0f / static_cast<float>(x.size()));
}

Tensor sum_per_sample(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("sum_per_sample: scalar input has no batch axis");
  const std::size_t N = x.dim(0);
  const std::size_t per = N ? x.size() / N : 0;
  std::vector<float> out(N, 0.0f);
  for (std::size_t n = 0; n < N; ++n) {
    double acc = 0.0;
    const float* row = x.data().data() + n * per;
    for (std::size_t i = 0; i < per; ++i) acc += row[i];
    out[n] = static_cast<float>(acc);
  }
  return finish({N}, std::move(out), {&x}, [N, per](const Node& o, std::span<Node* const> in) {
    if (float* g = grad_target(o, in[0])) {
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < per; ++i) g[n * per + i] += o.grad[n];
    }
  });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (element_count(shape) != x.size()) {
    throw ShapeError(fmt::format("reshape: cannot view {} as {}", shape_string(x.shape()),
                                 shape_string(shape)));
  }
  return finish(shape, x.values(), {&x}, [](const Node& o, std::span<Node* const> in) {
    if (float* g = grad_target(o, in[0])) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
  });
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end) {
  const std::size_t C = channels_of(x);
  if (x.rank() == 0 || begin >= end || end > C) {
    throw ShapeError(fmt::format("slice_channels: range [{},{}) invalid for shape {}", begin, end,
                                 shape_string(x.shape())));
  }
  const std::size_t rows = x.size() / C, w = end - begin;
  std::vector<float> out(rows * w);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = x[r * C + begin + c];
  Shape shape = x.shape();
  shape.back() = w;
  return finish(shape, std::move(out), {&x},
                [rows, w, C, begin](const Node& o, std::span<Node* const> in) {
                  if (float* g = grad_target(o, in[0])) {
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < w; ++c) g[r * C + begin + c] += o.grad[r * w + c];
                  }
                });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() == 0 || a.rank() != b.rank() ||
      !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
    throw ShapeError(fmt::format("concat_channels: incompatible shapes {} and {}",
                                 shape_string(a.shape()), shape_string(b.shape())));
  }
  const std::size_t ca = channels_of(a), cb = channels_of(b), C = ca + cb;
  const std::size_t rows = a.size() / ca;
  std::vector<float> out(rows * C);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < ca; ++c) out[r * C + c] = a[r * ca + c];
    for (std::size_t c = 0; c < cb; ++c) out[r * C + ca + c] = b[r * cb + c];
  }
  Shape shape = a.shape();
  shape.back() = C;
  return finish(shape, std::move(out), {&a, &b},
                [rows, ca, cb, C](const Node& o, std::span<Node* const> in) {
                  if (float* g = grad_target(o, in[0])) {
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < ca; ++c) g[r * ca + c] += o.grad[r * C + c];
                  }
                  if (float* g = grad_target(o, in[1])) {
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < cb; ++c) g[r * cb + c] += o.grad[r * C + ca + c];
                  }
                });
}

namespace {

// Index map shared by squeeze and unsqueeze: entry i of the squeezed layout
// reads entry map[i] of the spatial layout.
std::vector<std::size_t> squeeze_map(std::size_t N, std::size_t H, std::size_t W, std::size_t C) {
  const std::size_t h = H / 2, w = W / 2, c4 = 4 * C;
  std::vector<std::size_t> map(N * H * W * C);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx)
            for (std::size_t c = 0; c < C; ++c) {
              const std::size_t dst = ((n * h + y) * w + x) * c4 + (dy * 2 + dx) * C + c;
              const std::size_t src = ((n * H + 2 * y + dy) * W + 2 * x + dx) * C + c;
              map[dst] = src;
            }
  return map;
}

}  // namespace

Tensor squeeze2x2(const Tensor& x) {
  require_rank("squeeze", x, 4);
  const std::size_t N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  if (H % 2 || W % 2) {
    throw ShapeError(fmt::format("squeeze: odd spatial dims in {}", shape_string(x.shape())));
  }
  auto map = squeeze_map(N, H, W, C);
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[map[i]];
  return finish({N, H / 2, W / 2, 4 * C}, std::move(out), {&x},
                [map = std::move(map)](const Node& o, std::span<Node* const> in) {
                  if (float* g = grad_target(o, in[0])) {
                    for (std::size_t i = 0; i < map.size(); ++i) g[map[i]] += o.grad[i];
                  }
                });
}

Tensor unsqueeze2x2(const Tensor& x) {
  require_rank("unsqueeze", x, 4);
  const std::size_t N = x.dim(0), h = x.dim(1), w = x.dim(2), C4 = x.dim(3);
  if (C4 % 4) {
    throw ShapeError(
        fmt::format("unsqueeze: channels not divisible by 4 in {}", shape_string(x.shape())));
  }
  auto map = squeeze_map(N, 2 * h, 2 * w, C4 / 4);
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < map.size(); ++i) out[map[i]] = x[i];
  return finish({N, 2 * h, 2 * w, C4 / 4}, std::move(out), {&x},
                [map = std::move(map)](const Node& o, std::span<Node* const> in) {
                  if (float* g = grad_target(o, in[0])) {
                    for (std::size_t i = 0; i < map.size(); ++i) g[i] += o.grad[map[i]];
                  }
                });
}

Tensor scale_channels(const Tensor& x, const Tensor& s) {
  const std::size_t C = channels_of(x);
  if (s.shape() != Shape{C}) {
    throw ShapeError(fmt::format("scale_channels: scale {} does not match input {}",
                                 shape_string(s.shape()), shape_string(x.shape())));
  }
  const std::size_t rows = x.size() / C;
  std::vector<float> out(x.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] = x[r * C + c] * s[c];
  return finish(x.shape(), std::move(out), {&x, &s},
                [rows, C](const Node& o, std::span<Node* const> in) {
                  const float* xv = in[0]->data.data();
                  const float* sv = in[1]->data.data();
                  if (float* g = grad_target(o, in[0])) {
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < C; ++c) g[r * C + c] += o.grad[r * C + c] * sv[c];
                  }
                  if (float* g = grad_target(o, in[1])) {
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < C; ++c) g[c] += o.grad[r * C + c] * xv[r * C + c];
                  }
                });
}

Tensor shift_channels(const Tensor& x, const Tensor& b) {
  const std::size_t C = channels_of(x);
  if (b.shape() != Shape{C}) {
    throw ShapeError(fmt::format("shift_channels: shift {} does not match input {}",
                                 shape_string(b.shape()), shape_string(x.shape())));
  }
  const std::size_t rows = x.size() / C;
  std::vector<float> out(x.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] = x[r * C + c] + b[c];
  return finish(x.shape(), std::move(out), {&x, &b},
                [rows, C](const Node& o, std::span<Node* const> in) {
                  if (float* g = grad_target(o, in[0])) {
                    for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
                  }
                  if (float* g = grad_target(o, in[1])) {
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < C; ++c) g[c] += o.grad[r * C + c];
                  }
                });
}

Tensor instance_norm(const Tensor& x, float eps) {
  require_rank("instance_norm", x, 4);
  const std::size_t N = x.dim(0), HW = x.dim(1) * x.dim(2), C = x.dim(3);
  std::vector<float> out(x.size());
  std::vector<float> inv_std(N * C);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      double m = 0.0, v = 0.0;
      for (std::size_t p = 0; p < HW; ++p) m += x[(n * HW + p) * C + c];
      m /= static_cast<double>(HW);
      for (std::size_t p = 0; p < HW; ++p) {
        const double d = x[(n * HW + p) * C + c] - m;
        v += d * d;
      }
      v /= static_cast<double>(HW);
      const float is = static_cast<float>(1.0 / std::sqrt(v + eps));
      inv_std[n * C + c] = is;
      for (std::size_t p = 0; p < HW; ++p) {
        const std::size_t i = (n * HW + p) * C + c;
        out[i] = static_cast<float>(x[i] - m) * is;
      }
    }
  }
  return finish(x.shape(), std::move(out), {&x},
                [N, HW, C, inv_std = std::move(inv_std)](const Node& o, std::span<Node* const> in) {
                  float* g = grad_target(o, in[0]);
                  if (!g) return;
                  const float* y = o.data.data();
                  const float* go = o.grad.data();
                  for (std::size_t n = 0; n < N; ++n) {
                    for (std::size_t c = 0; c < C; ++c) {
                      double mg = 0.0, mgy = 0.0;
                      for (std::size_t p = 0; p < HW; ++p) {
                        const std::size_t i = (n * HW + p) * C + c;
                        mg += go[i];
                        mgy += static_cast<double>(go[i]) * y[i];
                      }
                      mg /= static_cast<double>(HW);
                      mgy /= static_cast<double>(HW);
                      const float is = inv_std[n * C + c];
                      for (std::size_t p = 0; p < HW; ++p) {
                        const std::size_t i = (n * HW + p) * C + c;
                        g[i] += is * static_cast<float>(go[i] - mg - y[i] * mgy);
                      }
                    }
                  }
                });
}

Tensor avg_pool2x2(const Tensor& x) {
  require_rank("avg_pool2x2", x, 4);
  const std::size_t N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  if (H % 2 || W % 2) {
    throw ShapeError(fmt::format("avg_pool2x2: odd spatial dims in {}", shape_string(x.shape())));
  }
  const std::size_t h = H / 2, w = W / 2;
  std::vector<float> out(N * h * w * C, 0.0f);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx)
        for (std::size_t c = 0; c < C; ++c)
          out[((n * h + y / 2) * w + xx / 2) * C + c] += 0.25f * x[((n * H + y) * W + xx) * C + c];
  return finish({N, h, w, C}, std::move(out), {&x},
                [N, H, W, C, h, w](const Node& o, std::span<Node* const> in) {
                  if (float* g = grad_target(o, in[0])) {
                    for (std::size_t n = 0; n < N; ++n)
                      for (std::size_t y = 0; y < H; ++y)
                        for (std::size_t xx = 0; xx < W; ++xx)
                          for (std::size_t c = 0; c < C; ++c)
                            g[((n * H + y) * W + xx) * C + c] +=
                                0.25f * o.grad[((n * h + y / 2) * w + xx / 2) * C + c];
                  }
                });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank("global_avg_pool", x, 4);
  const std::size_t N = x.dim(0), HW = x.dim(1) * x.dim(2), C = x.dim(3);
  const float scale = 1.0f / static_cast<float>(HW);
  std::vector<float> out(N * C, 0.0f);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t p = 0; p < HW; ++p)
      for (std::size_t c = 0; c < C; ++c) out[n * C + c] += x[(n * HW + p) * C + c];
  for (auto& v : out) v *= scale;
  return finish({N, C}, std::move(out), {&x},
                [N, HW, C, scale](const Node& o, std::span<Node* const> in) {
                  if (float* g = grad_target(o, in[0])) {
                    for (std::size_t n = 0; n < N; ++n)
                      for (std::size_t p = 0; p < HW; ++p)
                        for (std::size_t c = 0; c < C; ++c)
                          g[(n * HW + p) * C + c] += scale * o.grad[n * C + c];
                  }
                });
}

}  // namespace gsf::ad
