// Copyright 2026 The cfm-inverse Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <cmath>
#include <memory>

#include "cfm/autodiff.hpp"

namespace cfm::ad {
namespace {

// All products are written as row axpys so the inner loop is contiguous and
// every output element sums its terms in ascending index order.

// c[m, n] += a[m, k] * b[k, n]
template <typename S>
void gemm_acc(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    S* crow = c + i * n;
    const S* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const S av = arow[p];
      const S* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[k, n] += a[m, k]^T * b[m, n]
template <typename S>
void gemm_acc_at(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const S* arow = a + i * k;
    const S* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const S av = arow[p];
      S* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename S>
std::vector<S> transpose(const S* a, std::size_t rows, std::size_t cols) {
  std::vector<S> t(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = a[i * cols + j];
  }
  return t;
}

// c[m, n] += a[m, k] * b[n, k]^T
template <typename S>
void gemm_acc_bt(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n) {
  const auto bt = transpose(b, n, k);
  gemm_acc(a, bt.data(), c, m, k, n);
}

template <typename S>
void require_same_shape(const char* op, const Var<S>& a, const Var<S>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <typename S>
void require_same_tape(const char* op, const Var<S>& a, const Var<S>& b) {
  if (&a.tape() != &b.tape()) throw GradientError(std::string(op) + ": operands on different tapes");
}

}  // namespace

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  require_same_tape("matmul", a, b);
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() < 2 || bs.size() != 2 || as.back() != bs[0]) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(as) + " and " + shape_str(bs));
  }
  const std::size_t k = bs[0];
  const std::size_t n = bs[1];
  const std::size_t m = a.numel() / k;
  Shape out_shape(as.begin(), as.end() - 1);
  out_shape.push_back(n);
  Tensor<S> out(out_shape);
  gemm_acc(a.value().data.data(), b.value().data.data(), out.data.data(), m, k, n);
  const int ia = a.id();
  const int ib = b.id();
  const bool rg = a.requires_grad() || b.requires_grad();
  return a.tape().record(std::move(out), rg, [ia, ib, m, k, n](Tape<S>& t, const std::vector<S>& g) {
    if (t.requires_grad(ia)) {
      gemm_acc_bt(g.data(), t.value(ib).data.data(), t.grad_buffer(ia).data(), m, n, k);
    }
    if (t.requires_grad(ib)) {
      gemm_acc_at(t.value(ia).data.data(), g.data(), t.grad_buffer(ib).data(), m, k, n);
    }
  });
}

template <typename S>
Var<S> batched_matmul(Var<S> a, Var<S> b, bool transpose_b) {
  require_same_tape("batched_matmul", a, b);
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0] ||
      as[2] != (transpose_b ? bs[2] : bs[1])) {
    throw ShapeError("batched_matmul: incompatible shapes " + shape_str(as) + " and " +
                     shape_str(bs) + (transpose_b ? " (b transposed)" : ""));
  }
  const std::size_t groups = as[0];
  const std::size_t m = as[1];
  const std::size_t k = as[2];
  const std::size_t n = transpose_b ? bs[1] : bs[2];
  Tensor<S> out(Shape{groups, m, n});
  const S* ap = a.value().data.data();
  const S* bp = b.value().data.data();
  for (std::size_t g = 0; g < groups; ++g) {
    if (transpose_b) {
      gemm_acc_bt(ap + g * m * k, bp + g * n * k, out.data.data() + g * m * n, m, k, n);
    } else {
      gemm_acc(ap + g * m * k, bp + g * k * n, out.data.data() + g * m * n, m, k, n);
    }
  }
  const int ia = a.id();
  const int ib = b.id();
  const bool rg = a.requires_grad() || b.requires_grad();
  return a.tape().record(
      std::move(out), rg, [ia, ib, groups, m, k, n, transpose_b](Tape<S>& t, const std::vector<S>& g) {
        const S* av = t.value(ia).data.data();
        const S* bv = t.value(ib).data.data();
        const bool ga = t.requires_grad(ia);
        const bool gb = t.requires_grad(ib);
        S* da = ga ? t.grad_buffer(ia).data() : nullptr;
        S* db = gb ? t.grad_buffer(ib).data() : nullptr;
        for (std::size_t q = 0; q < groups; ++q) {
          const S* gq = g.data() + q * m * n;
          if (transpose_b) {
            // out = a * b^T with b[n, k]: da = g * b, db = g^T * a
            if (ga) gemm_acc(gq, bv + q * n * k, da + q * m * k, m, n, k);
            if (gb) gemm_acc_at(gq, av + q * m * k, db + q * n * k, m, n, k);
          } else {
            if (ga) gemm_acc_bt(gq, bv + q * k * n, da + q * m * k, m, n, k);
            if (gb) gemm_acc_at(av + q * m * k, gq, db + q * k * n, m, k, n);
          }
        }
      });
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  require_same_tape("add", a, b);
  require_same_shape("add", a, b);
  Tensor<S> out(a.shape());
  const auto& av = a.value().data;
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = av[i] + bv[i];
  const int ia = a.id();
  const int ib = b.id();
  return a.tape().record(std::move(out), a.requires_grad() || b.requires_grad(),
                         [ia, ib](Tape<S>& t, const std::vector<S>& g) {
                           for (int id : {ia, ib}) {
                             if (!t.requires_grad(id)) continue;
                             auto& d = t.grad_buffer(id);
                             for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                           }
                         });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  require_same_tape("sub", a, b);
  require_same_shape("sub", a, b);
  Tensor<S> out(a.shape());
  const auto& av = a.value().data;
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = av[i] - bv[i];
  const int ia = a.id();
  const int ib = b.id();
  return a.tape().record(std::move(out), a.requires_grad() || b.requires_grad(),
                         [ia, ib](Tape<S>& t, const std::vector<S>& g) {
                           if (t.requires_grad(ia)) {
                             auto& d = t.grad_buffer(ia);
                             for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                           }
                           if (t.requires_grad(ib)) {
                             auto& d = t.grad_buffer(ib);
                             for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
                           }
                         });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  require_same_tape("mul", a, b);
  require_same_shape("mul", a, b);
  Tensor<S> out(a.shape());
  const auto& av = a.value().data;
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = av[i] * bv[i];
  const int ia = a.id();
  const int ib = b.id();
  return a.tape().record(std::move(out), a.requires_grad() || b.requires_grad(),
                         [ia, ib](Tape<S>& t, const std::vector<S>& g) {
                           const auto& av = t.value(ia).data;
                           const auto& bv = t.value(ib).data;
                           if (t.requires_grad(ia)) {
                             auto& d = t.grad_buffer(ia);
                             for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * bv[i];
                           }
                           if (t.requires_grad(ib)) {
                             auto& d = t.grad_buffer(ib);
                             for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * av[i];
                           }
                         });
}

template <typename S>
Var<S> scale(Var<S> a, S factor) {
  Tensor<S> out(a.shape());
  const auto& av = a.value().data;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = av[i] * factor;
  const int ia = a.id();
  return a.tape().record(std::move(out), a.requires_grad(),
                         [ia, factor](Tape<S>& t, const std::vector<S>& g) {
                           auto& d = t.grad_buffer(ia);
                           for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * factor;
                         });
}

template <typename S>
Var<S> add_bias(Var<S> x, Var<S> bias) {
  require_same_tape("add_bias", x, bias);
  if (bias.shape().size() != 1 || x.shape().empty() || x.shape().back() != bias.shape()[0]) {
    throw ShapeError("add_bias: shapes " + shape_str(x.shape()) + " and " + shape_str(bias.shape()));
  }
  const std::size_t c = bias.shape()[0];
  const std::size_t rows = x.numel() / c;
  Tensor<S> out(x.shape());
  const auto& xv = x.value().data;
  const auto& bv = bias.value().data;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) out.data[r * c + j] = xv[r * c + j] + bv[j];
  }
  const int ix = x.id();
  const int ib = bias.id();
  return x.tape().record(std::move(out), x.requires_grad() || bias.requires_grad(),
                         [ix, ib, rows, c](Tape<S>& t, const std::vector<S>& g) {
                           if (t.requires_grad(ix)) {
                             auto& d = t.grad_buffer(ix);
                             for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                           }
                           if (t.requires_grad(ib)) {
                             auto& d = t.grad_buffer(ib);
                             for (std::size_t r = 0; r < rows; ++r) {
                               for (std::size_t j = 0; j < c; ++j) d[j] += g[r * c + j];
                             }
                           }
                         });
}

template <typename S>
Var<S> add_per_row(Var<S> x, Var<S> y) {
  require_same_tape("add_per_row", x, y);
  const auto& xs = x.shape();
  const auto& ys = y.shape();
  if (xs.size() != 3 || ys.size() != 2 || xs[0] != ys[0] || xs[2] != ys[1]) {
    throw ShapeError("add_per_row: shapes " + shape_str(xs) + " and " + shape_str(ys));
  }
  const std::size_t b = xs[0];
  const std::size_t tk = xs[1];
  const std::size_t c = xs[2];
  Tensor<S> out(xs);
  const auto& xv = x.value().data;
  const auto& yv = y.value().data;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t p = 0; p < tk; ++p) {
      const std::size_t off = (i * tk + p) * c;
      for (std::size_t j = 0; j < c; ++j) out.data[off + j] = xv[off + j] + yv[i * c + j];
    }
  }
  const int ix = x.id();
  const int iy = y.id();
  return x.tape().record(std::move(out), x.requires_grad() || y.requires_grad(),
                         [ix, iy, b, tk, c](Tape<S>& t, const std::vector<S>& g) {
                           if (t.requires_grad(ix)) {
                             auto& d = t.grad_buffer(ix);
                             for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                           }
                           if (t.requires_grad(iy)) {
                             auto& d = t.grad_buffer(iy);
                             for (std::size_t i = 0; i < b; ++i) {
                               for (std::size_t p = 0; p < tk; ++p) {
                                 const std::size_t off = (i * tk + p) * c;
                                 for (std::size_t j = 0; j < c; ++j) d[i * c + j] += g[off + j];
                               }
                             }
                           }
                         });
}

template <typename S>
Var<S> relu_squared(Var<S> x) {
  Tensor<S> out(x.shape());
  const auto& xv = x.value().data;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const S r = xv[i] > S(0) ? xv[i] : S(0);
    out.data[i] = r * r;
  }
  const int ix = x.id();
  return x.tape().record(std::move(out), x.requires_grad(), [ix](Tape<S>& t, const std::vector<S>& g) {
    const auto& xv = t.value(ix).data;
    auto& d = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > S(0)) d[i] += g[i] * S(2) * xv[i];
    }
  });
}

template <typename S>
Var<S> square(Var<S> x) {
  Tensor<S> out(x.shape());
  const auto& xv = x.value().data;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = xv[i] * xv[i];
  const int ix = x.id();
  return x.tape().record(std::move(out), x.requires_grad(), [ix](Tape<S>& t, const std::vector<S>& g) {
    const auto& xv = t.value(ix).data;
    auto& d = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * S(2) * xv[i];
  });
}

template <typename S>
Var<S> rms_norm(Var<S> x, Var<S> gain, S eps) {
  require_same_tape("rms_norm", x, gain);
  if (!(eps > S(0))) throw std::invalid_argument("rms_norm: eps must be positive");
  const auto& xs = x.shape();
  if (gain.shape().size() != 1 || xs.empty() || xs.back() != gain.shape()[0]) {
    throw ShapeError("rms_norm: shapes " + shape_str(xs) + " and " + shape_str(gain.shape()));
  }
  const std::size_t c = xs.back();
  const std::size_t rows = x.numel() / c;
  Tensor<S> out(xs);
  auto inv_rms = std::make_shared<std::vector<S>>(rows);
  const auto& xv = x.value().data;
  const auto& gv = gain.value().data;
  for (std::size_t r = 0; r < rows; ++r) {
    const S* xr = xv.data() + r * c;
    S ss = 0;
    for (std::size_t j = 0; j < c; ++j) ss += xr[j] * xr[j];
    const S inv = S(1) / std::sqrt(ss / S(c) + eps);
    (*inv_rms)[r] = inv;
    for (std::size_t j = 0; j < c; ++j) out.data[r * c + j] = xr[j] * inv * gv[j];
  }
  const int ix = x.id();
  const int ig = gain.id();
  return x.tape().record(
      std::move(out), x.requires_grad() || gain.requires_grad(),
      [ix, ig, rows, c, inv_rms](Tape<S>& t, const std::vector<S>& g) {
        const auto& xv = t.value(ix).data;
        const auto& gv = t.value(ig).data;
        if (t.requires_grad(ix)) {
          auto& d = t.grad_buffer(ix);
          for (std::size_t r = 0; r < rows; ++r) {
            const S* xr = xv.data() + r * c;
            const S* gr = g.data() + r * c;
            const S inv = (*inv_rms)[r];
            S dot = 0;
            for (std::size_t j = 0; j < c; ++j) dot += gr[j] * gv[j] * xr[j];
            const S coef = inv * inv * inv * dot / S(c);
            for (std::size_t j = 0; j < c; ++j) d[r * c + j] += gr[j] * gv[j] * inv - xr[j] * coef;
          }
        }
        if (t.requires_grad(ig)) {
          auto& d = t.grad_buffer(ig);
          for (std::size_t r = 0; r < rows; ++r) {
            const S inv = (*inv_rms)[r];
            for (std::size_t j = 0; j < c; ++j) d[j] += g[r * c + j] * xv[r * c + j] * inv;
          }
        }
      });
}

template <typename S>
Var<S> softmax_lastdim(Var<S> x) {
  const auto& xs = x.shape();
  if (xs.empty()) throw ShapeError("softmax_lastdim: scalar input");
  const std::size_t c = xs.back();
  const std::size_t rows = x.numel() / c;
  Tensor<S> out(xs);
  const auto& xv = x.value().data;
  for (std::size_t r = 0; r < rows; ++r) {
    const S* xr = xv.data() + r * c;
    S* yr = out.data.data() + r * c;
    const S mx = *std::max_element(xr, xr + c);
    S sum = 0;
    for (std::size_t j = 0; j < c; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (std::size_t j = 0; j < c; ++j) yr[j] /= sum;
  }
  const int ix = x.id();
  // The backward rule reads the output, which becomes the next node.
  const int iy = static_cast<int>(x.tape().size());
  return x.tape().record(std::move(out), x.requires_grad(),
                         [ix, iy, rows, c](Tape<S>& t, const std::vector<S>& g) {
                           const auto& yv = t.value(iy).data;
                           auto& d = t.grad_buffer(ix);
                           for (std::size_t r = 0; r < rows; ++r) {
                             const S* yr = yv.data() + r * c;
                             const S* gr = g.data() + r * c;
                             S dot = 0;
                             for (std::size_t j = 0; j < c; ++j) dot += gr[j] * yr[j];
                             for (std::size_t j = 0; j < c; ++j) d[r * c + j] += yr[j] * (gr[j] - dot);
                           }
                         });
}

template <typename S>
Var<S> rope(Var<S> x, std::span<const int> positions, double base) {
  const auto& xs = x.shape();
  if (xs.size() < 2) throw ShapeError("rope: need [..., tokens, head_dim], got " + shape_str(xs));
  const std::size_t hd = xs.back();
  const std::size_t tokens = xs[xs.size() - 2];
  if (hd % 2 != 0) throw ShapeError("rope: head_dim must be even, got " + std::to_string(hd));
  if (positions.size() != tokens) {
    throw ShapeError("rope: " + std::to_string(positions.size()) + " positions for " +
                     std::to_string(tokens) + " tokens");
  }
  const std::size_t half = hd / 2;
  auto cs = std::make_shared<std::vector<S>>(tokens * half * 2);
  for (std::size_t p = 0; p < tokens; ++p) {
    for (std::size_t i = 0; i < half; ++i) {
      const double theta = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
      const double angle = positions[p] * theta;
      (*cs)[(p * half + i) * 2] = static_cast<S>(std::cos(angle));
      (*cs)[(p * half + i) * 2 + 1] = static_cast<S>(std::sin(angle));
    }
  }
  const std::size_t outer = x.numel() / (tokens * hd);
  auto rotate = [outer, tokens, half, hd, cs](const S* in, S* out, S sign, bool accumulate) {
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t p = 0; p < tokens; ++p) {
        const std::size_t off = (o * tokens + p) * hd;
        for (std::size_t i = 0; i < half; ++i) {
          const S cv = (*cs)[(p * half + i) * 2];
          const S sv = sign * (*cs)[(p * half + i) * 2 + 1];
          const S a = in[off + 2 * i];
          const S b = in[off + 2 * i + 1];
          const S ra = a * cv - b * sv;
          const S rb = a * sv + b * cv;
          if (accumulate) {
            out[off + 2 * i] += ra;
            out[off + 2 * i + 1] += rb;
          } else {
            out[off + 2 * i] = ra;
            out[off + 2 * i + 1] = rb;
          }
        }
      }
    }
  };
  Tensor<S> out(xs);
  rotate(x.value().data.data(), out.data.data(), S(1), false);
  const int ix = x.id();
  return x.tape().record(std::move(out), x.requires_grad(),
                         [ix, rotate](Tape<S>& t, const std::vector<S>& g) {
                           rotate(g.data(), t.grad_buffer(ix).data(), S(-1), true);
                         });
}

template <typename S>
Var<S> reshape(Var<S> x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Tensor<S> out(std::move(shape), x.value().data);
  const int ix = x.id();
  return x.tape().record(std::move(out), x.requires_grad(), [ix](Tape<S>& t, const std::vector<S>& g) {
    auto& d = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

template <typename S>
Var<S> swap_axes_12(Var<S> x) {
  const auto& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("swap_axes_12: need rank 4, got " + shape_str(xs));
  const std::size_t a = xs[0], b = xs[1], c = xs[2], d = xs[3];
  Tensor<S> out(Shape{a, c, b, d});
  const auto& xv = x.value().data;
  for (std::size_t i = 0; i < a; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      for (std::size_t k = 0; k < c; ++k) {
        const S* src = xv.data() + ((i * b + j) * c + k) * d;
        S* dst = out.data.data() + ((i * c + k) * b + j) * d;
        std::copy(src, src + d, dst);
      }
    }
  }
  const int ix = x.id();
  return x.tape().record(std::move(out), x.requires_grad(),
                         [ix, a, b, c, d](Tape<S>& t, const std::vector<S>& g) {
                           auto& dx = t.grad_buffer(ix);
                           for (std::size_t i = 0; i < a; ++i) {
                             for (std::size_t j = 0; j < b; ++j) {
                               for (std::size_t k = 0; k < c; ++k) {
                                 S* dst = dx.data() + ((i * b + j) * c + k) * d;
                                 const S* src = g.data() + ((i * c + k) * b + j) * d;
                                 for (std::size_t q = 0; q < d; ++q) dst[q] += src[q];
                               }
                             }
                           }
                         });
}

template <typename S>
Var<S> select_token(Var<S> x, std::size_t index) {
  const auto& xs = x.shape();
  if (xs.size() != 3 || index >= xs[1]) {
    throw ShapeError("select_token: index " + std::to_string(index) + " on " + shape_str(xs));
  }
  const std::size_t b = xs[0], tk = xs[1], c = xs[2];
  Tensor<S> out(Shape{b, c});
  const auto& xv = x.value().data;
  for (std::size_t i = 0; i < b; ++i) {
    std::copy_n(xv.data() + (i * tk + index) * c, c, out.data.data() + i * c);
  }
  const int ix = x.id();
  return x.tape().record(std::move(out), x.requires_grad(),
                         [ix, b, tk, c, index](Tape<S>& t, const std::vector<S>& g) {
                           auto& d = t.grad_buffer(ix);
                           for (std::size_t i = 0; i < b; ++i) {
                             for (std::size_t j = 0; j < c; ++j) d[(i * tk + index) * c + j] += g[i * c + j];
                           }
                         });
}

template <typename S>
Var<S> concat_tokens(std::span<const Var<S>> parts) {
  if (parts.empty()) throw ShapeError("concat_tokens: no inputs");
  const auto& s0 = parts[0].shape();
  if (s0.size() != 3) throw ShapeError("concat_tokens: need rank 3, got " + shape_str(s0));
  const std::size_t b = s0[0], c = s0[2];
  std::vector<int> ids;
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != 3 || s[0] != b || s[2] != c) {
      throw ShapeError("concat_tokens: " + shape_str(s) + " does not match " + shape_str(s0));
    }
    require_same_tape("concat_tokens", parts[0], p);
    ids.push_back(p.id());
    lens.push_back(s[1]);
    total += s[1];
    rg = rg || p.requires_grad();
  }
  Tensor<S> out(Shape{b, total, c});
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t at = 0;
    for (std::size_t q = 0; q < parts.size(); ++q) {
      const auto& v = parts[q].value().data;
      std::copy_n(v.data() + i * lens[q] * c, lens[q] * c, out.data.data() + (i * total + at) * c);
      at += lens[q];
    }
  }
  return parts[0].tape().record(std::move(out), rg,
                                [ids, lens, b, c, total](Tape<S>& t, const std::vector<S>& g) {
                                  std::size_t at = 0;
                                  for (std::size_t q = 0; q < ids.size(); ++q) {
                                    if (t.requires_grad(ids[q])) {
                                      auto& d = t.grad_buffer(ids[q]);
                                      for (std::size_t i = 0; i < b; ++i) {
                                        const S* src = g.data() + (i * total + at) * c;
                                        S* dst = d.data() + i * lens[q] * c;
                                        for (std::size_t j = 0; j < lens[q] * c; ++j) dst[j] += src[j];
                                      }
                                    }
                                    at += lens[q];
                                  }
                                });
}

template <typename S>
Var<S> concat_features(std::span<const Var<S>> parts) {
  if (parts.empty()) throw ShapeError("concat_features: no inputs");
  const auto& s0 = parts[0].shape();
  if (s0.size() != 2) throw ShapeError("concat_features: need rank 2, got " + shape_str(s0));
  const std::size_t b = s0[0];
  std::vector<int> ids;
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != 2 || s[0] != b) {
      throw ShapeError("concat_features: " + shape_str(s) + " does not match " + shape_str(s0));
    }
    require_same_tape("concat_features", parts[0], p);
    ids.push_back(p.id());
    widths.push_back(s[1]);
    total += s[1];
    rg = rg || p.requires_grad();
  }
  Tensor<S> out(Shape{b, total});
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t at = 0;
    for (std::size_t q = 0; q < parts.size(); ++q) {
      const auto& v = parts[q].value().data;
      std::copy_n(v.data() + i * widths[q], widths[q], out.data.data() + i * total + at);
      at += widths[q];
    }
  }
  return parts[0].tape().record(std::move(out), rg,
                                [ids, widths, b, total](Tape<S>& t, const std::vector<S>& g) {
                                  std::size_t at = 0;
                                  for (std::size_t q = 0; q < ids.size(); ++q) {
                                    if (t.requires_grad(ids[q])) {
                                      auto& d = t.grad_buffer(ids[q]);
                                      for (std::size_t i = 0; i < b; ++i) {
                                        for (std::size_t j = 0; j < widths[q]; ++j) {
                                          d[i * widths[q] + j] += g[i * total + at + j];
                                        }
                                      }
                                    }
                                    at += widths[q];
                                  }
                                });
}

template <typename S>
Var<S> sum_all(Var<S> x) {
  // Accumulated in double, left to right.
  double acc = 0;
  for (S v : x.value().data) acc += static_cast<double>(v);
  Tensor<S> out(Shape{1}, {static_cast<S>(acc)});
  const int ix = x.id();
  return x.tape().record(std::move(out), x.requires_grad(), [ix](Tape<S>& t, const std::vector<S>& g) {
    auto& d = t.grad_buffer(ix);
    for (auto& v : d) v += g[0];
  });
}

template <typename S>
Var<S> mean_all(Var<S> x) {
  const auto n = static_cast<double>(x.numel());
  double acc = 0;
  for (S v : x.value().data) acc += static_cast<double>(v);
  Tensor<S> out(Shape{1}, {static_cast<S>(acc / n)});
  const int ix = x.id();
  return x.tape().record(std::move(out), x.requires_grad(), [ix, n](Tape<S>& t, const std::vector<S>& g) {
    auto& d = t.grad_buffer(ix);
    const S w = static_cast<S>(static_cast<double>(g[0]) / n);
    for (auto& v : d) v += w;
  });
}

template <typename S>
Var<S> mse(Var<S> prediction, Var<S> target) {
  return mean_all(square(sub(prediction, target)));
}

#define CFM_INSTANTIATE_OPS(S)                                                   \
  template Var<S> matmul(Var<S>, Var<S>);                                        \
  template Var<S> batched_matmul(Var<S>, Var<S>, bool);                          \
  template Var<S> add(Var<S>, Var<S>);                                           \
  template Var<S> sub(Var<S>, Var<S>);                                           \
  template Var<S> mul(Var<S>, Var<S>);                                           \
  template Var<S> scale(Var<S>, S);                                              \
  template Var<S> add_bias(Var<S>, Var<S>);                                      \
  template Var<S> add_per_row(Var<S>, Var<S>);                                   \
  template Var<S> relu_squared(Var<S>);                                          \
  template Var<S> square(Var<S>);                                                \
  template Var<S> rms_norm(Var<S>, Var<S>, S);                                   \
  template Var<S> softmax_lastdim(Var<S>);                                       \
  template Var<S> rope(Var<S>, std::span<const int>, double);                    \
  template Var<S> reshape(Var<S>, Shape);                                        \
  template Var<S> swap_axes_12(Var<S>);                                          \
  template Var<S> select_token(Var<S>, std::size_t);                             \
  template Var<S> concat_tokens(std::span<const Var<S>>);                        \
  template Var<S> concat_features(std::span<const Var<S>>);                      \
  template Var<S> sum_all(Var<S>);                                               \
  template Var<S> mean_all(Var<S>);                                              \
  template Var<S> mse(Var<S>, Var<S>);

CFM_INSTANTIATE_OPS(float)
CFM_INSTANTIATE_OPS(double)

#undef CFM_INSTANTIATE_OPS

}  // namespace cfm::ad
