// SPDX-License-Identifier: Apache-2.0

#include "avse/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "avse/error.hpp"
#include "gemm.hpp"

namespace avse {

using detail::gemm;
using detail::grad_of;
using detail::make_result;

namespace {

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                         shape_str(b));
}

void require_rank(const Shape& s, std::size_t r, const char* op) {
  if (s.size() != r)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                         shape_str(s));
}

template <typename T>
T sigmoid_scalar(T v) {
  return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

}  // namespace

// ---------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "add");
  std::vector<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  auto r = make_result<T>("add", a.shape(), std::move(out), {&a, &b});
  if (r.requires_grad())
    r.node()->backward = [](Node<T>& self) {
      for (auto& p : self.parents)
        if (auto g = grad_of(*p); !g.empty())
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    };
  return r;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  auto r = make_result<T>("sub", a.shape(), std::move(out), {&a, &b});
  if (r.requires_grad())
    r.node()->backward = [](Node<T>& self) {
      if (auto g = grad_of(*self.parents[0]); !g.empty())
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      if (auto g = grad_of(*self.parents[1]); !g.empty())
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    };
  return r;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  auto r = make_result<T>("mul", a.shape(), std::move(out), {&a, &b});
  if (r.requires_grad())
    r.node()->backward = [](Node<T>& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (auto g = grad_of(pa); !g.empty())
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
      if (auto g = grad_of(pb); !g.empty())
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    };
  return r;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double s) {
  const T k = static_cast<T>(s);
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * k;
  auto r = make_result<T>("scale", a.shape(), std::move(out), {&a});
  if (r.requires_grad())
    r.node()->backward = [k](Node<T>& self) {
      if (auto g = grad_of(*self.parents[0]); !g.empty())
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * k;
    };
  return r;
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
  if (b.rank() != 1 || x.shape().back() != b.dim(0))
    throw DimensionError("add_bias: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
  const std::size_t n = b.numel();
  std::vector<T> out(x.numel());
  auto xv = x.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + bv[i % n];
  auto r = make_result<T>("add_bias", x.shape(), std::move(out), {&x, &b});
  if (r.requires_grad())
    r.node()->backward = [n](Node<T>& self) {
      if (auto g = grad_of(*self.parents[0]); !g.empty())
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      if (auto g = grad_of(*self.parents[1]); !g.empty())
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
    };
  return r;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  auto r = make_result<T>("sum", Shape{1}, std::vector<T>{acc}, {&x});
  if (r.requires_grad())
    r.node()->backward = [](Node<T>& self) {
      if (auto g = grad_of(*self.parents[0]); !g.empty())
        for (auto& v : g) v += self.grad[0];
    };
  return r;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// ------------------------------------------------------------------- products

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape(), 2, "matmul");
  require_rank(b.shape(), 2, "matmul");
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " . " +
                         shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  gemm<T>(false, false, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  auto r = make_result<T>("matmul", Shape{m, n}, std::move(out), {&a, &b});
  if (r.requires_grad())
    r.node()->backward = [m, k, n](Node<T>& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (auto g = grad_of(pa); !g.empty())
        gemm<T>(false, true, m, k, n, self.grad.data(), pb.value.data(), g.data(), true);
      if (auto g = grad_of(pb); !g.empty())
        gemm<T>(true, false, k, n, m, pa.value.data(), self.grad.data(), g.data(), true);
    };
  return r;
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool ta, bool tb) {
  require_rank(a.shape(), 3, "bmm");
  require_rank(b.shape(), 3, "bmm");
  const std::size_t batch = a.dim(0);
  const std::size_t m = ta ? a.dim(2) : a.dim(1);
  const std::size_t k = ta ? a.dim(1) : a.dim(2);
  const std::size_t kb = tb ? b.dim(2) : b.dim(1);
  const std::size_t n = tb ? b.dim(1) : b.dim(2);
  if (b.dim(0) != batch || k != kb)
    throw DimensionError("bmm: incompatible operands " + shape_str(a.shape()) + " . " +
                         shape_str(b.shape()));
  std::vector<T> out(batch * m * n);
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  for (std::size_t i = 0; i < batch; ++i)
    gemm<T>(ta, tb, m, n, k, ad + i * m * k, bd + i * k * n, out.data() + i * m * n, false);
  auto r = make_result<T>("bmm", Shape{batch, m, n}, std::move(out), {&a, &b});
  if (r.requires_grad())
    r.node()->backward = [batch, m, k, n, ta, tb](Node<T>& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      auto ga = grad_of(pa);
      auto gb = grad_of(pb);
      for (std::size_t i = 0; i < batch; ++i) {
        const T* dc = self.grad.data() + i * m * n;
        const T* av = pa.value.data() + i * m * k;
        const T* bv = pb.value.data() + i * k * n;
        if (!ga.empty()) {
          T* g = ga.data() + i * m * k;
          if (!ta) gemm<T>(false, !tb, m, k, n, dc, bv, g, true);
          else gemm<T>(tb, true, k, m, n, bv, dc, g, true);
        }
        if (!gb.empty()) {
          T* g = gb.data() + i * k * n;
          if (!tb) gemm<T>(!ta, false, k, n, m, av, dc, g, true);
          else gemm<T>(true, ta, n, k, m, dc, av, g, true);
        }
      }
    };
  return r;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w) {
  require_rank(w.shape(), 2, "linear");
  const std::size_t in = w.dim(0), outd = w.dim(1);
  if (x.shape().back() != in)
    throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(w.shape()));
  const std::size_t rows = x.numel() / in;
  std::vector<T> out(rows * outd);
  gemm<T>(false, false, rows, outd, in, x.data().data(), w.data().data(), out.data(), false);
  Shape s = x.shape();
  s.back() = outd;
  auto r = make_result<T>("linear", std::move(s), std::move(out), {&x, &w});
  if (r.requires_grad())
    r.node()->backward = [rows, in, outd](Node<T>& self) {
      auto& px = *self.parents[0];
      auto& pw = *self.parents[1];
      if (auto g = grad_of(px); !g.empty())
        gemm<T>(false, true, rows, in, outd, self.grad.data(), pw.value.data(), g.data(), true);
      if (auto g = grad_of(pw); !g.empty())
        gemm<T>(true, false, in, outd, rows, px.value.data(), self.grad.data(), g.data(), true);
    };
  return r;
}

// --------------------------------------------------------------------- layout

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  auto r = make_result<T>("reshape", std::move(shape), std::move(out), {&x});
  if (r.requires_grad())
    r.node()->backward = [](Node<T>& self) {
      if (auto g = grad_of(*self.parents[0]); !g.empty())
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    };
  return r;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const std::size_t rank = x.rank();
  if (perm.size() != rank) throw DimensionError("permute: rank mismatch for " + shape_str(x.shape()));
  std::vector<bool> used(rank, false);
  for (auto p : perm) {
    if (p >= rank || used[p]) throw DimensionError("permute: invalid axis order");
    used[p] = true;
  }
  const Shape& in = x.shape();
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  Shape os(rank);
  std::vector<std::size_t> src_stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    os[i] = in[perm[i]];
    src_stride[i] = in_stride[perm[i]];
  }
  // map[o] = flat input index of output element o
  const std::size_t n = x.numel();
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < n; ++o) {
    map[o] = src;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      src += src_stride[d];
      if (idx[d] < os[d]) break;
      src -= src_stride[d] * os[d];
      idx[d] = 0;
    }
  }
  std::vector<T> out(n);
  auto xv = x.data();
  for (std::size_t o = 0; o < n; ++o) out[o] = xv[map[o]];
  auto r = make_result<T>("permute", std::move(os), std::move(out), {&x});
  if (r.requires_grad())
    r.node()->backward = [map = std::move(map)](Node<T>& self) {
      if (auto g = grad_of(*self.parents[0]); !g.empty())
        for (std::size_t o = 0; o < map.size(); ++o) g[map[o]] += self.grad[o];
    };
  return r;
}

// ---------------------------------------------------------------- convolution

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride) {
  require_rank(x.shape(), 3, "conv1d");
  require_rank(w.shape(), 3, "conv1d");
  if (stride == 0) throw ConfigError("conv1d: stride must be positive");
  const std::size_t B = x.dim(0), Ci = x.dim(1), T_in = x.dim(2);
  const std::size_t Co = w.dim(0), K = w.dim(2);
  if (w.dim(1) != Ci)
    throw DimensionError("conv1d: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(w.shape()));
  if (T_in < K)
    throw SignalTooShortError("conv1d: input length " + std::to_string(T_in) +
                              " shorter than kernel " + std::to_string(K));
  const std::size_t To = (T_in - K) / stride + 1;
  std::vector<T> out(B * Co * To, T(0));
  auto xv = x.data(), wv = w.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t co = 0; co < Co; ++co) {
      T* y = out.data() + (b * Co + co) * To;
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        const T* xi = xv.data() + (b * Ci + ci) * T_in;
        const T* wk = wv.data() + (co * Ci + ci) * K;
        for (std::size_t t = 0; t < To; ++t) {
          const T* xs = xi + t * stride;
          T acc = 0;
          for (std::size_t k = 0; k < K; ++k) acc += wk[k] * xs[k];
          y[t] += acc;
        }
      }
    }
  auto r = make_result<T>("conv1d", Shape{B, Co, To}, std::move(out), {&x, &w});
  if (r.requires_grad())
    r.node()->backward = [=](Node<T>& self) {
      auto& px = *self.parents[0];
      auto& pw = *self.parents[1];
      auto gx = grad_of(px);
      auto gw = grad_of(pw);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t co = 0; co < Co; ++co) {
          const T* dy = self.grad.data() + (b * Co + co) * To;
          for (std::size_t ci = 0; ci < Ci; ++ci) {
            const std::size_t xo = (b * Ci + ci) * T_in;
            const std::size_t wo = (co * Ci + ci) * K;
            for (std::size_t t = 0; t < To; ++t) {
              const T d = dy[t];
              if (d == T(0)) continue;
              for (std::size_t k = 0; k < K; ++k) {
                if (!gx.empty()) gx[xo + t * stride + k] += pw.value[wo + k] * d;
                if (!gw.empty()) gw[wo + k] += px.value[xo + t * stride + k] * d;
              }
            }
          }
        }
    };
  return r;
}

template <typename T>
Tensor<T> conv_transpose1d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride) {
  require_rank(x.shape(), 3, "conv_transpose1d");
  require_rank(w.shape(), 3, "conv_transpose1d");
  if (stride == 0) throw ConfigError("conv_transpose1d: stride must be positive");
  const std::size_t B = x.dim(0), Ci = x.dim(1), T_in = x.dim(2);
  const std::size_t Co = w.dim(1), K = w.dim(2);
  if (w.dim(0) != Ci)
    throw DimensionError("conv_transpose1d: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(w.shape()));
  const std::size_t To = (T_in - 1) * stride + K;
  std::vector<T> out(B * Co * To, T(0));
  auto xv = x.data(), wv = w.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t ci = 0; ci < Ci; ++ci) {
      const T* xi = xv.data() + (b * Ci + ci) * T_in;
      for (std::size_t co = 0; co < Co; ++co) {
        T* y = out.data() + (b * Co + co) * To;
        const T* wk = wv.data() + (ci * Co + co) * K;
        for (std::size_t t = 0; t < T_in; ++t) {
          const T v = xi[t];
          T* ys = y + t * stride;
          for (std::size_t k = 0; k < K; ++k) ys[k] += v * wk[k];
        }
      }
    }
  auto r = make_result<T>("conv_transpose1d", Shape{B, Co, To}, std::move(out), {&x, &w});
  if (r.requires_grad())
    r.node()->backward = [=](Node<T>& self) {
      auto& px = *self.parents[0];
      auto& pw = *self.parents[1];
      auto gx = grad_of(px);
      auto gw = grad_of(pw);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t ci = 0; ci < Ci; ++ci) {
          const std::size_t xo = (b * Ci + ci) * T_in;
          for (std::size_t co = 0; co < Co; ++co) {
            const T* dy = self.grad.data() + (b * Co + co) * To;
            const std::size_t wo = (ci * Co + co) * K;
            for (std::size_t t = 0; t < T_in; ++t) {
              const T* dys = dy + t * stride;
              T acc = 0;
              for (std::size_t k = 0; k < K; ++k) {
                acc += pw.value[wo + k] * dys[k];
                if (!gw.empty()) gw[wo + k] += px.value[xo + t] * dys[k];
              }
              if (!gx.empty()) gx[xo + t] += acc;
            }
          }
        }
    };
  return r;
}

// ---------------------------------------------------------------- activations

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
  auto r = make_result<T>("relu", x.shape(), std::move(out), {&x});
  if (r.requires_grad())
    r.node()->backward = [](Node<T>& self) {
      auto& p = *self.parents[0];
      if (auto g = grad_of(p); !g.empty())
        for (std::size_t i = 0; i < g.size(); ++i)
          if (p.value[i] > T(0)) g[i] += self.grad[i];
    };
  return r;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(xv[i]);
  auto r = make_result<T>("sigmoid", x.shape(), std::move(out), {&x});
  if (r.requires_grad())
    r.node()->backward = [](Node<T>& self) {
      if (auto g = grad_of(*self.parents[0]); !g.empty())
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T s = self.value[i];
          g[i] += self.grad[i] * s * (T(1) - s);
        }
    };
  return r;
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xv[i]);
  auto r = make_result<T>("tanh", x.shape(), std::move(out), {&x});
  if (r.requires_grad())
    r.node()->backward = [](Node<T>& self) {
      if (auto g = grad_of(*self.parents[0]); !g.empty())
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T t = self.value[i];
          g[i] += self.grad[i] * (T(1) - t * t);
        }
    };
  return r;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const int rank = static_cast<int>(x.rank());
  const int ax = axis < 0 ? rank + axis : axis;
  if (ax < 0 || ax >= rank)
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " +
                         shape_str(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= x.dim(i);
  for (int i = ax + 1; i < rank; ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(ax);
  std::vector<T> out(x.numel());
  auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t i = 0; i < n; ++i) {
        const T v = xv[base + i * inner];
        if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
        mx = std::max(mx, v);
      }
      T z = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const T e = std::exp(xv[base + i * inner] - mx);
        out[base + i * inner] = e;
        z += e;
      }
      const T inv = T(1) / z;
      for (std::size_t i = 0; i < n; ++i) out[base + i * inner] *= inv;
    }
  auto r = make_result<T>("softmax", x.shape(), std::move(out), {&x});
  if (r.requires_grad())
    r.node()->backward = [outer, inner, n](Node<T>& self) {
      auto g = grad_of(*self.parents[0]);
      if (g.empty()) return;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * n * inner + in;
          T dot = 0;
          for (std::size_t i = 0; i < n; ++i)
            dot += self.grad[base + i * inner] * self.value[base + i * inner];
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j = base + i * inner;
            g[j] += self.value[j] * (self.grad[j] - dot);
          }
        }
    };
  return r;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: rate must be in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = rng.uniform() < p ? T(0) : keep;
  std::vector<T> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
  auto r = make_result<T>("dropout", x.shape(), std::move(out), {&x});
  if (r.requires_grad())
    r.node()->backward = [mask = std::move(mask)](Node<T>& self) {
      if (auto g = grad_of(*self.parents[0]); !g.empty())
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
    };
  return r;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps) {
  const std::size_t c = x.shape().back();
  if (gamma.rank() != 1 || gamma.dim(0) != c || beta.shape() != gamma.shape())
    throw DimensionError("layer_norm: input " + shape_str(x.shape()) + " with scale " +
                         shape_str(gamma.shape()) + " and shift " + shape_str(beta.shape()));
  const std::size_t rows = x.numel() / c;
  std::vector<T> xhat(x.numel()), inv_std(rows), out(x.numel());
  auto xv = x.data(), gv = gamma.data(), bv = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * c;
    double mu = 0;
    for (std::size_t i = 0; i < c; ++i) mu += xr[i];
    mu /= static_cast<double>(c);
    double var = 0;
    for (std::size_t i = 0; i < c; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = static_cast<T>(is);
    for (std::size_t i = 0; i < c; ++i) {
      const T h = static_cast<T>((xr[i] - mu) * is);
      xhat[r * c + i] = h;
      out[r * c + i] = h * gv[i] + bv[i];
    }
  }
  auto res = make_result<T>("layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta});
  if (res.requires_grad())
    res.node()->backward = [rows, c, xhat = std::move(xhat),
                            inv_std = std::move(inv_std)](Node<T>& self) {
      auto gx = grad_of(*self.parents[0]);
      auto& pg = *self.parents[1];
      auto gg = grad_of(pg);
      auto gb = grad_of(*self.parents[2]);
      std::vector<T> dxh(c);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* dy = self.grad.data() + r * c;
        const T* h = xhat.data() + r * c;
        T m1 = 0, m2 = 0;
        for (std::size_t i = 0; i < c; ++i) {
          if (!gg.empty()) gg[i] += dy[i] * h[i];
          if (!gb.empty()) gb[i] += dy[i];
          dxh[i] = dy[i] * pg.value[i];
          m1 += dxh[i];
          m2 += dxh[i] * h[i];
        }
        if (gx.empty()) continue;
        m1 /= static_cast<T>(c);
        m2 /= static_cast<T>(c);
        for (std::size_t i = 0; i < c; ++i)
          gx[r * c + i] += inv_std[r] * (dxh[i] - m1 - h[i] * m2);
      }
    };
  return res;
}

// -------------------------------------------------------------- time helpers

template <typename T>
Tensor<T> fit_length(const Tensor<T>& x, std::size_t len) {
  if (len == 0) throw DimensionError("fit_length: target length must be positive");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  const std::size_t keep = std::min(n, len);
  std::vector<T> out(rows * len, T(0));
  auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(xv.data() + r * n, keep, out.data() + r * len);
  Shape s = x.shape();
  s.back() = len;
  auto res = make_result<T>("fit_length", std::move(s), std::move(out), {&x});
  if (res.requires_grad())
    res.node()->backward = [rows, n, len, keep](Node<T>& self) {
      if (auto g = grad_of(*self.parents[0]); !g.empty())
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < keep; ++i) g[r * n + i] += self.grad[r * len + i];
    };
  return res;
}

template <typename T>
Tensor<T> add_key_bias(const Tensor<T>& scores, const Tensor<T>& bias) {
  require_rank(scores.shape(), 4, "add_key_bias");
  require_rank(bias.shape(), 3, "add_key_bias");
  const std::size_t B = scores.dim(0), H = scores.dim(1), Tq = scores.dim(2), Tk = scores.dim(3);
  if (bias.dim(0) != B || bias.dim(1) != H || bias.dim(2) != Tk)
    throw DimensionError("add_key_bias: scores " + shape_str(scores.shape()) + " vs bias " +
                         shape_str(bias.shape()));
  std::vector<T> out(scores.numel());
  auto sv = scores.data(), bv = bias.data();
  for (std::size_t bh = 0; bh < B * H; ++bh)
    for (std::size_t q = 0; q < Tq; ++q) {
      const std::size_t o = (bh * Tq + q) * Tk;
      for (std::size_t k = 0; k < Tk; ++k) out[o + k] = sv[o + k] + bv[bh * Tk + k];
    }
  auto r = make_result<T>("add_key_bias", scores.shape(), std::move(out), {&scores, &bias});
  if (r.requires_grad())
    r.node()->backward = [B, H, Tq, Tk](Node<T>& self) {
      if (auto g = grad_of(*self.parents[0]); !g.empty())
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      if (auto g = grad_of(*self.parents[1]); !g.empty())
        for (std::size_t bh = 0; bh < B * H; ++bh)
          for (std::size_t q = 0; q < Tq; ++q) {
            const std::size_t o = (bh * Tq + q) * Tk;
            for (std::size_t k = 0; k < Tk; ++k) g[bh * Tk + k] += self.grad[o + k];
          }
    };
  return r;
}

namespace {

// Row-wise probabilities of one head: P = softmax(Q K^T * k + bias).
template <typename T>
void head_probs(const T* q, const T* kk, const T* bias, std::size_t L, std::size_t Dh, T k, T* p) {
  gemm<T>(false, true, L, L, Dh, q, kk, p, false);
  for (std::size_t i = 0; i < L; ++i) {
    T* row = p + i * L;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < L; ++j) {
      row[j] *= k;
      if (bias) row[j] += bias[j];
      if (!std::isfinite(row[j])) throw NumericError("attention: non-finite score");
      mx = std::max(mx, row[j]);
    }
    T z = 0;
    for (std::size_t j = 0; j < L; ++j) {
      row[j] = std::exp(row[j] - mx);
      z += row[j];
    }
    const T inv = T(1) / z;
    for (std::size_t j = 0; j < L; ++j) row[j] *= inv;
  }
}

}  // namespace

template <typename T>
Tensor<T> fused_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                          const std::type_identity_t<Tensor<T>>* bias, double scale_factor) {
  require_rank(q.shape(), 4, "fused_attention");
  if (k.shape() != q.shape() || v.rank() != 4 || v.dim(0) != q.dim(0) || v.dim(1) != q.dim(1) ||
      v.dim(2) != q.dim(2))
    throw DimensionError("fused_attention: Q " + shape_str(q.shape()) + ", K " + shape_str(k.shape()) +
                         ", V " + shape_str(v.shape()));
  const std::size_t BH = q.dim(0) * q.dim(1), L = q.dim(2), Dh = q.dim(3), Dv = v.dim(3);
  if (bias && (bias->rank() != 3 || bias->dim(0) != q.dim(0) || bias->dim(1) != q.dim(1) || bias->dim(2) != L))
    throw DimensionError("fused_attention: bias " + shape_str(bias->shape()) + " vs Q " + shape_str(q.shape()));
  const T kf = static_cast<T>(scale_factor);
  std::vector<T> out(BH * L * Dv);
  std::vector<T> p(L * L);
  const T* qd = q.data().data();
  const T* kd = k.data().data();
  const T* vd = v.data().data();
  const T* bd = bias ? bias->data().data() : nullptr;
  for (std::size_t i = 0; i < BH; ++i) {
    head_probs<T>(qd + i * L * Dh, kd + i * L * Dh, bd ? bd + i * L : nullptr, L, Dh, kf, p.data());
    gemm<T>(false, false, L, Dv, L, p.data(), vd + i * L * Dv, out.data() + i * L * Dv, false);
  }
  auto r = bias ? make_result<T>("fused_attention", Shape{q.dim(0), q.dim(1), L, Dv}, std::move(out),
                                 {&q, &k, &v, bias})
                : make_result<T>("fused_attention", Shape{q.dim(0), q.dim(1), L, Dv}, std::move(out),
                                 {&q, &k, &v});
  if (r.requires_grad()) {
    const bool has_bias = bias != nullptr;
    // Probabilities are recomputed per head instead of kept on the tape.
    r.node()->backward = [BH, L, Dh, Dv, kf, has_bias](Node<T>& self) {
      auto& pq = *self.parents[0];
      auto& pk = *self.parents[1];
      auto& pv = *self.parents[2];
      auto gq = grad_of(pq);
      auto gk = grad_of(pk);
      auto gv = grad_of(pv);
      std::span<T> gb;
      const T* bv = nullptr;
      if (has_bias) {
        gb = grad_of(*self.parents[3]);
        bv = self.parents[3]->value.data();
      }
      std::vector<T> p(L * L), dp(L * L);
      for (std::size_t i = 0; i < BH; ++i) {
        const T* qi = pq.value.data() + i * L * Dh;
        const T* ki = pk.value.data() + i * L * Dh;
        const T* vi = pv.value.data() + i * L * Dv;
        const T* go = self.grad.data() + i * L * Dv;
        head_probs<T>(qi, ki, bv ? bv + i * L : nullptr, L, Dh, kf, p.data());
        if (!gv.empty()) gemm<T>(true, false, L, Dv, L, p.data(), go, gv.data() + i * L * Dv, true);
        if (gq.empty() && gk.empty() && gb.empty()) continue;
        gemm<T>(false, true, L, L, Dv, go, vi, dp.data(), false);
        // dS = P * (dP - rowdot(dP, P)); the score scale folds into dQ and dK.
        for (std::size_t a = 0; a < L; ++a) {
          const T* pr = p.data() + a * L;
          T* dr = dp.data() + a * L;
          T dot = 0;
          for (std::size_t j = 0; j < L; ++j) dot += dr[j] * pr[j];
          for (std::size_t j = 0; j < L; ++j) dr[j] = pr[j] * (dr[j] - dot);
        }
        if (!gb.empty())
          for (std::size_t a = 0; a < L; ++a)
            for (std::size_t j = 0; j < L; ++j) gb[i * L + j] += dp[a * L + j];
        for (auto& x : dp) x *= kf;
        if (!gq.empty()) gemm<T>(false, false, L, Dh, L, dp.data(), ki, gq.data() + i * L * Dh, true);
        if (!gk.empty()) gemm<T>(true, false, L, Dh, L, dp.data(), qi, gk.data() + i * L * Dh, true);
      }
    };
  }
  return r;
}

template <typename T>
Tensor<T> interp_linear(const Tensor<T>& x, std::size_t len) {
  require_rank(x.shape(), 3, "interp_linear");
  if (len == 0) throw DimensionError("interp_linear: target length must be positive");
  const std::size_t B = x.dim(0), N = x.dim(1), D = x.dim(2);
  // Output j reads rows lo[j] and lo[j]+1 with weight frac[j] on the latter.
  std::vector<std::size_t> lo(len);
  std::vector<T> frac(len, T(0));
  for (std::size_t j = 0; j < len; ++j) {
    if (len == 1 || N == 1) {
      lo[j] = 0;
      continue;
    }
    const std::size_t num = j * (N - 1);
    lo[j] = num / (len - 1);
    const std::size_t rem = num % (len - 1);
    frac[j] = static_cast<T>(static_cast<double>(rem) / static_cast<double>(len - 1));
  }
  std::vector<T> out(B * len * D);
  auto xv = x.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < len; ++j) {
      const T* a = xv.data() + (b * N + lo[j]) * D;
      T* y = out.data() + (b * len + j) * D;
      if (frac[j] == T(0)) {
        std::copy_n(a, D, y);
      } else {
        const T* c = a + D;
        for (std::size_t d = 0; d < D; ++d) y[d] = a[d] * (T(1) - frac[j]) + c[d] * frac[j];
      }
    }
  auto r = make_result<T>("interp_linear", Shape{B, len, D}, std::move(out), {&x});
  if (r.requires_grad())
    r.node()->backward = [B, N, D, len, lo = std::move(lo), frac = std::move(frac)](Node<T>& self) {
      auto g = grad_of(*self.parents[0]);
      if (g.empty()) return;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t j = 0; j < len; ++j) {
          const T* dy = self.grad.data() + (b * len + j) * D;
          T* ga = g.data() + (b * N + lo[j]) * D;
          if (frac[j] == T(0)) {
            for (std::size_t d = 0; d < D; ++d) ga[d] += dy[d];
          } else {
            for (std::size_t d = 0; d < D; ++d) {
              ga[d] += dy[d] * (T(1) - frac[j]);
              ga[D + d] += dy[d] * frac[j];
            }
          }
        }
    };
  return r;
}

std::size_t chunk_hop(std::size_t chunk_len) { return (chunk_len + 1) / 2; }

std::size_t chunk_count(std::size_t length, std::size_t chunk_len) {
  if (length <= chunk_len) return 1;
  const std::size_t hop = chunk_hop(chunk_len);
  return 1 + (length - chunk_len + hop - 1) / hop;
}

template <typename T>
Tensor<T> overlap_chunk(const Tensor<T>& x, std::size_t L) {
  require_rank(x.shape(), 3, "overlap_chunk");
  if (L == 0) throw ConfigError("overlap_chunk: chunk length must be positive");
  const std::size_t B = x.dim(0), Tn = x.dim(1), C = x.dim(2);
  const std::size_t hop = chunk_hop(L), S = chunk_count(Tn, L);
  std::vector<T> out(B * S * L * C, T(0));
  auto xv = x.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t l = 0; l < L; ++l) {
        const std::size_t t = s * hop + l;
        if (t >= Tn) break;
        std::copy_n(xv.data() + (b * Tn + t) * C, C, out.data() + ((b * S + s) * L + l) * C);
      }
  auto r = make_result<T>("overlap_chunk", Shape{B, S, L, C}, std::move(out), {&x});
  if (r.requires_grad())
    r.node()->backward = [B, Tn, C, S, L, hop](Node<T>& self) {
      auto g = grad_of(*self.parents[0]);
      if (g.empty()) return;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t s = 0; s < S; ++s)
          for (std::size_t l = 0; l < L; ++l) {
            const std::size_t t = s * hop + l;
            if (t >= Tn) break;
            const T* dy = self.grad.data() + ((b * S + s) * L + l) * C;
            T* gx = g.data() + (b * Tn + t) * C;
            for (std::size_t c = 0; c < C; ++c) gx[c] += dy[c];
          }
    };
  return r;
}

template <typename T>
Tensor<T> overlap_unchunk(const Tensor<T>& y, std::size_t Tn) {
  require_rank(y.shape(), 4, "overlap_unchunk");
  const std::size_t B = y.dim(0), S = y.dim(1), L = y.dim(2), C = y.dim(3);
  const std::size_t hop = chunk_hop(L);
  if (chunk_count(Tn, L) != S)
    throw DimensionError("overlap_unchunk: " + shape_str(y.shape()) + " cannot cover length " +
                         std::to_string(Tn));
  std::vector<T> count(Tn, T(0));
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t l = 0; l < L && s * hop + l < Tn; ++l) count[s * hop + l] += T(1);
  std::vector<T> out(B * Tn * C, T(0));
  auto yv = y.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t l = 0; l < L; ++l) {
        const std::size_t t = s * hop + l;
        if (t >= Tn) break;
        const T* src = yv.data() + ((b * S + s) * L + l) * C;
        T* dst = out.data() + (b * Tn + t) * C;
        for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
      }
    for (std::size_t t = 0; t < Tn; ++t)
      for (std::size_t c = 0; c < C; ++c) out[(b * Tn + t) * C + c] /= count[t];
  }
  auto r = make_result<T>("overlap_unchunk", Shape{B, Tn, C}, std::move(out), {&y});
  if (r.requires_grad())
    r.node()->backward = [B, Tn, C, S, L, hop, count = std::move(count)](Node<T>& self) {
      auto g = grad_of(*self.parents[0]);
      if (g.empty()) return;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t s = 0; s < S; ++s)
          for (std::size_t l = 0; l < L; ++l) {
            const std::size_t t = s * hop + l;
            if (t >= Tn) break;
            const T* dy = self.grad.data() + (b * Tn + t) * C;
            T* gy = g.data() + ((b * S + s) * L + l) * C;
            for (std::size_t c = 0; c < C; ++c) gy[c] += dy[c] / count[t];
          }
    };
  return r;
}

#define AVSE_INSTANTIATE_OPS(T)                                                             \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> scale(const Tensor<T>&, double);                                       \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> sum(const Tensor<T>&);                                                 \
  template Tensor<T> mean(const Tensor<T>&);                                                \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool, bool);                   \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                      \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);            \
  template Tensor<T> conv1d(const Tensor<T>&, const Tensor<T>&, std::size_t);               \
  template Tensor<T> conv_transpose1d(const Tensor<T>&, const Tensor<T>&, std::size_t);     \
  template Tensor<T> relu(const Tensor<T>&);                                                \
  template Tensor<T> sigmoid(const Tensor<T>&);                                             \
  template Tensor<T> tanh(const Tensor<T>&);                                                \
  template Tensor<T> softmax(const Tensor<T>&, int);                                        \
  template Tensor<T> dropout(const Tensor<T>&, double, bool, Rng&);                         \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                double);                                                    \
  template Tensor<T> fit_length(const Tensor<T>&, std::size_t);                             \
  template Tensor<T> add_key_bias(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> interp_linear(const Tensor<T>&, std::size_t);                          \
  template Tensor<T> fused_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                     const Tensor<T>*, double);                             \
  template Tensor<T> overlap_chunk(const Tensor<T>&, std::size_t);                          \
  template Tensor<T> overlap_unchunk(const Tensor<T>&, std::size_t);

AVSE_INSTANTIATE_OPS(float)
AVSE_INSTANTIATE_OPS(double)

}  // namespace avse
