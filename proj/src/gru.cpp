// SPDX-License-Identifier: Apache-2.0

#include "avse/gru.hpp"

#include <cmath>
#include <string>

#include "avse/error.hpp"
#include "avse/ops.hpp"
#include "gemm.hpp"

namespace avse {

using detail::gemm;
using detail::grad_of;

template <typename T>
GruParams<T> GruParams<T>::init(std::size_t input, std::size_t hidden, Rng& rng) {
  const double k = 1.0 / std::sqrt(static_cast<double>(hidden));
  GruParams p{Tensor<T>::uniform({3 * hidden, input}, rng, -k, k),
              Tensor<T>::uniform({3 * hidden, hidden}, rng, -k, k),
              Tensor<T>::uniform({3 * hidden}, rng, -k, k),
              Tensor<T>::uniform({3 * hidden}, rng, -k, k)};
  p.w_ih.set_requires_grad(true);
  p.w_hh.set_requires_grad(true);
  p.b_ih.set_requires_grad(true);
  p.b_hh.set_requires_grad(true);
  return p;
}

template <typename T>
GruParams<T> GruParams<T>::zeros(std::size_t input, std::size_t hidden) {
  GruParams p{Tensor<T>({3 * hidden, input}), Tensor<T>({3 * hidden, hidden}),
              Tensor<T>({3 * hidden}), Tensor<T>({3 * hidden})};
  p.w_ih.set_requires_grad(true);
  p.w_hh.set_requires_grad(true);
  p.b_ih.set_requires_grad(true);
  p.b_hh.set_requires_grad(true);
  return p;
}

namespace {

template <typename T>
T sig(T v) {
  return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

template <typename T>
void check_params(const GruParams<T>& p, std::size_t D) {
  const std::size_t H = p.w_hh.dim(1);
  if (p.w_ih.rank() != 2 || p.w_hh.rank() != 2 || p.w_ih.dim(0) != 3 * H ||
      p.w_hh.dim(0) != 3 * H || p.b_ih.numel() != 3 * H || p.b_hh.numel() != 3 * H)
    throw DimensionError("gru: inconsistent parameters w_ih " + shape_str(p.w_ih.shape()) +
                         " w_hh " + shape_str(p.w_hh.shape()));
  if (p.w_ih.dim(1) != D)
    throw DimensionError("gru: input width " + std::to_string(D) + " vs w_ih " +
                         shape_str(p.w_ih.shape()));
}

// x[N x L x D], h0[N x H] -> [N x L x H]; shared by the cell and sequence forms.
template <typename T>
Tensor<T> gru_run(const Tensor<T>& x, const Tensor<T>& h0, const GruParams<T>& p,
                  const char* name) {
  const std::size_t N = x.dim(0), L = x.dim(1), D = x.dim(2);
  check_params(p, D);
  const std::size_t H = p.hidden_size(), G = 3 * H;
  if (h0.rank() != 2 || h0.dim(0) != N || h0.dim(1) != H)
    throw DimensionError("gru: state " + shape_str(h0.shape()) + " for input " +
                         shape_str(x.shape()));

  const T* wih = p.w_ih.data().data();
  const T* whh = p.w_hh.data().data();
  const T* bih = p.b_ih.data().data();
  const T* bhh = p.b_hh.data().data();

  // Input contributions for every (n, t) at once.
  std::vector<T> gi(N * L * G);
  gemm<T>(false, true, N * L, G, D, x.data().data(), wih, gi.data(), false);
  for (std::size_t r = 0; r < N * L; ++r)
    for (std::size_t g = 0; g < G; ++g) gi[r * G + g] += bih[g];

  // Saved activations, step-major [L x N x H].
  std::vector<T> rs(L * N * H), zs(L * N * H), ns(L * N * H), ghn(L * N * H), hp(L * N * H);
  std::vector<T> out(N * L * H);
  std::vector<T> h(h0.data().begin(), h0.data().end());
  std::vector<T> gh(N * G);
  for (std::size_t t = 0; t < L; ++t) {
    gemm<T>(false, true, N, G, H, h.data(), whh, gh.data(), false);
    for (std::size_t n = 0; n < N; ++n) {
      const T* a = gi.data() + (n * L + t) * G;
      const T* b = gh.data() + n * G;
      const std::size_t s = (t * N + n) * H;
      for (std::size_t j = 0; j < H; ++j) {
        const T r = sig(a[j] + b[j] + bhh[j]);
        const T z = sig(a[H + j] + b[H + j] + bhh[H + j]);
        const T hn = b[2 * H + j] + bhh[2 * H + j];
        const T c = std::tanh(a[2 * H + j] + r * hn);
        const T prev = h[n * H + j];
        const T next = (T(1) - z) * c + z * prev;
        rs[s + j] = r;
        zs[s + j] = z;
        ns[s + j] = c;
        ghn[s + j] = hn;
        hp[s + j] = prev;
        out[(n * L + t) * H + j] = next;
      }
    }
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t j = 0; j < H; ++j) h[n * H + j] = out[(n * L + t) * H + j];
  }

  auto res = detail::make_result<T>(name, Shape{N, L, H}, std::move(out),
                                    {&x, &h0, &p.w_ih, &p.w_hh, &p.b_ih, &p.b_hh});
  if (!res.requires_grad()) return res;
  res.node()->backward = [N, L, D, H, G, rs = std::move(rs), zs = std::move(zs),
                          ns = std::move(ns), ghn = std::move(ghn),
                          hp = std::move(hp)](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pwih = *self.parents[2];
    auto& pwhh = *self.parents[3];
    std::vector<T> dgi(N * L * G), dgh(L * N * G), carry(N * H, T(0));
    for (std::size_t t = L; t-- > 0;) {
      T* dght = dgh.data() + t * N * G;
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t s = (t * N + n) * H;
        T* dgin = dgi.data() + (n * L + t) * G;
        for (std::size_t j = 0; j < H; ++j) {
          const T dh = self.grad[(n * L + t) * H + j] + carry[n * H + j];
          const T r = rs[s + j], z = zs[s + j], c = ns[s + j];
          const T dc = dh * (T(1) - z);
          const T dz = dh * (hp[s + j] - c);
          const T dan = dc * (T(1) - c * c);
          const T dar = dan * ghn[s + j] * r * (T(1) - r);
          const T daz = dz * z * (T(1) - z);
          dgin[j] = dar;
          dgin[H + j] = daz;
          dgin[2 * H + j] = dan;
          dght[n * G + j] = dar;
          dght[n * G + H + j] = daz;
          dght[n * G + 2 * H + j] = dan * r;
          carry[n * H + j] = dh * z;
        }
      }
      gemm<T>(false, false, N, H, G, dght, pwhh.value.data(), carry.data(), true);
    }
    if (auto g = grad_of(px); !g.empty())
      gemm<T>(false, false, N * L, D, G, dgi.data(), pwih.value.data(), g.data(), true);
    if (auto g = grad_of(*self.parents[1]); !g.empty())
      for (std::size_t i = 0; i < N * H; ++i) g[i] += carry[i];
    if (auto g = grad_of(pwih); !g.empty())
      gemm<T>(true, false, G, D, N * L, dgi.data(), px.value.data(), g.data(), true);
    if (auto g = grad_of(pwhh); !g.empty())
      gemm<T>(true, false, G, H, L * N, dgh.data(), hp.data(), g.data(), true);
    if (auto g = grad_of(*self.parents[4]); !g.empty())
      for (std::size_t r = 0; r < N * L; ++r)
        for (std::size_t k = 0; k < G; ++k) g[k] += dgi[r * G + k];
    if (auto g = grad_of(*self.parents[5]); !g.empty())
      for (std::size_t r = 0; r < L * N; ++r)
        for (std::size_t k = 0; k < G; ++k) g[k] += dgh[r * G + k];
  };
  return res;
}

}  // namespace

template <typename T>
Tensor<T> gru_cell(const Tensor<T>& x, const Tensor<T>& h, const GruParams<T>& p) {
  if (x.rank() != 2 || h.rank() != 2 || x.dim(0) != h.dim(0))
    throw DimensionError("gru_cell: input " + shape_str(x.shape()) + " state " +
                         shape_str(h.shape()));
  const std::size_t B = x.dim(0), D = x.dim(1);
  Tensor<T> x3 = reshape(x, {B, 1, D});
  Tensor<T> y = gru_run(x3, h, p, "gru_cell");
  return reshape(y, {B, p.hidden_size()});
}

template <typename T>
Tensor<T> gru_sequence(const Tensor<T>& x, const GruParams<T>& p) {
  if (x.rank() != 3) throw DimensionError("gru_sequence: expected [N x L x D], got " + shape_str(x.shape()));
  Tensor<T> h0({x.dim(0), p.hidden_size()});
  return gru_run(x, h0, p, "gru_sequence");
}

template struct GruParams<float>;
template struct GruParams<double>;
template Tensor<float> gru_cell(const Tensor<float>&, const Tensor<float>&, const GruParams<float>&);
template Tensor<double> gru_cell(const Tensor<double>&, const Tensor<double>&, const GruParams<double>&);
template Tensor<float> gru_sequence(const Tensor<float>&, const GruParams<float>&);
template Tensor<double> gru_sequence(const Tensor<double>&, const GruParams<double>&);

}  // namespace avse
