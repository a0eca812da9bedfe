// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "avse/encoders.hpp"
#include "avse/error.hpp"
#include "gemm.hpp"

namespace avse {

namespace {

// Channel-major feature map of one frame.
template <typename T>
struct FeatureMap {
  std::size_t c = 0, h = 0, w = 0;
  std::vector<T> v;
};

// im2col for a k x k window with zero padding `pad`. Rows are (ci, ky, kx).
template <typename T>
void im2col(const FeatureMap<T>& x, std::size_t k, std::size_t stride, std::size_t pad,
            std::size_t ho, std::size_t wo, std::vector<T>& col) {
  col.assign(x.c * k * k * ho * wo, T(0));
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < x.c; ++ci)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx, ++row) {
        T* dst = col.data() + row * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(x.h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(x.w)) continue;
            dst[oy * wo + ox] = x.v[(ci * x.h + static_cast<std::size_t>(iy)) * x.w + static_cast<std::size_t>(ix)];
          }
        }
      }
}

std::size_t out_extent(std::size_t n, std::size_t k, std::size_t stride, std::size_t pad) {
  return (n + 2 * pad - k) / stride + 1;
}

// w: [Cout x Cin x k x k], "same"-style padding k/2.
template <typename T>
FeatureMap<T> conv2d(const FeatureMap<T>& x, const Tensor<T>& w, std::size_t stride) {
  const std::size_t cout = w.dim(0), k = w.dim(2), pad = k / 2;
  FeatureMap<T> y;
  y.c = cout;
  y.h = out_extent(x.h, k, stride, pad);
  y.w = out_extent(x.w, k, stride, pad);
  y.v.resize(cout * y.h * y.w);
  std::vector<T> col;
  im2col(x, k, stride, pad, y.h, y.w, col);
  detail::gemm<T>(false, false, cout, y.h * y.w, x.c * k * k, w.data().data(), col.data(),
                  y.v.data(), false);
  return y;
}

template <typename T>
void relu_inplace(FeatureMap<T>& x) {
  for (auto& v : x.v) v = std::max(v, T(0));
}

// 3x3 window, stride 2, padding 1; padded cells never win.
template <typename T>
FeatureMap<T> maxpool(const FeatureMap<T>& x) {
  FeatureMap<T> y;
  y.c = x.c;
  y.h = out_extent(x.h, 3, 2, 1);
  y.w = out_extent(x.w, 3, 2, 1);
  y.v.resize(y.c * y.h * y.w);
  for (std::size_t c = 0; c < x.c; ++c)
    for (std::size_t oy = 0; oy < y.h; ++oy)
      for (std::size_t ox = 0; ox < y.w; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        for (std::size_t ky = 0; ky < 3; ++ky)
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * 2 + ky) - 1;
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * 2 + kx) - 1;
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(x.h) || ix >= static_cast<std::ptrdiff_t>(x.w))
              continue;
            best = std::max(best, x.v[(c * x.h + static_cast<std::size_t>(iy)) * x.w + static_cast<std::size_t>(ix)]);
          }
        y.v[(c * y.h + oy) * y.w + ox] = best;
      }
  return y;
}

template <typename T>
Tensor<T> he_init(Shape shape, std::size_t fan_in, Rng& rng) {
  return Tensor<T>::randn(std::move(shape), rng, std::sqrt(2.0 / static_cast<double>(fan_in)));
}

}  // namespace

template <typename T>
VisualEncoder<T> VisualEncoder<T>::init(const ModelConfig& cfg, Rng& rng) {
  VisualEncoder e;
  e.cfg_ = cfg;
  const std::size_t kt = cfg.front_kernel_t, ks = cfg.front_kernel_s;
  const auto& ch = cfg.visual_channels;
  e.front_ = he_init<T>({ch[0], kt, ks, ks}, kt * ks * ks, rng);
  const std::size_t strides[4] = {1, 2, 2, 2};
  std::size_t cin = ch[0];
  for (std::size_t s = 0; s < 4; ++s) {
    Residual r;
    r.stride = strides[s];
    r.conv1 = he_init<T>({ch[s], cin, 3, 3}, cin * 9, rng);
    r.conv2 = he_init<T>({ch[s], ch[s], 3, 3}, ch[s] * 9, rng);
    r.project = r.stride != 1 || cin != ch[s];
    r.shortcut = r.project ? he_init<T>({ch[s], cin, 1, 1}, cin, rng) : Tensor<T>({1});
    e.stages_.push_back(std::move(r));
    cin = ch[s];
  }
  e.head_ = Tensor<T>::randn({cin, cfg.visual_dim}, rng, 1.0 / std::sqrt(static_cast<double>(cin)));
  return e;
}

template <typename T>
Tensor<T> VisualEncoder<T>::encode(const VisualStream& v) const {
  if (v.mode == VisualStream::Mode::kFeatures) {
    if (v.dim != cfg_.visual_dim)
      throw DimensionError("visual features: d_v " + std::to_string(v.dim) + " but the model expects " +
                           std::to_string(cfg_.visual_dim));
    return Tensor<T>({v.count, v.dim}, std::vector<T>(v.values.begin(), v.values.end()));
  }
  if (v.height != cfg_.frame_size || v.width != cfg_.frame_size)
    throw DimensionError("visual frames: got " + std::to_string(v.height) + "x" + std::to_string(v.width) +
                         ", preset expects " + std::to_string(cfg_.frame_size) + "x" +
                         std::to_string(cfg_.frame_size));
  const std::size_t N = v.count, H = v.height, W = v.width;
  const std::size_t kt = front_.dim(1);
  const std::size_t half = kt / 2;
  const std::size_t dv = head_.dim(1);
  std::vector<T> out(N * dv);

  for (std::size_t n = 0; n < N; ++n) {
    // Temporal window with edge frames repeated, treated as kt input planes.
    FeatureMap<T> x;
    x.c = kt;
    x.h = H;
    x.w = W;
    x.v.resize(kt * H * W);
    for (std::size_t dt = 0; dt < kt; ++dt) {
      const std::ptrdiff_t src = std::clamp<std::ptrdiff_t>(
          static_cast<std::ptrdiff_t>(n + dt) - static_cast<std::ptrdiff_t>(half), 0,
          static_cast<std::ptrdiff_t>(N) - 1);
      std::copy_n(v.values.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(src) * H * W), H * W,
                  x.v.begin() + static_cast<std::ptrdiff_t>(dt * H * W));
    }
    FeatureMap<T> y = conv2d(x, front_, 2);
    relu_inplace(y);
    y = maxpool(y);

    for (const auto& r : stages_) {
      FeatureMap<T> a = conv2d(y, r.conv1, r.stride);
      relu_inplace(a);
      FeatureMap<T> b = conv2d(a, r.conv2, 1);
      if (r.project) {
        FeatureMap<T> s = conv2d(y, r.shortcut, r.stride);
        for (std::size_t i = 0; i < b.v.size(); ++i) b.v[i] += s.v[i];
      } else {
        for (std::size_t i = 0; i < b.v.size(); ++i) b.v[i] += y.v[i];
      }
      relu_inplace(b);
      y = std::move(b);
    }

    std::vector<T> pooled(y.c, T(0));
    const std::size_t area = y.h * y.w;
    for (std::size_t c = 0; c < y.c; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < area; ++i) s += y.v[c * area + i];
      pooled[c] = static_cast<T>(s / static_cast<double>(area));
    }
    detail::gemm<T>(false, false, 1, dv, y.c, pooled.data(), head_.data().data(), out.data() + n * dv, false);
  }
  return Tensor<T>({N, dv}, std::move(out));
}

template <typename T>
void VisualEncoder<T>::collect(ParamList<T>& out) const {
  out.push_back({"visual.front", front_, false});
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const std::string p = "visual.stage" + std::to_string(s + 1);
    out.push_back({p + ".conv1", stages_[s].conv1, false});
    out.push_back({p + ".conv2", stages_[s].conv2, false});
    if (stages_[s].project) out.push_back({p + ".shortcut", stages_[s].shortcut, false});
  }
  out.push_back({"visual.head", head_, false});
}

template class VisualEncoder<float>;
template class VisualEncoder<double>;

}  // namespace avse
