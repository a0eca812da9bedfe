// SPDX-License-Identifier: Apache-2.0

#include "avse/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <string>

#include "avse/error.hpp"

namespace avse {

namespace {

// FFTW planning is not thread-safe; execution on new arrays is.
struct FftPlans {
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;
};

const FftPlans& plans_for(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, FftPlans> cache;
  std::lock_guard lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  double* in = fftw_alloc_real(n);
  fftw_complex* out = fftw_alloc_complex(n / 2 + 1);
  FftPlans p;
  const int ni = static_cast<int>(n);
  p.forward = fftw_plan_dft_r2c_1d(ni, in, out, FFTW_ESTIMATE);
  p.inverse = fftw_plan_dft_c2r_1d(ni, out, in, FFTW_ESTIMATE);
  fftw_free(in);
  fftw_free(out);
  return cache.emplace(n, p).first->second;
}

struct FftBuffers {
  explicit FftBuffers(std::size_t n)
      : real(fftw_alloc_real(n)), spec(fftw_alloc_complex(n / 2 + 1)) {}
  ~FftBuffers() {
    fftw_free(real);
    fftw_free(spec);
  }
  FftBuffers(const FftBuffers&) = delete;
  FftBuffers& operator=(const FftBuffers&) = delete;
  double* real;
  fftw_complex* spec;
};

void validate(const StftParams& p) {
  if (p.window_len == 0 || p.hop == 0 || p.hop > p.window_len)
    throw ConfigError("stft: need 0 < hop <= window_len, got window " +
                      std::to_string(p.window_len) + " hop " + std::to_string(p.hop));
}

void require_same_grid(const SpectroGram& a, const SpectroGram& b, const char* op) {
  if (a.frames != b.frames || a.bins != b.bins)
    throw DimensionError(std::string(op) + ": spectrogram " + std::to_string(a.frames) + "x" +
                         std::to_string(a.bins) + " vs " + std::to_string(b.frames) + "x" +
                         std::to_string(b.bins));
}

}  // namespace

std::vector<double> make_window(const StftParams& p) {
  validate(p);
  std::vector<double> w(p.window_len, 1.0);
  if (p.window == WindowKind::kHann) {
    const double n = static_cast<double>(p.window_len);
    for (std::size_t i = 0; i < p.window_len; ++i)
      w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / n);
  }
  return w;
}

bool satisfies_cola(const StftParams& p, double rel_tol) {
  const auto w = make_window(p);
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (std::size_t n = 0; n < p.hop; ++n) {
    double s = 0.0;
    for (std::size_t k = n; k < p.window_len; k += p.hop) s += w[k];
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  return hi > 0.0 && (hi - lo) <= rel_tol * hi;
}

RealMask RealMask::from_binary(const BinaryMask& m) {
  RealMask r{m.frames, m.bins, std::vector<double>(m.values.size())};
  for (std::size_t i = 0; i < m.values.size(); ++i) r.values[i] = m.values[i] ? 1.0 : 0.0;
  return r;
}

SpectroGram stft(std::span<const double> x, const StftParams& p) {
  validate(p);
  if (x.size() < p.window_len)
    throw SignalTooShortError("stft: " + std::to_string(x.size()) + " samples, window needs " +
                              std::to_string(p.window_len));
  const std::size_t n = p.window_len;
  const auto w = make_window(p);
  SpectroGram s;
  s.params = p;
  s.frames = (x.size() - n) / p.hop + 1;
  s.bins = n / 2 + 1;
  s.values.resize(s.frames * s.bins);
  const auto& plan = plans_for(n);
  FftBuffers buf(n);
  for (std::size_t t = 0; t < s.frames; ++t) {
    const double* frame = x.data() + t * p.hop;
    for (std::size_t i = 0; i < n; ++i) buf.real[i] = frame[i] * w[i];
    fftw_execute_dft_r2c(plan.forward, buf.real, buf.spec);
    for (std::size_t f = 0; f < s.bins; ++f) s.at(t, f) = {buf.spec[f][0], buf.spec[f][1]};
  }
  return s;
}

std::pair<std::size_t, std::size_t> istft_interior(const StftParams& p, std::size_t length) {
  const std::size_t edge = p.window_len - p.hop;
  if (length <= 2 * edge) return {0, 0};
  return {edge, length - edge};
}

Waveform istft(const SpectroGram& s, int rate) {
  const StftParams& p = s.params;
  validate(p);
  if (!satisfies_cola(p))
    throw ConfigError("istft: window/hop pair " + std::to_string(p.window_len) + "/" +
                      std::to_string(p.hop) + " is not constant-overlap-add");
  const std::size_t n = p.window_len;
  if (s.bins != n / 2 + 1 || s.values.size() != s.frames * s.bins || s.frames == 0)
    throw DimensionError("istft: spectrogram grid inconsistent with its parameters");
  const auto w = make_window(p);
  const std::size_t len = (s.frames - 1) * p.hop + n;
  std::vector<double> acc(len, 0.0), env(len, 0.0);
  const auto& plan = plans_for(n);
  FftBuffers buf(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t t = 0; t < s.frames; ++t) {
    for (std::size_t f = 0; f < s.bins; ++f) {
      buf.spec[f][0] = s.at(t, f).real();
      buf.spec[f][1] = s.at(t, f).imag();
    }
    fftw_execute_dft_c2r(plan.inverse, buf.spec, buf.real);
    double* a = acc.data() + t * p.hop;
    double* e = env.data() + t * p.hop;
    for (std::size_t i = 0; i < n; ++i) {
      a[i] += buf.real[i] * inv_n * w[i];
      e[i] += w[i] * w[i];
    }
  }
  const double floor = 1e-12 * *std::max_element(env.begin(), env.end());
  Waveform out;
  out.rate = rate;
  out.samples.resize(len);
  for (std::size_t i = 0; i < len; ++i) out.samples[i] = env[i] > floor ? acc[i] / env[i] : 0.0;
  return out;
}

SpectroGram stft_padded(std::span<const double> x, const StftParams& p) {
  validate(p);
  const std::size_t front = p.window_len - p.hop;
  const std::size_t need = front + x.size() + front;
  const std::size_t steps = need <= p.window_len ? 0 : (need - p.window_len + p.hop - 1) / p.hop;
  std::vector<double> padded(p.window_len + steps * p.hop, 0.0);
  std::copy(x.begin(), x.end(), padded.begin() + static_cast<std::ptrdiff_t>(front));
  return stft(padded, p);
}

Waveform istft_trimmed(const SpectroGram& s, std::size_t length, int rate) {
  Waveform full = istft(s, rate);
  const std::size_t front = s.params.window_len - s.params.hop;
  if (full.samples.size() < front + length)
    throw DimensionError("istft_trimmed: spectrogram covers " + std::to_string(full.samples.size()) +
                         " samples, need " + std::to_string(front + length));
  Waveform out;
  out.rate = rate;
  out.samples.assign(full.samples.begin() + static_cast<std::ptrdiff_t>(front),
                     full.samples.begin() + static_cast<std::ptrdiff_t>(front + length));
  return out;
}

BinaryMask ibm(const SpectroGram& clean, const SpectroGram& noise) {
  require_same_grid(clean, noise, "ibm");
  BinaryMask m{clean.frames, clean.bins, std::vector<std::uint8_t>(clean.values.size())};
  for (std::size_t i = 0; i < m.values.size(); ++i)
    m.values[i] = std::abs(clean.values[i]) > std::abs(noise.values[i]) ? 1 : 0;
  return m;
}

SpectroGram apply_mask(const SpectroGram& noisy, const RealMask& m) {
  if (m.frames != noisy.frames || m.bins != noisy.bins || m.values.size() != noisy.values.size())
    throw DimensionError("apply_mask: mask " + std::to_string(m.frames) + "x" +
                         std::to_string(m.bins) + " vs spectrogram " +
                         std::to_string(noisy.frames) + "x" + std::to_string(noisy.bins));
  SpectroGram out = noisy;
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    const double g = m.values[i];
    if (!(g >= 0.0 && g <= 1.0))
      throw DomainError("apply_mask: gain " + std::to_string(g) + " outside [0, 1]");
    // Real gain on a complex bin leaves its angle untouched.
    out.values[i] = noisy.values[i] * g;
  }
  return out;
}

double si_sdr(std::span<const double> x, std::span<const double> xhat, SdrForm form) {
  if (x.size() != xhat.size())
    throw DimensionError("si_sdr: lengths " + std::to_string(x.size()) + " vs " +
                         std::to_string(xhat.size()));
  double xx = 0.0;
  for (double v : x) xx += v * v;
  if (xx == 0.0) throw UndefinedReferenceError("si_sdr: reference signal is all zero");

  if (form == SdrForm::kPlain) {
    double e = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) e += (x[i] - xhat[i]) * (x[i] - xhat[i]);
    if (e == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(xx / e);
  }

  double c = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) c += x[i] * xhat[i];
  const double alpha = c / xx;
  double s = 0.0, e = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double target = alpha * x[i];
    const double resid = xhat[i] - target;
    s += target * target;
    e += resid * resid;
  }
  if (s == 0.0) return -std::numeric_limits<double>::infinity();
  if (e == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(s / e);
}

double si_sdr_capped(std::span<const double> x, std::span<const double> xhat, SdrForm form) {
  return std::clamp(si_sdr(x, xhat, form), -kSdrCapDb, kSdrCapDb);
}

template <typename T>
Tensor<T> si_sdr_loss(const Tensor<T>& clean, const Tensor<T>& estimate) {
  if (clean.rank() != 2 || clean.shape() != estimate.shape())
    throw DimensionError("si_sdr_loss: clean " + shape_str(clean.shape()) + " vs estimate " +
                         shape_str(estimate.shape()));
  const std::size_t B = clean.dim(0), N = clean.dim(1);
  auto xv = clean.data(), yv = estimate.data();
  // Per item: xx = |x|^2, c = <x, xhat>, yy = |xhat|^2, E = |xhat - alpha x|^2.
  std::vector<double> xx(B), c(B), yy(B), res(B);
  std::vector<bool> active(B);
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<double> xs(N), ys(N);
    for (std::size_t i = 0; i < N; ++i) {
      xs[i] = xv[b * N + i];
      ys[i] = yv[b * N + i];
    }
    const double sdr = si_sdr(xs, ys);
    for (std::size_t i = 0; i < N; ++i) {
      xx[b] += xs[i] * xs[i];
      c[b] += xs[i] * ys[i];
      yy[b] += ys[i] * ys[i];
    }
    const double alpha = c[b] / xx[b];
    for (std::size_t i = 0; i < N; ++i) {
      const double r = ys[i] - alpha * xs[i];
      res[b] += r * r;
    }
    const double clipped = std::clamp(sdr, kLossClipDb, kSdrCapDb);
    active[b] = sdr > kLossClipDb && sdr < kSdrCapDb;
    total += -clipped;
  }
  const double loss = total / static_cast<double>(B);
  auto r = detail::make_result<T>("si_sdr_loss", Shape{1}, std::vector<T>{static_cast<T>(loss)},
                                  {&clean, &estimate});
  if (r.requires_grad())
    r.node()->backward = [B, N, xx = std::move(xx), c = std::move(c), yy = std::move(yy),
                          res = std::move(res), active = std::move(active)](Node<T>& self) {
      auto& px = *self.parents[0];
      auto& py = *self.parents[1];
      auto gx = detail::grad_of(px);
      auto gy = detail::grad_of(py);
      // d sdr / d xhat = k (2x/c - 2e/E);  d sdr / d x = k (2xhat/c - 2(x yy - c xhat)/(xx E))
      const double k = 10.0 / std::numbers::ln10;
      const double upstream = static_cast<double>(self.grad[0]) / static_cast<double>(B);
      for (std::size_t b = 0; b < B; ++b) {
        if (!active[b]) continue;
        const double alpha = c[b] / xx[b];
        const double w = -upstream * k;
        for (std::size_t i = 0; i < N; ++i) {
          const double xi = px.value[b * N + i];
          const double yi = py.value[b * N + i];
          const double e = yi - alpha * xi;
          if (!gy.empty()) gy[b * N + i] += static_cast<T>(w * (2.0 * xi / c[b] - 2.0 * e / res[b]));
          if (!gx.empty())
            gx[b * N + i] += static_cast<T>(
                w * (2.0 * yi / c[b] - 2.0 * (xi * yy[b] - c[b] * yi) / (xx[b] * res[b])));
        }
      }
    };
  return r;
}

template Tensor<float> si_sdr_loss(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> si_sdr_loss(const Tensor<double>&, const Tensor<double>&);

}  // namespace avse
