// SPDX-License-Identifier: Apache-2.0

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numbers>
#include <numeric>
#include <string>

#include "avse/error.hpp"
#include "avse/metrics.hpp"

namespace avse {

namespace {

constexpr int kStoiRate = 10000;
constexpr std::size_t kFrame = 256;
constexpr std::size_t kFft = 512;
constexpr std::size_t kBands = 15;
constexpr double kMinFreq = 150.0;
constexpr std::size_t kSegment = 30;
constexpr double kBeta = -15.0;
constexpr double kDynRange = 40.0;
constexpr double kEps = std::numeric_limits<double>::epsilon();

// hanning(n + 2)[1:-1]: symmetric, without the zero endpoints.
std::vector<double> inner_hanning(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i + 1) / static_cast<double>(n + 1));
  return w;
}

// Rational resampling with a Kaiser-windowed sinc (60 dB stopband, 10%
// transition), output sample m centred on input time m * down / up.
std::vector<double> resample(const std::vector<double>& x, std::size_t up, std::size_t down) {
  const std::size_t g = std::gcd(up, down);
  up /= g;
  down /= g;
  if (up == 1 && down == 1) return x;
  const double cutoff = 1.0 / (2.0 * static_cast<double>(std::max(up, down)));
  const double roll_off = cutoff / 10.0;
  const double rejection_db = 60.0;
  const auto half = static_cast<std::ptrdiff_t>(std::ceil(rejection_db / (28.714 * roll_off)));
  const double beta = 0.1102 * (rejection_db - 8.7);
  const double i0b = std::cyl_bessel_i(0.0, beta);
  std::vector<double> h(static_cast<std::size_t>(2 * half + 1));
  for (std::ptrdiff_t t = -half; t <= half; ++t) {
    const double arg = 2.0 * cutoff * static_cast<double>(t);
    const double sinc = t == 0 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
    const double r = static_cast<double>(t) / static_cast<double>(half);
    const double kaiser = std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0b;
    h[static_cast<std::size_t>(t + half)] = 2.0 * cutoff * sinc * kaiser * static_cast<double>(up);
  }
  const std::size_t n_out = (x.size() * up + down - 1) / down;
  std::vector<double> y(n_out, 0.0);
  const auto n_up = static_cast<std::ptrdiff_t>(x.size() * up);
  for (std::size_t m = 0; m < n_out; ++m) {
    const auto centre = static_cast<std::ptrdiff_t>(m * down);
    // Only taps landing on non-zero (stuffed) samples contribute.
    std::ptrdiff_t i = centre - half;
    if (i < 0) i = 0;
    i += (static_cast<std::ptrdiff_t>(up) - i % static_cast<std::ptrdiff_t>(up)) % static_cast<std::ptrdiff_t>(up);
    double acc = 0.0;
    for (; i <= centre + half && i < n_up; i += static_cast<std::ptrdiff_t>(up))
      acc += h[static_cast<std::size_t>(centre - i + half)] * x[static_cast<std::size_t>(i) / up];
    y[m] = acc;
  }
  return y;
}

void remove_silent_frames(std::vector<double>& x, std::vector<double>& y) {
  const std::size_t hop = kFrame / 2;
  const auto w = inner_hanning(kFrame);
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i + kFrame <= x.size(); i += hop) starts.push_back(i);
  std::vector<double> energy(starts.size());
  for (std::size_t f = 0; f < starts.size(); ++f) {
    double s = 0.0;
    for (std::size_t i = 0; i < kFrame; ++i) {
      const double v = w[i] * x[starts[f] + i];
      s += v * v;
    }
    energy[f] = 20.0 * std::log10(std::sqrt(s) + kEps);
  }
  if (starts.empty()) {
    x.clear();
    y.clear();
    return;
  }
  const double top = *std::max_element(energy.begin(), energy.end());
  std::vector<std::size_t> keep;
  for (std::size_t f = 0; f < starts.size(); ++f)
    if (top - kDynRange - energy[f] < 0) keep.push_back(starts[f]);
  const std::size_t len = keep.empty() ? 0 : (keep.size() - 1) * hop + kFrame;
  std::vector<double> xs(len, 0.0), ys(len, 0.0);
  for (std::size_t k = 0; k < keep.size(); ++k)
    for (std::size_t i = 0; i < kFrame; ++i) {
      xs[k * hop + i] += w[i] * x[keep[k] + i];
      ys[k * hop + i] += w[i] * y[keep[k] + i];
    }
  x = std::move(xs);
  y = std::move(ys);
}

struct R2cPlan {
  double* in;
  fftw_complex* out;
  fftw_plan plan;
  R2cPlan() {
    in = fftw_alloc_real(kFft);
    out = fftw_alloc_complex(kFft / 2 + 1);
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(kFft), in, out, FFTW_ESTIMATE);
  }
};

std::mutex g_plan_mutex;

const R2cPlan& plan() {
  std::lock_guard<std::mutex> lock(g_plan_mutex);
  static const R2cPlan p;
  return p;
}

// |STFT|^2 per frame, frames starting at 0, hop, ... while start < len - kFrame.
std::vector<std::vector<double>> power_spectrum(const std::vector<double>& x) {
  const auto w = inner_hanning(kFrame);
  const auto& p = plan();
  double* in = fftw_alloc_real(kFft);
  fftw_complex* out = fftw_alloc_complex(kFft / 2 + 1);
  std::vector<std::vector<double>> frames;
  for (std::size_t s = 0; s + kFrame < x.size(); s += kFrame / 2) {
    std::fill(in, in + kFft, 0.0);
    for (std::size_t i = 0; i < kFrame; ++i) in[i] = w[i] * x[s + i];
    fftw_execute_dft_r2c(p.plan, in, out);
    std::vector<double> pw(kFft / 2 + 1);
    for (std::size_t f = 0; f < pw.size(); ++f) pw[f] = out[f][0] * out[f][0] + out[f][1] * out[f][1];
    frames.push_back(std::move(pw));
  }
  fftw_free(in);
  fftw_free(out);
  return frames;
}

// Third-octave band edges as [lo, hi) bin ranges.
std::vector<std::pair<std::size_t, std::size_t>> third_octave_bands() {
  const std::size_t nbins = kFft / 2 + 1;
  auto nearest = [&](double hz) {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < nbins; ++b) {
      const double f = static_cast<double>(b) * kStoiRate / static_cast<double>(kFft);
      const double d = (f - hz) * (f - hz);
      if (d < bd) {
        bd = d;
        best = b;
      }
    }
    return best;
  };
  std::vector<std::pair<std::size_t, std::size_t>> bands;
  for (std::size_t k = 0; k < kBands; ++k) {
    const double kk = static_cast<double>(k);
    bands.emplace_back(nearest(kMinFreq * std::pow(2.0, (2 * kk - 1) / 6.0)),
                       nearest(kMinFreq * std::pow(2.0, (2 * kk + 1) / 6.0)));
  }
  return bands;
}

}  // namespace

double stoi(const Waveform& clean, const Waveform& processed) {
  if (clean.size() != processed.size())
    throw DimensionError("stoi: clean has " + std::to_string(clean.size()) + " samples, processed has " +
                         std::to_string(processed.size()));
  if (clean.rate != processed.rate || clean.rate <= 0) throw DomainError("stoi: sample rates differ or are invalid");
  auto x = resample(clean.samples, kStoiRate, static_cast<std::size_t>(clean.rate));
  auto y = resample(processed.samples, kStoiRate, static_cast<std::size_t>(clean.rate));
  remove_silent_frames(x, y);
  const auto X = power_spectrum(x);
  const auto Y = power_spectrum(y);
  if (X.size() < kSegment)
    throw SignalTooShortError("stoi: " + std::to_string(X.size()) + " non-silent frames, need at least " +
                              std::to_string(kSegment));
  const auto bands = third_octave_bands();
  const std::size_t nf = X.size();
  std::vector<double> xt(kBands * nf), yt(kBands * nf);  // band-major envelopes
  for (std::size_t j = 0; j < kBands; ++j)
    for (std::size_t t = 0; t < nf; ++t) {
      double sx = 0.0, sy = 0.0;
      for (std::size_t b = bands[j].first; b < bands[j].second; ++b) {
        sx += X[t][b];
        sy += Y[t][b];
      }
      xt[j * nf + t] = std::sqrt(sx);
      yt[j * nf + t] = std::sqrt(sy);
    }

  const double clip = std::pow(10.0, -kBeta / 20.0);
  double total = 0.0;
  std::size_t count = 0;
  std::vector<double> xs(kSegment), ys(kSegment);
  for (std::size_t m = kSegment; m <= nf; ++m)
    for (std::size_t j = 0; j < kBands; ++j) {
      const double* xp = xt.data() + j * nf + (m - kSegment);
      const double* yp = yt.data() + j * nf + (m - kSegment);
      double nx = 0.0, ny = 0.0;
      for (std::size_t i = 0; i < kSegment; ++i) {
        nx += xp[i] * xp[i];
        ny += yp[i] * yp[i];
      }
      const double alpha = std::sqrt(nx) / (std::sqrt(ny) + kEps);
      double mx = 0.0, my = 0.0;
      for (std::size_t i = 0; i < kSegment; ++i) {
        xs[i] = xp[i];
        ys[i] = std::min(yp[i] * alpha, xp[i] * (1.0 + clip));
        mx += xs[i];
        my += ys[i];
      }
      mx /= kSegment;
      my /= kSegment;
      double sxx = 0.0, syy = 0.0, sxy = 0.0;
      for (std::size_t i = 0; i < kSegment; ++i) {
        xs[i] -= mx;
        ys[i] -= my;
        sxx += xs[i] * xs[i];
        syy += ys[i] * ys[i];
      }
      const double dx = std::sqrt(sxx) + kEps, dy = std::sqrt(syy) + kEps;
      for (std::size_t i = 0; i < kSegment; ++i) sxy += (xs[i] / dx) * (ys[i] / dy);
      total += sxy;
      ++count;
    }
  return total / static_cast<double>(count);
}

}  // namespace avse
