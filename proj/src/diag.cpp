// SPDX-License-Identifier: Apache-2.0

#include "avse/diag.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "avse/error.hpp"
#include "avse/io.hpp"
#include "avse/metrics.hpp"

namespace avse {

double frame_correlation(const double* a, const double* v, std::size_t dim) {
  double ma = 0.0, mv = 0.0;
  for (std::size_t d = 0; d < dim; ++d) {
    ma += a[d];
    mv += v[d];
  }
  ma /= static_cast<double>(dim);
  mv /= static_cast<double>(dim);
  double saa = 0.0, svv = 0.0, sav = 0.0;
  for (std::size_t d = 0; d < dim; ++d) {
    const double x = a[d] - ma, y = v[d] - mv;
    saa += x * x;
    svv += y * y;
    sav += x * y;
  }
  if (saa == 0.0 || svv == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return std::clamp(sav / std::sqrt(saa * svv), -1.0, 1.0);
}

DiagReport diag_crossmodal(const FeatureStream& audio, const FeatureStream& visual, int max_lag) {
  if (audio.frames != visual.frames)
    throw AlignmentError("diag: audio has " + std::to_string(audio.frames) + " frames, visual has " +
                         std::to_string(visual.frames));
  if (audio.dim != visual.dim || audio.dim < 2)
    throw DimensionError("diag: feature dims " + std::to_string(audio.dim) + " and " + std::to_string(visual.dim) +
                         " must match and be >= 2");
  if (max_lag < 0) throw ConfigError("diag: max_lag must be >= 0");
  const std::size_t n = audio.frames;
  DiagReport r;
  r.frames = n;
  r.max_lag = max_lag;
  r.corr.resize(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) r.corr[i * n + j] = frame_correlation(audio.row(i), visual.row(j), audio.dim);
  r.lag_curve.assign(static_cast<std::size_t>(2 * max_lag + 1), std::numeric_limits<double>::quiet_NaN());
  double best = -std::numeric_limits<double>::infinity();
  for (int l = -max_lag; l <= max_lag; ++l) {
    double s = 0.0;
    std::size_t k = 0;
    for (std::size_t t = 0; t < n; ++t) {
      const auto j = static_cast<std::ptrdiff_t>(t) + l;
      if (j < 0 || j >= static_cast<std::ptrdiff_t>(n)) continue;
      const double c = r.corr[t * n + static_cast<std::size_t>(j)];
      if (std::isnan(c)) continue;
      s += c;
      ++k;
    }
    if (k == 0) continue;
    const double m = s / static_cast<double>(k);
    r.lag_curve[static_cast<std::size_t>(l + max_lag)] = m;
    // Ties go to the smallest |lag|, then the negative side.
    if (m > best || (m == best && std::abs(l) < std::abs(r.peak_lag))) {
      best = m;
      r.peak_lag = l;
    }
  }
  return r;
}

FeatureStream pool_to_frames(const FeatureStream& latent, std::size_t frames, double latent_per_frame) {
  if (frames == 0 || !(latent_per_frame > 0.0)) throw ConfigError("pool_to_frames: bad frame grid");
  FeatureStream out;
  out.frames = frames;
  out.dim = latent.dim;
  out.values.assign(frames * latent.dim, 0.0);
  std::vector<std::size_t> count(frames, 0);
  for (std::size_t t = 0; t < latent.frames; ++t) {
    const auto k = std::min(frames - 1, static_cast<std::size_t>((static_cast<double>(t) + 0.5) / latent_per_frame));
    for (std::size_t d = 0; d < latent.dim; ++d) out.values[k * latent.dim + d] += latent.row(t)[d];
    ++count[k];
  }
  for (std::size_t k = 0; k < frames; ++k) {
    if (count[k]) {
      for (std::size_t d = 0; d < latent.dim; ++d) out.values[k * latent.dim + d] /= static_cast<double>(count[k]);
    } else if (latent.frames > 0) {
      // No latent centre falls in this frame (e.g. a trailing video frame): take the nearest one.
      const auto t = std::min(latent.frames - 1,
                              static_cast<std::size_t>((static_cast<double>(k) + 0.5) * latent_per_frame));
      std::copy_n(latent.row(t), latent.dim, out.values.begin() + static_cast<std::ptrdiff_t>(k * latent.dim));
    }
  }
  return out;
}

namespace {

std::string cell(double v) { return std::isnan(v) ? "nan" : format_number(v); }

}  // namespace

void write_corr_csv(std::ostream& os, const DiagReport& r) {
  os << "i,j,corr\n";
  for (std::size_t i = 0; i < r.frames; ++i)
    for (std::size_t j = 0; j < r.frames; ++j) os << i << ',' << j << ',' << cell(r.at(i, j)) << '\n';
}

void write_lag_csv(std::ostream& os, const DiagReport& r) {
  os << "lag,corr\n";
  for (int l = -r.max_lag; l <= r.max_lag; ++l) os << l << ',' << cell(r.lag(l)) << '\n';
}

void write_heatmap_pgm(const std::filesystem::path& path, const DiagReport& r) {
  ByteWriter w;
  w.bytes("P5\n" + std::to_string(r.frames) + " " + std::to_string(r.frames) + "\n255\n");
  for (std::size_t i = 0; i < r.frames; ++i)
    for (std::size_t j = 0; j < r.frames; ++j) {
      const double c = r.at(i, j);
      w.u8(std::isnan(c) ? 0 : static_cast<std::uint8_t>(std::lround(127.5 * (c + 1.0))));
    }
  write_file_atomic(path, w.data());
}

}  // namespace avse
