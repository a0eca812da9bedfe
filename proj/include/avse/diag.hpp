// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <ostream>
#include <vector>

namespace avse {

// Row-major [frames x dim] feature stream.
struct FeatureStream {
  std::size_t frames = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  const double* row(std::size_t t) const { return values.data() + t * dim; }
};

struct DiagReport {
  std::size_t frames = 0;
  std::vector<double> corr;  // [frames x frames], (i audio, j visual); NaN = undefined
  int max_lag = 0;
  std::vector<double> lag_curve;  // index lag + max_lag; NaN when no pair defined
  int peak_lag = 0;

  double at(std::size_t i, std::size_t j) const { return corr[i * frames + j]; }
  double lag(int l) const { return lag_curve[static_cast<std::size_t>(l + max_lag)]; }
};

// Pearson correlation across the feature axis of a[i] and v[j]; NaN when
// either vector is constant.
double frame_correlation(const double* a, const double* v, std::size_t dim);

// lag_curve[l] = mean over t of corr(a_t, v_{t+l}) for l in [-max_lag,
// max_lag], undefined pairs skipped. A visual stream delayed by k frames
// (v_t = a_{t-k}) peaks at +k.
DiagReport diag_crossmodal(const FeatureStream& audio, const FeatureStream& visual, int max_lag);

// Averages latent frames over each visual frame interval:
// [T^ x C] -> [frames x C], frame k covering latent frames whose centre lies
// in [k, k+1) frame periods. A frame with no such latent frame takes the
// nearest one.
FeatureStream pool_to_frames(const FeatureStream& latent, std::size_t frames, double latent_per_frame);

// "i,j,corr" and "lag,corr"; missing values are written as "nan".
void write_corr_csv(std::ostream& os, const DiagReport& r);
void write_lag_csv(std::ostream& os, const DiagReport& r);
// Binary PGM heatmap of the correlation matrix, [-1, 1] -> [0, 255],
// missing entries black.
void write_heatmap_pgm(const std::filesystem::path& path, const DiagReport& r);

}  // namespace avse
