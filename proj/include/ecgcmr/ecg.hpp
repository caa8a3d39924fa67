#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ecgcmr/types.hpp"

namespace ecgcmr::ecg {

enum class ThresholdRule {
  universal,  // sigma_hat * sqrt(2 ln L), sigma_hat = MAD(finest detail) / 0.6745
  fixed,      // PreprocessConfig::fixed_threshold
};

struct PreprocessConfig {
  /// Seasonal period in samples; 0 selects the period of one beat at the
  /// record's heart rate (see period_for_rate).
  int seasonal_period = 0;
  std::string wavelet_name = "db6";
  int wavelet_levels = 5;
  ThresholdRule threshold_rule = ThresholdRule::universal;
  double fixed_threshold = 0.0;
  int savgol_window = 11;
  int savgol_polyorder = 3;

  void validate() const;
};

/// Samples per beat at `bpm`, clamped so that a record of `length` samples
/// still holds two full periods.
int period_for_rate(double sample_rate, double bpm, std::size_t length);

/// Subtract the centered-moving-average trend (additive seasonal
/// decomposition). The trend is extrapolated linearly over the half-window
/// at each edge where the moving average is undefined.
EcgRecord remove_baseline(const EcgRecord& rec, int period);

/// Trend estimate used by remove_baseline, exposed for inspection.
std::vector<double> seasonal_trend(std::span<const double> x, int period);

/// Per-lead multilevel DWT, soft-threshold detail bands, reconstruct.
EcgRecord wavelet_denoise(const EcgRecord& rec, const PreprocessConfig& cfg);

/// Local least-squares polynomial smoothing with mirror padding.
EcgRecord savgol_smooth(const EcgRecord& rec, int window, int polyorder);

/// Convolution weights of the Savitzky-Golay smoother (center evaluation).
std::vector<double> savgol_coefficients(int window, int polyorder);

/// Channel-wise map of [min, max] onto [-1, 1]. A constant lead maps to all
/// zeros and its index is appended to `constant_leads` (and logged).
EcgRecord minmax_scale(const EcgRecord& rec, std::vector<int>* constant_leads = nullptr);

enum class Stage { baseline, wavelet, savgol };

/// baseline -> wavelet -> Savitzky-Golay. `heart_rate` feeds the automatic
/// seasonal period. When `trace` is given, the executed stages are appended.
EcgRecord preprocess(const EcgRecord& rec, const PreprocessConfig& cfg, double heart_rate,
                     std::vector<Stage>* trace = nullptr);

struct AugmentPolicy {
  double crop_scale_min = 0.5;
  double crop_scale_max = 1.0;
  double time_flip_prob = 0.5;
  double sign_flip_prob = 0.5;

  void validate() const;
};

/// Contiguous window [start, start + width) linearly resampled to full length.
EcgRecord crop_resize(const EcgRecord& rec, std::size_t start, std::size_t width);
EcgRecord time_flip(const EcgRecord& rec);
EcgRecord sign_flip(const EcgRecord& rec);

/// crop-resize, optional TimeFlip, optional SignFlip, then minmax_scale.
EcgRecord augment_ecg(const EcgRecord& rec, std::uint64_t seed, const AugmentPolicy& policy);

enum class Mode { train, eval };

/// Training path augments; validation/test path is minmax_scale only.
EcgRecord prepare_for_model(const EcgRecord& rec, Mode mode, std::uint64_t seed, const AugmentPolicy& policy);

}  // namespace ecgcmr::ecg
