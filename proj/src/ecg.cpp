#include "ecgcmr/ecg.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "ecgcmr/error.hpp"
#include "ecgcmr/log.hpp"
#include "ecgcmr/random.hpp"
#include "ecgcmr/wavelet.hpp"

namespace ecgcmr {

void EcgRecord::validate() const {
  if (length == 0 || samples.size() != kLeads * length) {
    throw ConfigError("ECG record must have 12 leads x L samples (got " + std::to_string(samples.size()) +
                      " values for L=" + std::to_string(length) + ")");
  }
  for (double v : samples) {
    if (!std::isfinite(v)) throw ConfigError("ECG record contains non-finite samples");
  }
}

}  // namespace ecgcmr

namespace ecgcmr::ecg {
namespace {

// Reflect about the edge sample without repeating it: x[-k] = x[k].
std::size_t mirror_index(long i, std::size_t n) {
  if (n == 1) return 0;
  const long period = 2 * static_cast<long>(n) - 2;
  i %= period;
  if (i < 0) i += period;
  if (i >= static_cast<long>(n)) i = period - i;
  return static_cast<std::size_t>(i);
}

// Least-squares line through (xs, ys) evaluated at `at`.
double line_extrapolate(const std::vector<double>& xs, const std::vector<double>& ys, double at) {
  const double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  const double denom = n * sxx - sx * sx;
  if (denom == 0.0) return sy / n;
  const double slope = (n * sxy - sx * sy) / denom;
  const double icpt = (sy - slope * sx) / n;
  return icpt + slope * at;
}

}  // namespace

void PreprocessConfig::validate() const {
  if (seasonal_period != 0 && seasonal_period < 2) throw ConfigError("seasonal_period must be >= 2 (or 0 = auto)");
  if (wavelet_levels < 1) throw ConfigError("wavelet_levels must be >= 1");
  (void)wavelet::filter_bank(wavelet_name);
  if (threshold_rule == ThresholdRule::fixed && !(fixed_threshold >= 0.0)) {
    throw ConfigError("fixed_threshold must be >= 0");
  }
  if (savgol_window < 1 || savgol_window % 2 == 0) throw ConfigError("savgol_window must be odd");
  if (savgol_polyorder < 0 || savgol_polyorder >= savgol_window) {
    throw ConfigError("savgol_polyorder must be < savgol_window");
  }
}

int period_for_rate(double sample_rate, double bpm, std::size_t length) {
  if (!(bpm > 0.0) || !(sample_rate > 0.0)) throw ConfigError("heart rate and sample rate must be positive");
  long p = std::lround(sample_rate * 60.0 / bpm);
  p = std::min<long>(p, static_cast<long>(length / 2));
  return static_cast<int>(std::max<long>(p, 2));
}

std::vector<double> seasonal_trend(std::span<const double> x, int period) {
  const std::size_t n = x.size();
  if (period < 2) throw ConfigError("seasonal period must be >= 2");
  if (n < 2 * static_cast<std::size_t>(period)) {
    throw ConfigError("record of " + std::to_string(n) + " samples too short for seasonal period " +
                      std::to_string(period));
  }
  // Odd period: plain p-point mean. Even period: 2xp moving average with half
  // weights on the two end taps, still centered.
  std::vector<double> w;
  if (period % 2 == 1) {
    w.assign(period, 1.0 / period);
  } else {
    w.assign(period + 1, 1.0 / period);
    w.front() = w.back() = 0.5 / period;
  }
  const std::size_t half = w.size() / 2;
  std::vector<double> trend(n, 0.0);
  for (std::size_t i = half; i + half < n; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) acc += w[k] * x[i - half + k];
    trend[i] = acc;
  }
  const std::size_t first = half;
  const std::size_t last = n - 1 - half;
  const std::size_t fit = std::min<std::size_t>(static_cast<std::size_t>(period), last - first + 1);
  std::vector<double> xs(fit), ys(fit);
  for (std::size_t k = 0; k < fit; ++k) {
    xs[k] = static_cast<double>(first + k);
    ys[k] = trend[first + k];
  }
  for (std::size_t i = 0; i < first; ++i) trend[i] = line_extrapolate(xs, ys, static_cast<double>(i));
  for (std::size_t k = 0; k < fit; ++k) {
    xs[k] = static_cast<double>(last - k);
    ys[k] = trend[last - k];
  }
  for (std::size_t i = last + 1; i < n; ++i) trend[i] = line_extrapolate(xs, ys, static_cast<double>(i));
  return trend;
}

EcgRecord remove_baseline(const EcgRecord& rec, int period) {
  rec.validate();
  EcgRecord out = rec;
  for (int l = 0; l < kLeads; ++l) {
    const auto trend = seasonal_trend(rec.lead(l), period);
    auto dst = out.lead(l);
    for (std::size_t i = 0; i < rec.length; ++i) dst[i] -= trend[i];
  }
  return out;
}

EcgRecord wavelet_denoise(const EcgRecord& rec, const PreprocessConfig& cfg) {
  rec.validate();
  cfg.validate();
  const auto& bank = wavelet::filter_bank(cfg.wavelet_name);
  const std::size_t n = rec.length;
  const std::size_t block = std::size_t{1} << cfg.wavelet_levels;
  // Mirror-pad both sides, then extend the tail to a multiple of 2^levels.
  const std::size_t margin = std::min<std::size_t>(n - 1, 4 * bank.rec_lo.size());
  const std::size_t padded_core = n + 2 * margin;
  const std::size_t padded = (padded_core + block - 1) / block * block;

  EcgRecord out = rec;
  std::vector<double> buf(padded);
  for (int l = 0; l < kLeads; ++l) {
    const auto src = rec.lead(l);
    for (std::size_t i = 0; i < padded; ++i) {
      buf[i] = src[mirror_index(static_cast<long>(i) - static_cast<long>(margin), n)];
    }
    auto dec = wavelet::wavedec(buf, bank, cfg.wavelet_levels);
    double thr = cfg.fixed_threshold;
    if (cfg.threshold_rule == ThresholdRule::universal) {
      std::vector<double> mag(dec.details.front().size());
      std::transform(dec.details.front().begin(), dec.details.front().end(), mag.begin(),
                     [](double v) { return std::abs(v); });
      auto mid = mag.begin() + static_cast<long>(mag.size() / 2);
      std::nth_element(mag.begin(), mid, mag.end());
      const double sigma = *mid / 0.6745;
      thr = sigma * std::sqrt(2.0 * std::log(static_cast<double>(n)));
    }
    if (thr > 0.0) {
      for (auto& band : dec.details) {
        for (double& v : band) v = wavelet::soft_threshold(v, thr);
      }
    }
    const auto rebuilt = wavelet::waverec(dec, bank);
    auto dst = out.lead(l);
    for (std::size_t i = 0; i < n; ++i) dst[i] = rebuilt[i + margin];
  }
  return out;
}

std::vector<double> savgol_coefficients(int window, int polyorder) {
  if (window < 1 || window % 2 == 0) throw ConfigError("savgol window must be odd and positive");
  if (polyorder < 0 || polyorder >= window) throw ConfigError("savgol polyorder must be in [0, window)");
  const int half = window / 2;
  Eigen::MatrixXd a(window, polyorder + 1);
  for (int i = 0; i < window; ++i) {
    double p = 1.0;
    for (int j = 0; j <= polyorder; ++j) {
      a(i, j) = p;
      p *= static_cast<double>(i - half);
    }
  }
  // Row 0 of the pseudo-inverse evaluates the fitted polynomial at offset 0.
  const Eigen::MatrixXd pinv = (a.transpose() * a).ldlt().solve(a.transpose());
  std::vector<double> coef(window);
  for (int i = 0; i < window; ++i) coef[i] = pinv(0, i);
  return coef;
}

EcgRecord savgol_smooth(const EcgRecord& rec, int window, int polyorder) {
  rec.validate();
  const auto coef = savgol_coefficients(window, polyorder);
  if (rec.length < static_cast<std::size_t>(window)) {
    throw ConfigError("record shorter than Savitzky-Golay window");
  }
  const long half = window / 2;
  EcgRecord out = rec;
  for (int l = 0; l < kLeads; ++l) {
    const auto src = rec.lead(l);
    auto dst = out.lead(l);
    for (std::size_t i = 0; i < rec.length; ++i) {
      double acc = 0.0;
      for (long k = -half; k <= half; ++k) {
        acc += coef[k + half] * src[mirror_index(static_cast<long>(i) + k, rec.length)];
      }
      dst[i] = acc;
    }
  }
  return out;
}

EcgRecord minmax_scale(const EcgRecord& rec, std::vector<int>* constant_leads) {
  rec.validate();
  EcgRecord out = rec;
  for (int l = 0; l < kLeads; ++l) {
    auto dst = out.lead(l);
    const auto [mn, mx] = std::minmax_element(dst.begin(), dst.end());
    const double lo = *mn, hi = *mx;
    if (hi == lo) {
      std::fill(dst.begin(), dst.end(), 0.0);
      log::warn("minmax_scale: lead ", l, " is constant; mapped to zeros");
      if (constant_leads != nullptr) constant_leads->push_back(l);
      continue;
    }
    const double span = hi - lo;
    for (double& v : dst) v = 2.0 * (v - lo) / span - 1.0;
  }
  return out;
}

EcgRecord preprocess(const EcgRecord& rec, const PreprocessConfig& cfg, double heart_rate, std::vector<Stage>* trace) {
  cfg.validate();
  const int period =
      cfg.seasonal_period > 0 ? cfg.seasonal_period : period_for_rate(rec.sample_rate, heart_rate, rec.length);
  EcgRecord x = remove_baseline(rec, period);
  if (trace) trace->push_back(Stage::baseline);
  x = wavelet_denoise(x, cfg);
  if (trace) trace->push_back(Stage::wavelet);
  x = savgol_smooth(x, cfg.savgol_window, cfg.savgol_polyorder);
  if (trace) trace->push_back(Stage::savgol);
  return x;
}

void AugmentPolicy::validate() const {
  auto prob_ok = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob_ok(time_flip_prob) || !prob_ok(sign_flip_prob)) {
    throw ConfigError("augmentation probabilities must lie in [0, 1]");
  }
  if (!(crop_scale_min > 0.0) || crop_scale_max > 1.0 || crop_scale_min > crop_scale_max) {
    throw ConfigError("crop scale range must be within (0, 1] with min <= max");
  }
}

EcgRecord crop_resize(const EcgRecord& rec, std::size_t start, std::size_t width) {
  rec.validate();
  const std::size_t n = rec.length;
  if (width < 1 || start + width > n) throw ConfigError("crop window outside record");
  if (width == n) return rec;
  EcgRecord out(n, rec.sample_rate);
  for (int l = 0; l < kLeads; ++l) {
    const auto src = rec.lead(l);
    auto dst = out.lead(l);
    for (std::size_t i = 0; i < n; ++i) {
      const double pos =
          n > 1 ? static_cast<double>(i) * static_cast<double>(width - 1) / static_cast<double>(n - 1) : 0.0;
      const auto i0 = static_cast<std::size_t>(std::floor(pos));
      const std::size_t i1 = std::min(i0 + 1, width - 1);
      const double f = pos - static_cast<double>(i0);
      dst[i] = (1.0 - f) * src[start + i0] + f * src[start + i1];
    }
  }
  return out;
}

EcgRecord time_flip(const EcgRecord& rec) {
  EcgRecord out = rec;
  for (int l = 0; l < kLeads; ++l) {
    auto d = out.lead(l);
    std::reverse(d.begin(), d.end());
  }
  return out;
}

EcgRecord sign_flip(const EcgRecord& rec) {
  EcgRecord out = rec;
  for (double& v : out.samples) v = -v;
  return out;
}

EcgRecord augment_ecg(const EcgRecord& rec, std::uint64_t seed, const AugmentPolicy& policy) {
  policy.validate();
  rec.validate();
  Rng rng(seed);
  const double scale = policy.crop_scale_min == policy.crop_scale_max
                           ? policy.crop_scale_min
                           : rng.uniform(policy.crop_scale_min, policy.crop_scale_max);
  const std::size_t n = rec.length;
  std::size_t width = static_cast<std::size_t>(std::lround(scale * static_cast<double>(n)));
  width = std::clamp<std::size_t>(width, std::min<std::size_t>(2, n), n);
  const std::size_t start = static_cast<std::size_t>(rng.below(n - width + 1));
  const bool flip_time = rng.bernoulli(policy.time_flip_prob);
  const bool flip_sign = rng.bernoulli(policy.sign_flip_prob);

  EcgRecord x = crop_resize(rec, start, width);
  if (flip_time) x = time_flip(x);
  if (flip_sign) x = sign_flip(x);
  return minmax_scale(x);
}

EcgRecord prepare_for_model(const EcgRecord& rec, Mode mode, std::uint64_t seed, const AugmentPolicy& policy) {
  if (mode == Mode::eval) return minmax_scale(rec);
  return augment_ecg(rec, seed, policy);
}

}  // namespace ecgcmr::ecg
