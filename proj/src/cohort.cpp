#include "ecgcmr/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <thread>

#include "ecgcmr/error.hpp"
#include "ecgcmr/random.hpp"

namespace ecgcmr::cohort {
namespace {

constexpr double kPi = std::numbers::pi;

constexpr float kBackground = 0.15f;
constexpr float kWall = 0.85f;
constexpr float kBlood = 0.45f;

// Lead gains for the (P, QRS, T) sources: I, II, III, aVR, aVL, aVF, V1..V6.
constexpr std::array<std::array<double, 3>, kLeads> kLeadMixing = {{
    {0.8, 0.9, 0.7},
    {1.0, 1.0, 1.0},
    {0.5, 0.6, 0.4},
    {-0.9, -0.95, -0.85},
    {0.3, 0.4, 0.3},
    {0.7, 0.8, 0.7},
    {0.4, -0.8, -0.2},
    {0.5, -0.5, 0.6},
    {0.5, 0.6, 0.9},
    {0.6, 1.2, 1.0},
    {0.6, 1.1, 0.8},
    {0.5, 0.9, 0.6},
}};

// Areas in pixels^2 at image_size 64; scaled by (image_size / 64)^2.
struct Geometry {
  double cavity_ed;       // short-axis LV blood pool at end-diastole
  double wall;            // short-axis myocardium (conserved over the cycle)
  double contraction;     // fractional cavity shrink at end-systole
  double la_lv_cavity_ed;
  double la_wall;
  double la_rv_ed;
};

Geometry geometry_of(const LatentCardiacState& z, double scale2) {
  Geometry g;
  g.cavity_ed = kPi * (25.0 + 75.0 * z.rvedv_like) * scale2;
  g.wall = kPi * (30.0 + 60.0 * z.lvm_like) * scale2;
  g.contraction = 0.45 - 0.25 * z.rvedv_like;
  g.la_lv_cavity_ed = kPi * (30.0 + 80.0 * z.rvedv_like) * scale2;
  g.la_wall = kPi * (35.0 + 70.0 * z.lvm_like) * scale2;
  g.la_rv_ed = kPi * (20.0 + 60.0 * z.rvedv_like) * scale2;
  return g;
}

double cycle(int frame, int frames) { return 0.5 * (1.0 - std::cos(2.0 * kPi * frame / frames)); }

int end_systole(int frames) { return frames / 2; }

// Ellipse with the given area and axis ratio, rotated by `theta`.
struct Ellipse {
  double cy, cx, a, b, cos_t, sin_t;

  static Ellipse with_area(double cy, double cx, double area, double ratio, double theta) {
    const double r = std::sqrt(std::max(area, 0.0) / kPi);
    return {cy, cx, r * std::sqrt(ratio), r / std::sqrt(ratio), std::cos(theta), std::sin(theta)};
  }

  bool contains(double y, double x) const {
    if (a <= 0.0 || b <= 0.0) return false;
    const double dy = y - cy, dx = x - cx;
    const double u = cos_t * dx + sin_t * dy;
    const double v = -sin_t * dx + cos_t * dy;
    return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
  }
};

// Region classifier for one frame: 0 background, 1 wall, 2 blood.
template <typename Classify>
void render_frame(CmrClip& clip, int t, Classify&& classify, Rng& noise, double sigma) {
  constexpr int kSub = 4;
  for (int y = 0; y < clip.height; ++y) {
    for (int x = 0; x < clip.width; ++x) {
      double acc = 0.0;
      for (int sy = 0; sy < kSub; ++sy) {
        for (int sx = 0; sx < kSub; ++sx) {
          const double py = y + (sy + 0.5) / kSub - 0.5;
          const double px = x + (sx + 0.5) / kSub - 0.5;
          switch (classify(py, px)) {
            case 1: acc += kWall; break;
            case 2: acc += kBlood; break;
            default: acc += kBackground; break;
          }
        }
      }
      const double v = acc / (kSub * kSub) + sigma * noise.normal();
      clip.at(t, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
}

struct SaLayout {
  double cy, cx, theta;
};

struct LaLayout {
  double cy, cx, theta;
};

void render_sa(CmrClip& clip, const Geometry& g, const SaLayout& lay, double area_factor, Rng& noise, double sigma) {
  constexpr double kRatio = 1.1;
  for (int t = 0; t < clip.frames; ++t) {
    const double cav = g.cavity_ed * (1.0 - g.contraction * cycle(t, clip.frames)) * area_factor;
    const auto inner = Ellipse::with_area(lay.cy, lay.cx, cav, kRatio, lay.theta);
    const auto outer = Ellipse::with_area(lay.cy, lay.cx, cav + g.wall * area_factor, kRatio, lay.theta);
    render_frame(
        clip, t,
        [&](double y, double x) {
          if (inner.contains(y, x)) return 2;
          if (outer.contains(y, x)) return 1;
          return 0;
        },
        noise, sigma);
  }
}

struct LaShapes {
  Ellipse lv_inner, lv_outer, rv;
};

LaShapes la_shapes(const Geometry& g, const LaLayout& lay, int frame, int frames, double scale) {
  constexpr double kLvRatio = 2.0;
  constexpr double kRvRatio = 1.6;
  const double c = cycle(frame, frames);
  const double cav = g.la_lv_cavity_ed * (1.0 - g.contraction * c);
  const double rv_area = g.la_rv_ed * (1.0 - 0.8 * g.contraction * c);
  // Long axis runs vertically (theta ~ pi/2); the RV sits beside the LV.
  const double theta = kPi / 2 + lay.theta;
  const auto outer = Ellipse::with_area(lay.cy, lay.cx, cav + g.la_wall, kLvRatio, theta);
  const auto inner = Ellipse::with_area(lay.cy, lay.cx, cav, kLvRatio, theta);
  const double rv_b = std::sqrt(rv_area / kPi) / std::sqrt(kRvRatio);
  const double offset = outer.b + rv_b + 1.0 * scale;
  const double ry = lay.cy + std::sin(lay.theta) * offset;
  const double rx = lay.cx - std::cos(lay.theta) * offset;
  const auto rv = Ellipse::with_area(ry, rx, rv_area, kRvRatio, theta);
  return {inner, outer, rv};
}

void render_la(CmrClip& clip, const Geometry& g, const LaLayout& lay, double scale, Rng& noise, double sigma) {
  for (int t = 0; t < clip.frames; ++t) {
    const auto s = la_shapes(g, lay, t, clip.frames, scale);
    render_frame(
        clip, t,
        [&](double y, double x) {
          if (s.lv_inner.contains(y, x)) return 2;
          if (s.lv_outer.contains(y, x)) return 1;
          if (s.rv.contains(y, x)) return 2;
          return 0;
        },
        noise, sigma);
  }
}

double gauss(double t, double center, double width) {
  const double d = (t - center) / width;
  return std::exp(-0.5 * d * d);
}

// Nominal magnitudes used to normalize the base phenotypes before mixing.
constexpr std::array<double, 8> kPhenotypeScale = {250.0, 200.0, 130.0, 0.35, 4.0, 400.0, 330.0, 300.0};

std::vector<double> extend_phenotypes(const std::array<double, 8>& base, int count) {
  std::vector<double> out(base.begin(), base.begin() + std::min(count, 8));
  for (int k = 8; k < count; ++k) {
    Rng w(derive_seed(static_cast<std::uint64_t>(k), "phenotype-mix"));
    double v = 0.0;
    for (int j = 0; j < 8; ++j) v += w.uniform(-1.0, 1.0) * base[j] / kPhenotypeScale[j];
    out.push_back(v);
  }
  return out;
}

}  // namespace

std::string to_string(DiseaseClass c) {
  switch (c) {
    case DiseaseClass::none: return "none";
    case DiseaseClass::cm_dilated: return "cm_dilated";
    case DiseaseClass::cm_hypertrophic: return "cm_hypertrophic";
    case DiseaseClass::cm_restrictive: return "cm_restrictive";
  }
  return "none";
}

DiseaseClass disease_from_string(const std::string& s) {
  for (int k = 0; k < kNumClasses; ++k) {
    if (to_string(static_cast<DiseaseClass>(k)) == s) return static_cast<DiseaseClass>(k);
  }
  throw FormatError("unknown disease class '" + s + "'");
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

DiseaseClass derive_label(const LatentCardiacState& z, const LabelThresholds& thr) {
  if (z.lvm_like >= thr.hypertrophic_lvm) return DiseaseClass::cm_hypertrophic;
  if (z.rvedv_like >= thr.dilated_rvedv) return DiseaseClass::cm_dilated;
  if (z.lvm_like >= thr.restrictive_lvm && z.rvedv_like < thr.restrictive_rvedv) return DiseaseClass::cm_restrictive;
  return DiseaseClass::none;
}

std::array<double, kNumClasses> expected_prevalence(const LabelThresholds& thr) {
  const double hyp = 1.0 - std::clamp(thr.hypertrophic_lvm, 0.0, 1.0);
  const double rest = 1.0 - hyp;
  const double dil = rest * (1.0 - std::clamp(thr.dilated_rvedv, 0.0, 1.0));
  const double lvm_band = rest - std::min(std::clamp(thr.restrictive_lvm, 0.0, 1.0), rest);
  const double res = lvm_band * std::clamp(std::min(thr.restrictive_rvedv, thr.dilated_rvedv), 0.0, 1.0);
  return {rest - dil - res, dil, hyp, res};
}

const std::vector<std::string>& CovariateVector::required_names() {
  static const std::vector<std::string> names = {"sex", "age", "mean_heart_rate"};
  return names;
}

std::optional<double> CovariateVector::get(const std::string& name) const {
  if (name == "sex") return sex;
  if (name == "age") return age;
  if (name == "mean_heart_rate") return mean_heart_rate;
  if (auto it = extra.find(name); it != extra.end()) return it->second;
  return std::nullopt;
}

void CovariateVector::validate() const {
  if (!std::isfinite(sex) || !std::isfinite(age) || !std::isfinite(mean_heart_rate)) {
    throw ConfigError("covariates must be finite");
  }
  for (const auto& [k, v] : extra) {
    if (!std::isfinite(v)) throw ConfigError("covariate '" + k + "' is not finite");
  }
}

void GeneratorConfig::validate() const {
  if (ecg_length < 16) throw ConfigError("ecg_length must be >= 16");
  if (!(sample_rate > 0.0)) throw ConfigError("sample_rate must be positive");
  if (frames < 2) throw ConfigError("frames must be >= 2");
  if (image_size < 16) throw ConfigError("image_size must be >= 16");
  if (phenotypes < 1) throw ConfigError("phenotypes must be >= 1");
  if (sa_slices < 1) throw ConfigError("sa_slices must be >= 1");
  if (!(rate_min > 0.0) || rate_min > rate_max) throw ConfigError("invalid heart-rate range");
  if (qrs_amplitude < 0.0 || wave_amplitude < 0.0 || baseline_amplitude < 0.0 || ecg_noise < 0.0 ||
      image_noise < 0.0 || center_jitter < 0.0) {
    throw ConfigError("generator amplitudes and noise levels must be non-negative");
  }
  const auto& t = thresholds;
  for (double v : {t.hypertrophic_lvm, t.dilated_rvedv, t.restrictive_lvm, t.restrictive_rvedv}) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("label thresholds must lie in [0, 1]");
  }
  if (t.restrictive_rvedv > t.dilated_rvedv) throw ConfigError("restrictive threshold must not exceed dilated threshold");
  if (t.restrictive_lvm <= 0.0) throw ConfigError("restrictive_lvm must be positive so that a zero latent stays unlabelled");
}

EcgRecord EcgComponents::sum() const {
  EcgRecord out = waves;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    out.samples[i] += qrs.samples[i] + baseline.samples[i] + noise.samples[i];
  }
  return out;
}

void PairedSample::validate() const {
  ecg.validate();
  if (cmr_la.frames != cmr_sa.frames) throw FormatError("LA and SA clips have different frame counts");
  if (mask_la.count() == 0 || mask_sa.count() == 0) throw FormatError("heart mask is empty");
  covariates.validate();
}

std::vector<int> CohortManifest::ids(Split s) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == s) out.push_back(static_cast<int>(i));
  }
  return out;
}

void CohortManifest::validate() const {
  if (format_version != kFormatVersion) {
    throw FormatError("unsupported cohort format version " + std::to_string(format_version));
  }
  if (splits.size() != n_samples) throw FormatError("split assignment does not cover every sample");
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& r) {
  const std::array<double, 3> ratios = {r.train, r.val, r.test};
  for (double v : ratios) {
    if (!(v > 0.0)) throw ConfigError("split ratios must be positive");
  }
  if (std::abs(r.train + r.val + r.test - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double exact = ratios[k] * static_cast<double>(n);
    // Guard against 0.7 * 10 = 6.9999999.
    sizes[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[k] = exact - static_cast<double>(sizes[k]);
    assigned += sizes[k];
  }
  std::array<int, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (int k = 0; assigned < n; k = (k + 1) % 3, ++assigned) ++sizes[order[k]];
  return sizes;
}

CohortManifest split_cohort(const CohortManifest& manifest, const SplitRatios& ratios, std::uint64_t seed) {
  const auto sizes = split_sizes(manifest.n_samples, ratios);
  std::vector<int> ids(manifest.n_samples);
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(ids);
  CohortManifest out = manifest;
  out.splits.assign(manifest.n_samples, Split::train);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const Split s = i < sizes[0] ? Split::train : (i < sizes[0] + sizes[1] ? Split::val : Split::test);
    out.splits[ids[i]] = s;
  }
  return out;
}

LatentCardiacState sample_latent(std::uint64_t seed, std::size_t index, const GeneratorConfig& cfg) {
  Rng rng(derive_seed(seed, index));
  LatentCardiacState z;
  z.lvm_like = rng.uniform();
  z.rvedv_like = rng.uniform();
  z.rhythm_rate = rng.uniform(cfg.rate_min, cfg.rate_max);
  z.noise_seed = rng.next();
  z.disease_class = derive_label(z, cfg.thresholds);
  return z;
}

EcgComponents synthesize_ecg(const LatentCardiacState& z, const GeneratorConfig& cfg) {
  const std::size_t n = cfg.ecg_length;
  const double fs = cfg.sample_rate;
  EcgComponents c{EcgRecord(n, fs), EcgRecord(n, fs), EcgRecord(n, fs), EcgRecord(n, fs), {}};
  Rng rng(derive_seed(z.noise_seed, "ecg"));

  const double rr = 60.0 / z.rhythm_rate;
  const double duration = static_cast<double>(n) / fs;
  const double qrs_amp = cfg.qrs_amplitude * (0.5 + 1.5 * z.lvm_like);
  const double p_amp = 0.15 * cfg.wave_amplitude;
  const double t_amp = 0.35 * cfg.wave_amplitude;
  const double t_width = 0.03 + 0.06 * z.rvedv_like;
  const double qrs_spread = 1.0 + 0.5 * z.rvedv_like;
  const double t_delay = 0.30 * std::sqrt(rr);

  std::vector<double> p_src(n, 0.0), qrs_src(n, 0.0), t_src(n, 0.0);
  double beat = rng.uniform(0.0, rr) - rr;
  while (beat < duration + rr) {
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / fs;
      if (std::abs(t - beat) > 0.8) continue;
      p_src[i] += p_amp * gauss(t, beat - 0.16, 0.02);
      qrs_src[i] += qrs_amp * (-0.15 * gauss(t, beat - 0.022 * qrs_spread, 0.008 * qrs_spread) +
                               gauss(t, beat, 0.010 * qrs_spread) -
                               0.30 * gauss(t, beat + 0.025 * qrs_spread, 0.009 * qrs_spread));
      t_src[i] += t_amp * gauss(t, beat + t_delay, t_width);
    }
    const long lo = std::lround((beat - 0.05 * qrs_spread) * fs);
    const long hi = std::lround((beat + 0.05 * qrs_spread) * fs);
    if (hi > 0 && lo < static_cast<long>(n)) {
      c.qrs_windows.emplace_back(static_cast<int>(std::max(lo, 0L)), static_cast<int>(std::min(hi, static_cast<long>(n))));
    }
    beat += rr * (1.0 + 0.02 * rng.normal());
  }

  for (int l = 0; l < kLeads; ++l) {
    const auto& g = kLeadMixing[l];
    const double f1 = rng.uniform(0.05, 0.4), f2 = rng.uniform(0.05, 0.4);
    const double a1 = cfg.baseline_amplitude * rng.uniform(0.5, 1.0);
    const double a2 = cfg.baseline_amplitude * rng.uniform(0.5, 1.0);
    const double ph1 = rng.uniform(0.0, 2 * kPi), ph2 = rng.uniform(0.0, 2 * kPi);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / fs;
      c.waves.at(l, i) = g[0] * p_src[i] + g[2] * t_src[i];
      c.qrs.at(l, i) = g[1] * qrs_src[i];
      c.baseline.at(l, i) = a1 * std::sin(2 * kPi * f1 * t + ph1) + a2 * std::sin(2 * kPi * f2 * t + ph2);
      c.noise.at(l, i) = cfg.ecg_noise * rng.normal();
    }
  }
  return c;
}

PairedSample generate_sample(std::uint64_t seed, std::size_t index, const GeneratorConfig& cfg) {
  PairedSample s;
  s.id = static_cast<int>(index);
  s.latent = sample_latent(seed, index, cfg);
  s.label = s.latent.disease_class;

  Rng cov(derive_seed(s.latent.noise_seed, "covariates"));
  s.covariates.sex = cov.bernoulli(0.5) ? 1.0 : 0.0;
  s.covariates.age = cov.uniform(40.0, 70.0);
  s.covariates.mean_heart_rate = s.latent.rhythm_rate;

  auto comps = synthesize_ecg(s.latent, cfg);
  s.ecg = comps.sum();
  s.qrs_windows = std::move(comps.qrs_windows);

  const double scale = cfg.image_size / 64.0;
  const auto g = geometry_of(s.latent, scale * scale);
  Rng geom(derive_seed(s.latent.noise_seed, "geometry"));
  const double center = (cfg.image_size - 1) / 2.0;
  const double jit = cfg.center_jitter * scale;
  const SaLayout sa{center + geom.uniform(-jit, jit), center + geom.uniform(-jit, jit), geom.uniform(0.0, kPi)};
  const LaLayout la{center + geom.uniform(-jit, jit), center + 3.0 * scale + geom.uniform(-jit, jit),
                    geom.uniform(-kPi / 9, kPi / 9)};

  s.cmr_sa = CmrClip(cfg.frames, cfg.image_size, cfg.image_size, View::short_axis);
  s.cmr_la = CmrClip(cfg.frames, cfg.image_size, cfg.image_size, View::long_axis);
  Rng sa_noise(derive_seed(s.latent.noise_seed, "sa-noise"));
  Rng la_noise(derive_seed(s.latent.noise_seed, "la-noise"));
  render_sa(s.cmr_sa, g, sa, 1.0, sa_noise, cfg.image_noise);
  render_la(s.cmr_la, g, la, scale, la_noise, cfg.image_noise);

  // Heart masks cover the end-diastolic extent (largest over the cycle).
  s.mask_sa = HeartMask(cfg.image_size, cfg.image_size, View::short_axis);
  s.mask_la = HeartMask(cfg.image_size, cfg.image_size, View::long_axis);
  const auto sa_outer = Ellipse::with_area(sa.cy, sa.cx, g.cavity_ed + g.wall, 1.1, sa.theta);
  const auto la_ed = la_shapes(g, la, 0, cfg.frames, scale);
  for (int y = 0; y < cfg.image_size; ++y) {
    for (int x = 0; x < cfg.image_size; ++x) {
      s.mask_sa.at(y, x) = sa_outer.contains(y, x) ? 1 : 0;
      s.mask_la.at(y, x) = (la_ed.lv_outer.contains(y, x) || la_ed.rv.contains(y, x)) ? 1 : 0;
    }
  }

  if (cfg.sa_slices > 1) {
    CmrVolume vol(cfg.image_size, cfg.image_size, cfg.sa_slices, cfg.frames);
    const int mid = cfg.sa_slices / 2;
    Rng vol_noise(derive_seed(s.latent.noise_seed, "sa-volume"));
    for (int k = 0; k < cfg.sa_slices; ++k) {
      CmrClip slice = s.cmr_sa;
      if (k != mid) {
        // Base-to-apex taper of the ventricle.
        const double f = 1.0 - 0.35 * std::abs(k - mid) / std::max(1, mid);
        slice = CmrClip(cfg.frames, cfg.image_size, cfg.image_size, View::short_axis);
        render_sa(slice, g, sa, f * f, vol_noise, cfg.image_noise);
      }
      for (int t = 0; t < cfg.frames; ++t) {
        for (int y = 0; y < cfg.image_size; ++y) {
          for (int x = 0; x < cfg.image_size; ++x) vol.at(y, x, k, t) = slice.at(t, y, x);
        }
      }
    }
    s.sa_volume = std::move(vol);
  }

  s.phenotypes = phenotypes_from_latent(s.latent, cfg, cfg.phenotypes);
  return s;
}

std::vector<PairedSample> generate_samples(std::size_t n, std::uint64_t seed, const GeneratorConfig& cfg,
                                           unsigned threads) {
  cfg.validate();
  if (n < 1) throw ConfigError("cohort size must be >= 1");
  std::vector<PairedSample> out(n);
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = generate_sample(seed, i, cfg);
    return out;
  }
  std::vector<std::jthread> pool;
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += threads) out[i] = generate_sample(seed, i, cfg);
    });
  }
  pool.clear();
  return out;
}

CovariateStats covariate_stats(const std::vector<PairedSample>& samples) {
  CovariateStats st;
  st.names = CovariateVector::required_names();
  const std::size_t k = st.names.size();
  st.mean.assign(k, 0.0);
  st.stddev.assign(k, 1.0);
  if (samples.empty()) return st;
  for (std::size_t j = 0; j < k; ++j) {
    double m = 0.0;
    for (const auto& s : samples) m += *s.covariates.get(st.names[j]);
    m /= static_cast<double>(samples.size());
    double v = 0.0;
    for (const auto& s : samples) {
      const double d = *s.covariates.get(st.names[j]) - m;
      v += d * d;
    }
    v /= static_cast<double>(samples.size());
    st.mean[j] = m;
    st.stddev[j] = v > 0.0 ? std::sqrt(v) : 1.0;
  }
  return st;
}

std::vector<std::string> phenotype_names(int count) {
  static const std::vector<std::string> base = {"lv_mass",           "lv_edv",      "lv_esv",       "lv_ef",
                                                "lv_wall_thickness", "la_blood_ed", "la_wall_area", "la_blood_es"};
  std::vector<std::string> out(base.begin(), base.begin() + std::min<int>(count, 8));
  for (int k = 8; k < count; ++k) out.push_back("mix_" + std::to_string(k));
  return out;
}

std::vector<double> phenotypes_from_latent(const LatentCardiacState& z, const GeneratorConfig& cfg, int count) {
  const double scale = cfg.image_size / 64.0;
  const auto g = geometry_of(z, scale * scale);
  const double esv = g.cavity_ed * (1.0 - g.contraction * cycle(end_systole(cfg.frames), cfg.frames));
  const double thickness = std::sqrt((g.cavity_ed + g.wall) / kPi) - std::sqrt(g.cavity_ed / kPi);
  const double es_c = cycle(end_systole(cfg.frames), cfg.frames);
  const double la_blood_ed = g.la_lv_cavity_ed + g.la_rv_ed;
  const double la_blood_es =
      g.la_lv_cavity_ed * (1.0 - g.contraction * es_c) + g.la_rv_ed * (1.0 - 0.8 * g.contraction * es_c);
  const std::array<double, 8> base = {g.wall,   g.cavity_ed, esv,       (g.cavity_ed - esv) / g.cavity_ed,
                                      thickness, la_blood_ed, g.la_wall, la_blood_es};
  return extend_phenotypes(base, count);
}

double bright_wall_area(const CmrClip& clip, int frame, float threshold) {
  const auto f = clip.frame(frame);
  return static_cast<double>(std::count_if(f.begin(), f.end(), [&](float v) { return v > threshold; }));
}

double cavity_area(const CmrClip& clip, int frame, float lo, float hi) {
  const auto f = clip.frame(frame);
  return static_cast<double>(std::count_if(f.begin(), f.end(), [&](float v) { return v > lo && v < hi; }));
}

std::vector<double> measure_phenotype_proxies(const CmrClip& sa, const CmrClip& la, int count) {
  const int es = end_systole(sa.frames);
  const double wall = bright_wall_area(sa, 0);
  const double edv = cavity_area(sa, 0);
  const double esv = cavity_area(sa, es);
  const double ef = edv > 0.0 ? (edv - esv) / edv : 0.0;
  const double thickness = std::sqrt((edv + wall) / kPi) - std::sqrt(edv / kPi);
  const std::array<double, 8> base = {wall,          edv, esv, ef, thickness, cavity_area(la, 0), bright_wall_area(la, 0),
                                      cavity_area(la, es)};
  return extend_phenotypes(base, count);
}

}  // namespace ecgcmr::cohort
