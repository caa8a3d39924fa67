#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ecgcmr/types.hpp"

namespace ecgcmr::cohort {

enum class DiseaseClass : int { none = 0, cm_dilated = 1, cm_hypertrophic = 2, cm_restrictive = 3 };
inline constexpr int kNumClasses = 4;

std::string to_string(DiseaseClass c);
DiseaseClass disease_from_string(const std::string& s);

/// Thresholds of the latent -> label map; a latent below every threshold is
/// `none`. With independent U(0,1) latents the defaults give 28% hypertrophic,
/// 18% dilated, 5.1% restrictive (51.1% disease).
struct LabelThresholds {
  double hypertrophic_lvm = 0.72;   // lvm_like >= this
  double dilated_rvedv = 0.75;      // rvedv_like >= this (and not hypertrophic)
  double restrictive_lvm = 0.55;    // lvm_like >= this with a small cavity (and neither of the above)
  double restrictive_rvedv = 0.30;  // small cavity: rvedv_like < this
};

struct LatentCardiacState {
  double lvm_like = 0.0;
  double rvedv_like = 0.0;
  double rhythm_rate = 60.0;
  DiseaseClass disease_class = DiseaseClass::none;
  std::uint64_t noise_seed = 0;
};

DiseaseClass derive_label(const LatentCardiacState& latent, const LabelThresholds& thr = {});

/// Probability of each class for independent uniform latents.
std::array<double, kNumClasses> expected_prevalence(const LabelThresholds& thr);

struct CovariateVector {
  double sex = 0.0;  // 0 female, 1 male
  double age = 0.0;
  double mean_heart_rate = 0.0;
  std::map<std::string, double> extra;

  static const std::vector<std::string>& required_names();
  /// Value by name; extended covariates come from `extra`.
  std::optional<double> get(const std::string& name) const;
  void validate() const;
};

struct GeneratorConfig {
  std::size_t ecg_length = 1000;
  double sample_rate = 500.0;
  int frames = 12;
  int image_size = 64;
  int phenotypes = 8;
  int sa_slices = 1;  // > 1 also writes an [H, W, S, T] short-axis volume
  double rate_min = 45.0;
  double rate_max = 120.0;
  double qrs_amplitude = 1.0;   // scales the QRS complex; 0 flattens it
  double wave_amplitude = 1.0;  // scales P and T waves
  double baseline_amplitude = 0.2;
  double ecg_noise = 0.02;
  double image_noise = 0.03;
  double center_jitter = 6.0;  // pixels at image_size 64
  LabelThresholds thresholds;

  void validate() const;
};

/// Additive parts of a synthetic ECG; ecg = waves + qrs + baseline + noise.
struct EcgComponents {
  EcgRecord waves;  // P and T
  EcgRecord qrs;
  EcgRecord baseline;
  EcgRecord noise;
  std::vector<std::pair<int, int>> qrs_windows;  // [begin, end) sample ranges

  EcgRecord sum() const;
};

struct PairedSample {
  int id = 0;
  LatentCardiacState latent;
  EcgRecord ecg;
  CmrClip cmr_la;
  CmrClip cmr_sa;
  HeartMask mask_la;
  HeartMask mask_sa;
  std::optional<CmrVolume> sa_volume;
  CovariateVector covariates;
  DiseaseClass label = DiseaseClass::none;
  std::vector<double> phenotypes;
  std::vector<std::pair<int, int>> qrs_windows;

  void validate() const;
};

enum class Split { train, val, test };
std::string to_string(Split s);

struct CovariateStats {
  std::vector<std::string> names;
  std::vector<double> mean;
  std::vector<double> stddev;
};

struct CohortManifest {
  static constexpr int kFormatVersion = 1;

  std::string cohort_id;
  std::size_t n_samples = 0;
  std::uint64_t generator_seed = 0;
  int format_version = kFormatVersion;
  std::vector<Split> splits;  // indexed by sample id
  CovariateStats covariate_stats;

  std::vector<int> ids(Split s) const;
  void validate() const;
};

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

/// Split sizes by largest remainder, so sizes always add up to n.
std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& ratios);

/// Seeded disjoint, exhaustive assignment of ids to train/val/test.
CohortManifest split_cohort(const CohortManifest& manifest, const SplitRatios& ratios, std::uint64_t seed);

/// Latent state of sample `index` (first draws of its private stream).
LatentCardiacState sample_latent(std::uint64_t seed, std::size_t index, const GeneratorConfig& cfg);

EcgComponents synthesize_ecg(const LatentCardiacState& latent, const GeneratorConfig& cfg);

/// Generate one sample from its (seed, index) stream.
PairedSample generate_sample(std::uint64_t seed, std::size_t index, const GeneratorConfig& cfg);

/// Generate n samples. Per-sample streams make the result independent of
/// `threads`.
std::vector<PairedSample> generate_samples(std::size_t n, std::uint64_t seed, const GeneratorConfig& cfg,
                                           unsigned threads = 1);

CovariateStats covariate_stats(const std::vector<PairedSample>& samples);

/// Names of the first eight phenotypes; further entries are fixed linear
/// combinations of these ("mix_k").
std::vector<std::string> phenotype_names(int count);

/// Ground-truth phenotypes from the geometry implied by the latent state.
std::vector<double> phenotypes_from_latent(const LatentCardiacState& latent, const GeneratorConfig& cfg, int count);

/// Image-measurable proxies, one per phenotype, computed by thresholding
/// pixel intensities of the raw (uncropped, [0,1]) clips.
std::vector<double> measure_phenotype_proxies(const CmrClip& sa, const CmrClip& la, int count);

/// Pixels brighter than the wall threshold in one frame (myocardium area).
double bright_wall_area(const CmrClip& clip, int frame, float threshold = 0.65f);
/// Pixels in the blood-pool intensity band in one frame.
double cavity_area(const CmrClip& clip, int frame, float lo = 0.30f, float hi = 0.60f);

}  // namespace ecgcmr::cohort
