#pragma once

#include <span>
#include <string>
#include <vector>

namespace ecgcmr::wavelet {

/// Orthogonal wavelet filter bank (decomposition and reconstruction).
struct FilterBank {
  std::string name;
  std::vector<double> dec_lo;
  std::vector<double> dec_hi;
  std::vector<double> rec_lo;
  std::vector<double> rec_hi;
};

/// Supported names: "db6". Throws ConfigError otherwise.
const FilterBank& filter_bank(const std::string& name);

/// Daubechies-6 scaling filter (12 taps, sum = sqrt(2)).
std::span<const double> db6_scaling();

struct Decomposition {
  std::vector<double> approx;
  std::vector<std::vector<double>> details;  // details[0] is the finest band
};

/// Periodized multilevel DWT. Length must be divisible by 2^levels.
Decomposition wavedec(std::span<const double> x, const FilterBank& bank, int levels);
std::vector<double> waverec(const Decomposition& d, const FilterBank& bank);

inline double soft_threshold(double v, double thr) {
  if (v > thr) return v - thr;
  if (v < -thr) return v + thr;
  return 0.0;
}

}  // namespace ecgcmr::wavelet
