#include "ecgcmr/wavelet.hpp"

#include <array>

#include "ecgcmr/error.hpp"

namespace ecgcmr::wavelet {
namespace {

constexpr std::array<double, 12> kDb6 = {
    0.11154074335010947,  0.49462389039845306,  0.7511339080210954,   0.31525035170919763,
    -0.22626469396543983, -0.12976686756726194, 0.09750160558732304,  0.027522865530305727,
    -0.03158203931748603, 0.0005538422011614961, 0.004777257510945511, -0.0010773010853084796,
};

FilterBank make_bank(std::string name, std::span<const double> h) {
  FilterBank b;
  b.name = std::move(name);
  const std::size_t n = h.size();
  b.rec_lo.assign(h.begin(), h.end());
  b.rec_hi.resize(n);
  b.dec_lo.resize(n);
  b.dec_hi.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    b.rec_hi[k] = ((k % 2) ? -1.0 : 1.0) * h[n - 1 - k];
  }
  for (std::size_t k = 0; k < n; ++k) {
    b.dec_lo[k] = b.rec_lo[n - 1 - k];
    b.dec_hi[k] = b.rec_hi[n - 1 - k];
  }
  return b;
}

// Analysis: out[k] = sum_n f[n] x[(2k + n) mod N] with f the reconstruction
// filter; synthesis is the exact transpose.
void analysis_step(std::span<const double> x, const FilterBank& b, std::vector<double>& lo,
                   std::vector<double>& hi) {
  const std::size_t n = x.size();
  const std::size_t half = n / 2;
  lo.assign(half, 0.0);
  hi.assign(half, 0.0);
  const std::size_t taps = b.rec_lo.size();
  for (std::size_t k = 0; k < half; ++k) {
    double a = 0.0, d = 0.0;
    for (std::size_t j = 0; j < taps; ++j) {
      const double v = x[(2 * k + j) % n];
      a += b.rec_lo[j] * v;
      d += b.rec_hi[j] * v;
    }
    lo[k] = a;
    hi[k] = d;
  }
}

std::vector<double> synthesis_step(std::span<const double> lo, std::span<const double> hi, const FilterBank& b) {
  const std::size_t half = lo.size();
  const std::size_t n = 2 * half;
  std::vector<double> x(n, 0.0);
  const std::size_t taps = b.rec_lo.size();
  for (std::size_t k = 0; k < half; ++k) {
    for (std::size_t j = 0; j < taps; ++j) {
      x[(2 * k + j) % n] += b.rec_lo[j] * lo[k] + b.rec_hi[j] * hi[k];
    }
  }
  return x;
}

}  // namespace

std::span<const double> db6_scaling() { return kDb6; }

const FilterBank& filter_bank(const std::string& name) {
  static const FilterBank db6 = make_bank("db6", kDb6);
  if (name == "db6") return db6;
  throw ConfigError("unsupported wavelet '" + name + "' (supported: db6)");
}

Decomposition wavedec(std::span<const double> x, const FilterBank& bank, int levels) {
  if (levels < 1) throw ConfigError("wavelet levels must be >= 1");
  const std::size_t block = std::size_t{1} << levels;
  if (x.empty() || x.size() % block != 0) {
    throw ConfigError("signal length " + std::to_string(x.size()) + " not divisible by 2^" +
                      std::to_string(levels));
  }
  Decomposition d;
  std::vector<double> current(x.begin(), x.end());
  std::vector<double> lo, hi;
  for (int level = 0; level < levels; ++level) {
    analysis_step(current, bank, lo, hi);
    d.details.push_back(hi);
    current.swap(lo);
  }
  d.approx = std::move(current);
  return d;
}

std::vector<double> waverec(const Decomposition& d, const FilterBank& bank) {
  std::vector<double> current = d.approx;
  for (auto it = d.details.rbegin(); it != d.details.rend(); ++it) {
    if (it->size() != current.size()) throw FormatError("inconsistent wavelet band sizes");
    current = synthesis_step(current, *it, bank);
  }
  return current;
}

}  // namespace ecgcmr::wavelet
