#include <doctest.h>

#include <cmath>
#include <random>

#include "../support/oracles.hpp"
#include "ecgcmr/ecg.hpp"
#include "ecgcmr/error.hpp"
#include "ecgcmr/wavelet.hpp"

using namespace ecgcmr;
using namespace ecgcmr::ecg;

namespace {

constexpr double kPi = 3.14159265358979323846;

EcgRecord from_fn(std::size_t n, const std::function<double(int, std::size_t)>& f) {
  EcgRecord r(n, 500.0);
  for (int l = 0; l < kLeads; ++l)
    for (std::size_t i = 0; i < n; ++i) r.at(l, i) = f(l, i);
  return r;
}

double max_abs(const EcgRecord& r) {
  double m = 0.0;
  for (double v : r.samples) m = std::max(m, std::abs(v));
  return m;
}

std::pair<double, double> fit_line(std::span<const double> y) {
  const double n = static_cast<double>(y.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    sx += i;
    sy += y[i];
    sxx += double(i) * i;
    sxy += i * y[i];
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  return {slope, (sy - slope * sx) / n};
}

}  // namespace

TEST_CASE("baseline removal keeps a pure one-period sinusoid") {
  const int period = 100;
  const auto x = from_fn(1000, [&](int l, std::size_t i) { return (1.0 + 0.1 * l) * std::sin(2 * kPi * i / period); });
  const auto y = remove_baseline(x, period);
  double dev = 0.0;
  for (std::size_t k = 0; k < x.samples.size(); ++k) dev = std::max(dev, std::abs(y.samples[k] - x.samples[k]));
  CHECK(dev < 1e-6 * max_abs(x));
}

TEST_CASE("baseline removal flattens a linear ramp") {
  const int period = 100;
  const auto x = from_fn(1000, [&](int, std::size_t i) { return 0.2 * std::sin(2 * kPi * i / period) + 2.0 * i / 999.0; });
  const auto y = remove_baseline(x, period);
  const double in_slope = fit_line(x.lead(0)).first;
  const double out_slope = fit_line(y.lead(0)).first;
  CHECK(std::abs(out_slope) < 0.05 * std::abs(in_slope));
}

TEST_CASE("baseline removal of constant and zero signals") {
  const auto c = remove_baseline(from_fn(600, [](int, std::size_t) { return 3.0; }), 50);
  CHECK(max_abs(c) < 1e-9);
  const auto z = remove_baseline(from_fn(600, [](int, std::size_t) { return 0.0; }), 50);
  CHECK(max_abs(z) == 0.0);
  CHECK_THROWS_AS(remove_baseline(from_fn(60, [](int, std::size_t) { return 0.0; }), 50), ConfigError);
}

TEST_CASE("db6 filter bank is orthonormal") {
  const auto h = wavelet::db6_scaling();
  REQUIRE(h.size() == 12);
  double sum = 0.0, sq = 0.0;
  for (double v : h) {
    sum += v;
    sq += v * v;
  }
  CHECK(sum == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  CHECK(sq == doctest::Approx(1.0).epsilon(1e-12));
  for (std::size_t k = 1; k < 6; ++k) {
    double dot = 0.0;
    for (std::size_t i = 0; i + 2 * k < h.size(); ++i) dot += h[i] * h[i + 2 * k];
    CHECK(std::abs(dot) < 1e-12);
  }
}

TEST_CASE("wavelet round trip is exact without thresholding") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  std::vector<double> x(256);
  for (auto& v : x) v = nd(rng);
  const auto& bank = wavelet::filter_bank("db6");
  const auto d = wavelet::wavedec(x, bank, 4);
  CHECK(d.details.size() == 4);
  const auto y = wavelet::waverec(d, bank);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == doctest::Approx(x[i]).epsilon(1e-10));

  PreprocessConfig cfg;
  cfg.threshold_rule = ThresholdRule::fixed;
  cfg.fixed_threshold = 0.0;
  const auto rec = from_fn(1000, [&](int, std::size_t) { return nd(rng); });
  const auto out = wavelet_denoise(rec, cfg);
  double err = 0.0;
  for (std::size_t k = 0; k < rec.samples.size(); ++k) err = std::max(err, std::abs(out.samples[k] - rec.samples[k]));
  CHECK(err < 1e-6 * max_abs(rec));
  CHECK_THROWS_AS(wavelet::filter_bank("haar9"), ConfigError);
}

TEST_CASE("wavelet denoising lowers the error to a clean template over 20 seeds") {
  PreprocessConfig cfg;
  const auto clean = from_fn(1000, [](int l, std::size_t i) {
    const double t = i / 500.0;
    return (0.3 + 0.05 * l) * std::sin(2 * kPi * 1.2 * t) + std::exp(-std::pow((std::fmod(t, 0.8) - 0.4) / 0.02, 2));
  });
  for (unsigned seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 0.05);
    EcgRecord noisy = clean;
    for (auto& v : noisy.samples) v += nd(rng);
    const auto out = wavelet_denoise(noisy, cfg);
    double in_se = 0.0, out_se = 0.0;
    for (std::size_t k = 0; k < clean.samples.size(); ++k) {
      in_se += std::pow(noisy.samples[k] - clean.samples[k], 2);
      out_se += std::pow(out.samples[k] - clean.samples[k], 2);
    }
    CHECK(out_se < in_se);
  }
}

TEST_CASE("Savitzky-Golay coefficients equal the least-squares fit") {
  for (auto [w, p] : std::vector<std::pair<int, int>>{{5, 2}, {7, 2}, {11, 3}, {9, 4}}) {
    const auto lib = savgol_coefficients(w, p);
    const auto ref = oracle::savgol_center_weights(w, p);
    REQUIRE(lib.size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(lib[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
  const auto c = savgol_coefficients(5, 2);
  const std::vector<double> known = {-3 / 35.0, 12 / 35.0, 17 / 35.0, 12 / 35.0, -3 / 35.0};
  for (std::size_t i = 0; i < 5; ++i) CHECK(c[i] == doctest::Approx(known[i]).epsilon(1e-12));
}

TEST_CASE("Savitzky-Golay reproduces polynomials of the fitted degree") {
  for (auto [w, p] : std::vector<std::pair<int, int>>{{5, 2}, {11, 3}}) {
    const auto x = from_fn(200, [&](int l, std::size_t i) {
      const double t = i / 10.0;
      return p == 2 ? 0.3 * t * t - t + l : 0.01 * t * t * t - 0.2 * t * t + t - l;
    });
    const auto y = savgol_smooth(x, w, p);
    for (int l = 0; l < kLeads; ++l)
      for (std::size_t i = w / 2; i + w / 2 < x.length; ++i) REQUIRE(std::abs(y.at(l, i) - x.at(l, i)) < 1e-9);
  }
  const auto c = from_fn(50, [](int, std::size_t) { return 1.7; });
  const auto y = savgol_smooth(c, 11, 3);
  for (std::size_t k = 0; k < c.samples.size(); ++k) CHECK(y.samples[k] == doctest::Approx(1.7).epsilon(1e-12));
  CHECK_THROWS_AS(savgol_smooth(c, 4, 2), ConfigError);
  CHECK_THROWS_AS(savgol_smooth(c, 5, 5), ConfigError);
}

TEST_CASE("min-max scaling") {
  auto r = from_fn(3, [](int l, std::size_t i) { return l == 1 ? 5.0 : static_cast<double>(i); });
  std::vector<int> constant;
  const auto y = minmax_scale(r, &constant);
  CHECK(y.at(0, 0) == -1.0);
  CHECK(y.at(0, 1) == 0.0);
  CHECK(y.at(0, 2) == 1.0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(y.at(1, i) == 0.0);
  CHECK(constant == std::vector<int>{1});

  const auto full = from_fn(4, [](int, std::size_t i) { return std::vector<double>{-1.0, 0.25, 1.0, -0.5}[i]; });
  const auto same = minmax_scale(full);
  CHECK(same.samples == full.samples);
}

TEST_CASE("scaled leads span exactly [-1, 1]") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-3.0, 7.0);
  const auto r = from_fn(500, [&](int, std::size_t) { return u(rng); });
  const auto y = minmax_scale(r);
  for (int l = 0; l < kLeads; ++l) {
    const auto lead = y.lead(l);
    CHECK(*std::min_element(lead.begin(), lead.end()) == -1.0);
    CHECK(*std::max_element(lead.begin(), lead.end()) == 1.0);
  }
}

TEST_CASE("preprocess runs baseline, wavelet, Savitzky-Golay in order") {
  std::vector<Stage> trace;
  const auto r = from_fn(1000, [](int l, std::size_t i) { return std::sin(i * 0.05 + l); });
  preprocess(r, PreprocessConfig{}, 60.0, &trace);
  CHECK(trace == std::vector<Stage>{Stage::baseline, Stage::wavelet, Stage::savgol});
  CHECK(period_for_rate(500.0, 60.0, 5000) == 500);
  CHECK(period_for_rate(500.0, 45.0, 1000) == 500);
}

TEST_CASE("flips are involutions") {
  const auto r = from_fn(100, [](int l, std::size_t i) { return std::cos(i * 0.1) * (l + 1); });
  CHECK(time_flip(time_flip(r)).samples == r.samples);
  CHECK(time_flip(r).at(3, 0) == r.at(3, 99));
  const auto s = sign_flip(r);
  for (std::size_t k = 0; k < r.samples.size(); ++k) CHECK(s.samples[k] == -r.samples[k]);
}

TEST_CASE("augmentation with every option off is plain min-max scaling") {
  AugmentPolicy off;
  off.crop_scale_min = off.crop_scale_max = 1.0;
  off.time_flip_prob = off.sign_flip_prob = 0.0;
  const auto r = from_fn(300, [](int l, std::size_t i) { return std::sin(i * 0.07) + 0.1 * l; });
  for (std::uint64_t seed : {0u, 1u, 99u}) CHECK(augment_ecg(r, seed, off).samples == minmax_scale(r).samples);
}

TEST_CASE("evaluation path is scaling only, whatever the seed and policy") {
  AugmentPolicy wild;
  wild.time_flip_prob = wild.sign_flip_prob = 1.0;
  wild.crop_scale_min = 0.5;
  const auto r = from_fn(300, [](int l, std::size_t i) { return std::sin(i * 0.03 * (l + 1)); });
  const auto ref = minmax_scale(r);
  for (std::uint64_t seed : {0u, 5u}) CHECK(prepare_for_model(r, Mode::eval, seed, wild).samples == ref.samples);
  CHECK(prepare_for_model(r, Mode::train, 5, wild).samples != ref.samples);
}

TEST_CASE("crop-resize of the full window is the identity") {
  const auto r = from_fn(64, [](int l, std::size_t i) { return i * 0.5 - l; });
  CHECK(crop_resize(r, 0, 64).samples == r.samples);
  const auto half = crop_resize(r, 16, 32);
  CHECK(half.length == 64);
  CHECK(half.at(0, 0) == doctest::Approx(r.at(0, 16)));
  CHECK(half.at(0, 63) == doctest::Approx(r.at(0, 47)));
}
