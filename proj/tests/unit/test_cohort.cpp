#include <doctest.h>

#include <filesystem>
#include <set>

#include "../support/oracles.hpp"
#include "ecgcmr/cohort.hpp"
#include "ecgcmr/dataset.hpp"
#include "ecgcmr/error.hpp"
#include "ecgcmr/hash.hpp"
#include "ecgcmr/random.hpp"

using namespace ecgcmr;
using namespace ecgcmr::cohort;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("ecgcmr_test_" + name);
  fs::remove_all(p);
  return p;
}

dataset::Cohort small_cohort(std::size_t n, std::uint64_t seed) {
  GeneratorConfig g;
  dataset::Cohort c;
  c.samples = generate_samples(n, seed, g);
  CohortManifest m;
  m.cohort_id = "test";
  m.n_samples = n;
  m.generator_seed = seed;
  c.manifest = split_cohort(m, {}, seed);
  c.manifest.covariate_stats = covariate_stats(c.samples);
  c.info = {{"stage", "synthetic"}};
  return c;
}

}  // namespace

TEST_CASE("cohort written twice from the same seed hashes identically") {
  const auto a = scratch_dir("cohort_a"), b = scratch_dir("cohort_b");
  dataset::write_cohort(a, small_cohort(10, 0));
  dataset::write_cohort(b, small_cohort(10, 0));
  CHECK(sha256_tree(a) == sha256_tree(b));
  CHECK_THROWS_AS(dataset::write_cohort(a, small_cohort(10, 0)), Error);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("cohort round-trips through the on-disk format") {
  const auto dir = scratch_dir("cohort_rt");
  const auto c = small_cohort(6, 3);
  dataset::write_cohort(dir, c);
  const auto back = dataset::load_cohort(dir);
  REQUIRE(back.samples.size() == c.samples.size());
  for (std::size_t i = 0; i < c.samples.size(); ++i) {
    const auto& x = c.samples[i];
    const auto& y = back.samples[i];
    CHECK(x.id == y.id);
    CHECK(x.label == y.label);
    CHECK(x.qrs_windows == y.qrs_windows);
    CHECK(x.mask_sa.data == y.mask_sa.data);
    CHECK(x.cmr_sa.pixels == y.cmr_sa.pixels);
    for (std::size_t k = 0; k < x.ecg.samples.size(); ++k)
      REQUIRE(static_cast<float>(x.ecg.samples[k]) == static_cast<float>(y.ecg.samples[k]));
  }
  CHECK(back.manifest.splits == c.manifest.splits);
  fs::remove_all(dir);
}

TEST_CASE("truncated sample file is rejected") {
  const auto dir = scratch_dir("cohort_trunc");
  dataset::write_cohort(dir, small_cohort(4, 1));
  const auto f = dir / dataset::sample_file(0, "ecg.f32");
  REQUIRE(fs::exists(f));
  fs::resize_file(f, fs::file_size(f) - 8);
  CHECK_THROWS_AS(dataset::load_cohort(dir), Error);
  fs::remove_all(dir);
}

TEST_CASE("zero QRS amplitude leaves only baseline, waves and noise") {
  GeneratorConfig g;
  g.qrs_amplitude = 0.0;
  g.wave_amplitude = 0.0;
  const auto latent = sample_latent(5, 0, g);
  const auto parts = synthesize_ecg(latent, g);
  for (double v : parts.qrs.samples) REQUIRE(v == 0.0);
  const auto total = parts.sum();
  for (std::size_t i = 0; i < total.samples.size(); ++i)
    REQUIRE(total.samples[i] == doctest::Approx(parts.baseline.samples[i] + parts.noise.samples[i]).epsilon(1e-12));
}

TEST_CASE("split sizes follow the 7:1:2 ratio by largest remainder") {
  CHECK(split_sizes(100, {}) == std::array<std::size_t, 3>{70, 10, 20});
  CHECK(split_sizes(10, {}) == std::array<std::size_t, 3>{7, 1, 2});
  for (std::size_t n : {1u, 3u, 17u, 299u, 1001u}) {
    const auto s = split_sizes(n, {});
    CHECK(s[0] + s[1] + s[2] == n);
  }
}

TEST_CASE("split assignment is disjoint, exhaustive and seeded") {
  CohortManifest m;
  m.n_samples = 50;
  const auto a = split_cohort(m, {}, 9), b = split_cohort(m, {}, 9), c = split_cohort(m, {}, 10);
  CHECK(a.splits == b.splits);
  CHECK(a.splits != c.splits);
  std::set<int> all;
  for (auto s : {Split::train, Split::val, Split::test})
    for (int id : a.ids(s)) CHECK(all.insert(id).second);
  CHECK(all.size() == 50);
  CHECK(a.ids(Split::train).size() == 35);
}

TEST_CASE("label map") {
  LatentCardiacState s;
  CHECK(derive_label(s) == DiseaseClass::none);
  s.lvm_like = 0.9;
  CHECK(derive_label(s) == DiseaseClass::cm_hypertrophic);
  s.rvedv_like = 0.9;
  CHECK(derive_label(s) == DiseaseClass::cm_hypertrophic);
  s.lvm_like = 0.1;
  CHECK(derive_label(s) == DiseaseClass::cm_dilated);
  s.lvm_like = 0.6;
  s.rvedv_like = 0.1;
  CHECK(derive_label(s) == DiseaseClass::cm_restrictive);
}

TEST_CASE("class histogram of 1000 seeded latents matches the configured prevalence") {
  GeneratorConfig g;
  std::array<int, kNumClasses> counts{};
  std::array<int, kNumClasses> oracle_counts{};
  for (std::size_t i = 0; i < 1000; ++i) {
    const auto z = sample_latent(11, i, g);
    counts[static_cast<int>(z.disease_class)]++;
    oracle_counts[oracle::disease_class(z.lvm_like, z.rvedv_like)]++;
  }
  CHECK(counts == oracle_counts);
  const auto expected = expected_prevalence(g.thresholds);
  double total = 0.0;
  for (int c = 0; c < kNumClasses; ++c) {
    CHECK(std::abs(counts[c] / 1000.0 - expected[c]) <= 0.03);
    total += expected[c];
  }
  CHECK(total == doctest::Approx(1.0));
  CHECK(expected[0] == doctest::Approx(1.0 - 0.28 - 0.72 * 0.25 - 0.17 * 0.30));
}

TEST_CASE("latents stay in range and labels are recoverable") {
  GeneratorConfig g;
  const auto samples = generate_samples(40, 2, g);
  for (const auto& s : samples) {
    CHECK(s.latent.lvm_like >= 0.0);
    CHECK(s.latent.lvm_like <= 1.0);
    CHECK(s.latent.rvedv_like >= 0.0);
    CHECK(s.latent.rvedv_like <= 1.0);
    CHECK(s.latent.rhythm_rate >= 45.0);
    CHECK(s.latent.rhythm_rate <= 120.0);
    CHECK(derive_label(s.latent, g.thresholds) == s.label);
    CHECK(s.cmr_la.frames == s.cmr_sa.frames);
    CHECK(s.mask_la.count() > 0);
    CHECK(s.mask_sa.count() > 0);
    CHECK(s.phenotypes.size() == 8);
    CHECK_NOTHROW(s.validate());
  }
}

TEST_CASE("parallel and serial generation agree") {
  GeneratorConfig g;
  const auto a = generate_samples(6, 4, g, 1), b = generate_samples(6, 4, g, 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].ecg.samples == b[i].ecg.samples);
    CHECK(a[i].cmr_la.pixels == b[i].cmr_la.pixels);
  }
}

TEST_CASE("phenotypes track their image proxies" * doctest::description("oracle pixel counts on 500 samples")) {
  GeneratorConfig g;
  const auto samples = generate_samples(500, 21, g);
  const int p = g.phenotypes;
  for (int k = 0; k < p; ++k) {
    std::vector<double> truth, proxy;
    for (const auto& s : samples) {
      truth.push_back(s.phenotypes[k]);
      proxy.push_back(measure_phenotype_proxies(s.cmr_sa, s.cmr_la, p)[k]);
    }
    INFO("phenotype " << phenotype_names(p)[k]);
    CHECK(oracle::pearson(truth, proxy) > 0.9);
  }
}

TEST_CASE("lvm_like correlates with the bright-wall area of short-axis frames (n=1000, seed 7)") {
  GeneratorConfig g;
  const auto samples = generate_samples(1000, 7, g);
  std::vector<double> lvm, area;
  for (const auto& s : samples) {
    lvm.push_back(s.latent.lvm_like);
    double a = 0.0;
    for (int t = 0; t < s.cmr_sa.frames; ++t)
      for (float v : s.cmr_sa.frame(t)) a += v > 0.65f ? 1.0 : 0.0;
    area.push_back(a / s.cmr_sa.frames);
  }
  const double r = oracle::pearson(lvm, area);
  MESSAGE("r(lvm_like, bright-wall area) = " << r);
  CHECK(r > 0.9);
}

TEST_CASE("invalid generator settings are rejected") {
  GeneratorConfig g;
  g.frames = 0;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  GeneratorConfig h;
  h.thresholds.restrictive_lvm = 0.0;
  CHECK_THROWS_AS(h.validate(), ConfigError);
  CHECK_THROWS_AS(split_cohort(CohortManifest{}, {0.5, 0.5, 0.5}, 0), ConfigError);
}
