#include "../support/torch_doctest.hpp"

#include <cmath>
#include <random>

#include "../support/criteria.hpp"
#include "../support/oracles.hpp"
#include "ecgcmr/alignment.hpp"
#include "ecgcmr/error.hpp"
#include "ecgcmr/schedule.hpp"

using namespace ecgcmr;

namespace {

torch::Tensor orthonormal(int64_t n, int64_t d) {
  return torch::eye(d, torch::kFloat64).narrow(0, 0, n).contiguous();
}

std::vector<std::vector<double>> rows_of(const torch::Tensor& t) {
  auto c = t.to(torch::kFloat64).contiguous();
  std::vector<std::vector<double>> out(c.size(0), std::vector<double>(c.size(1)));
  auto a = c.accessor<double, 2>();
  for (int64_t i = 0; i < c.size(0); ++i)
    for (int64_t j = 0; j < c.size(1); ++j) out[i][j] = a[i][j];
  return out;
}

}  // namespace

TEST_CASE("ECG patch token counts") {
  CHECK(nn::ecg_patchify(torch::zeros({1, 12, 5000}), 1, 100).values.size(1) == 600);
  CHECK(nn::ecg_patchify(torch::zeros({1, 12, 500}), 1, 50).values.size(1) == 120);
  auto x = torch::arange(100, torch::kFloat32).reshape({1, 1, 100});
  const auto p = nn::ecg_patchify(x, 1, 100);
  CHECK((p.values.sizes() == c10::IntArrayRef{1, 1, 100}));
  CHECK(torch::equal(p.values.reshape({-1}), x.reshape({-1})));
  const auto q = nn::ecg_patchify(torch::zeros({2, 12, 40}), 1, 10);
  CHECK(q.lead_index[4].item<int64_t>() == 1);
  CHECK(q.time_index[4].item<int64_t>() == 0);
  CHECK_THROWS_AS(nn::ecg_patchify(torch::zeros({1, 12, 45}), 1, 10), ConfigError);
}

TEST_CASE("InfoNCE examples") {
  auto e = orthonormal(2, 2);
  CHECK(nn::info_nce(e, e, 1.0).item<double>() == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0))));
  CHECK(nn::info_nce(e, e, 1.0).item<double>() == doctest::Approx(0.3133).epsilon(1e-4));
  auto same = torch::full({2, 3}, 1.0 / std::sqrt(3.0), torch::kFloat64);
  CHECK(nn::info_nce(same, same, 1.0).item<double>() == doctest::Approx(std::log(2.0)));
  auto one = orthonormal(1, 4);
  CHECK(nn::info_nce(one, one, 0.07).item<double>() == 0.0);
}

TEST_CASE("InfoNCE equals a brute-force softmax on random 4x8 inputs") {
  torch::manual_seed(5);
  for (int k = 0; k < 10; ++k) {
    auto a = torch::randn({4, 8}, torch::kFloat64), b = torch::randn({4, 8}, torch::kFloat64);
    const double tau = 0.1 + 0.2 * k;
    const double lib = nn::info_nce(a, b, tau).item<double>();
    CHECK(std::abs(lib - oracle::info_nce(rows_of(a), rows_of(b), tau)) < 1e-6);
    CHECK(std::abs(lib - nn::info_nce(b, a, tau).item<double>()) < 1e-12);
    auto perm = torch::tensor({2, 0, 3, 1}, torch::kLong);
    CHECK(std::abs(lib - nn::info_nce(a.index_select(0, perm), b.index_select(0, perm), tau).item<double>()) < 1e-12);
  }
}

TEST_CASE("alignment loss examples") {
  auto e = nn::l2_normalize(torch::randn({4, 6}, torch::kFloat64));
  auto c = torch::randn({4, 6}, torch::kFloat64);
  c = nn::l2_normalize(c);
  const auto same = align::align_loss({e, c, c, 0.5});
  CHECK(same.total.item<double>() == doctest::Approx(2.0 * same.la.item<double>()).epsilon(1e-14));

  auto right = align::align_loss({e, e, e, 0.5});
  auto perm = torch::tensor({1, 0, 3, 2}, torch::kLong);
  auto wrong = align::align_loss({e, e.index_select(0, perm), e, 0.5});
  CHECK(wrong.total.item<double>() > right.total.item<double>());

  auto o = orthonormal(8, 8);
  CHECK(align::align_loss({o, o, o, 0.01}).total.item<double>() < 1e-3);

  align::EmbeddingBatch bad{e, e.narrow(0, 0, 3), e, 0.5};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("projections are unit norm") {
  align::AlignConfig cfg;
  cfg.vit.length = 100;
  cfg.vit.patch_width = 25;
  cfg.vit.dim = 16;
  cfg.vit.depth = 1;
  cfg.vit.heads = 2;
  cfg.proj_dim = 8;
  torch::manual_seed(2);
  align::AlignModel m(cfg, 10, 12);
  torch::NoGradGuard ng;
  auto ecg = m->embed_ecg(torch::randn({3, 12, 100}) * 50.0);
  auto la = m->embed_cmr(View::long_axis, torch::randn({3, 10}) * 1e-3);
  auto sa = m->embed_cmr(View::short_axis, torch::randn({3, 12}));
  for (auto t : {ecg, la, sa}) {
    CHECK(t.size(1) == 8);
    CHECK(torch::allclose(t.norm(2, 1), torch::ones({3}), 1e-5, 1e-6));
  }
}

TEST_CASE("warm-up midpoint learning rate is half of the peak") {
  const LrSchedule s{LrSchedule::Kind::warmup_constant, 1e-4, 2.0, 20.0};
  CHECK(s.at(1.0) == doctest::Approx(5e-5));
}

TEST_CASE("freeze contracts criterion") {
  const auto o = criteria::freeze_contracts();
  INFO(o.detail);
  CHECK(o.pass);
}
