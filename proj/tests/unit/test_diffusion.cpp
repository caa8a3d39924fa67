#include "../support/torch_doctest.hpp"

#include <cmath>

#include "../support/criteria.hpp"
#include "../support/oracles.hpp"
#include "ecgcmr/diffusion.hpp"
#include "ecgcmr/error.hpp"
#include "ecgcmr/module_io.hpp"

using namespace ecgcmr;

namespace {

nn::UNetConfig tiny_unet() {
  nn::UNetConfig c;
  c.latent_channels = 2;
  c.latent_size = 4;
  c.frames = 3;
  c.width = 8;
  c.heads = 2;
  c.context_dim = 8;
  return c;
}

}  // namespace

TEST_CASE("linear schedule endpoints") {
  const auto s = linear_beta_schedule(1000);
  CHECK(s.beta_at(1) == 1e-4);
  CHECK(s.beta_at(1000) == doctest::Approx(0.02).epsilon(1e-15));
  CHECK(s.alpha_bar_at(1) == doctest::Approx(0.9999).epsilon(1e-15));
  CHECK(s.alpha_bar_at(0) == 1.0);
  const double ref = oracle::alpha_bar(oracle::linear_betas(1000, 1e-4, 0.02), 1000);
  CHECK(s.alpha_bar_at(1000) == doctest::Approx(ref).epsilon(1e-12));
  CHECK(s.alpha_bar_at(1000) == doctest::Approx(4.04e-5).epsilon(0.01));
  for (int t = 1; t <= 1000; ++t) REQUIRE(s.alpha_bar_at(t) / s.alpha_bar_at(t - 1) == doctest::Approx(s.alpha_at(t)).epsilon(1e-14));
  CHECK_THROWS_AS(linear_beta_schedule(0), ConfigError);
}

TEST_CASE("forward marginal variance at t=3, T=10") {
  const auto s = linear_beta_schedule(10);
  const auto betas = oracle::linear_betas(10, 1e-4, 0.02);
  CHECK(std::abs(oracle::propagated_variance(betas, 3) - (1.0 - s.alpha_bar_at(3))) < 1e-15);
  const std::vector<double> z0 = {0.0, 0.0}, eps = {1.0, -2.0};
  const auto zt = q_sample(z0, 4, eps, s);
  CHECK(zt[0] == doctest::Approx(std::sqrt(1.0 - s.alpha_bar_at(4))));
  CHECK(zt[1] == doctest::Approx(-2.0 * std::sqrt(1.0 - s.alpha_bar_at(4))));
}

TEST_CASE("posterior examples") {
  const auto s = linear_beta_schedule(10);
  const std::vector<double> zero = {0.0};
  CHECK(posterior_params(zero, zero, 5, s).mean[0] == 0.0);
  const double b2 = (1.0 - s.alpha_bar_at(1)) / (1.0 - s.alpha_bar_at(2)) * s.beta_at(2);
  const std::vector<double> a = {0.3}, b = {-0.2};
  CHECK(posterior_params(a, b, 2, s).variance == doctest::Approx(b2).epsilon(1e-14));
  CHECK(s.beta_tilde[1] == doctest::Approx(b2).epsilon(1e-14));
  const auto p1 = posterior_params(a, b, 1, s);
  CHECK(p1.variance == 0.0);
  CHECK(p1.mean[0] == -0.2);
}

TEST_CASE("diffusion algebra criterion") {
  const auto o = criteria::diffusion_algebra();
  INFO(o.detail);
  CHECK(o.pass);
}

TEST_CASE("DDIM timestep grid") {
  CHECK(ddim_timesteps(1000, 20).front() == 50);
  CHECK(ddim_timesteps(1000, 20).back() == 1000);
  CHECK((ddim_timesteps(10, 10) == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10}));
  CHECK((ddim_timesteps(100, 3) == std::vector<int>{33, 66, 100}));
  CHECK_THROWS_AS(ddim_timesteps(10, 11), ConfigError);
}

TEST_CASE("noise loss examples") {
  const auto s = linear_beta_schedule(100);
  auto z0 = torch::randn({1, 100}, torch::kFloat64);
  diffusion::EpsPredictor zero = [](const torch::Tensor& z, const torch::Tensor&, const torch::Tensor&) {
    return torch::zeros_like(z);
  };
  double mean = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const double l = diffusion::ldm_loss(zero, z0, torch::Tensor(), s, seed).item<double>();
    CHECK(l == doctest::Approx(1.0).epsilon(0.3));
    mean += l / 20.0;
  }
  CHECK(mean == doctest::Approx(1.0).epsilon(0.1));

  const auto draw = diffusion::draw_noise(z0, s.steps, 4);
  diffusion::EpsPredictor exact = [&](const torch::Tensor&, const torch::Tensor&, const torch::Tensor&) {
    return draw.eps;
  };
  CHECK(diffusion::ldm_loss(exact, z0, torch::Tensor(), draw, s).item<double>() == 0.0);
  CHECK(draw.t.min().item<int64_t>() >= 1);
  CHECK(draw.t.max().item<int64_t>() <= 100);
}

TEST_CASE("U-Net keeps the latent shape and the autoencoder round-trips shapes") {
  torch::manual_seed(0);
  nn::CondUNet unet(tiny_unet());
  auto z = torch::randn({2, 3, 2, 4, 4});
  auto t = torch::tensor({1, 57}, torch::kLong);
  auto out = unet->forward(z, t, torch::randn({2, 5, 8}));
  CHECK(out.sizes() == z.sizes());

  nn::AutoencoderConfig ac;
  ac.width = 8;
  nn::LatentAutoencoder ae(ac);
  auto clips = torch::rand({2, 3, 16, 16});
  CHECK((ae->encode(clips).sizes() == c10::IntArrayRef{2, 3, 4, 4, 4}));
  CHECK(ae->forward(clips).sizes() == clips.sizes());
  nn::AutoencoderConfig bad;
  bad.downsample = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("conditioning enters the noise prediction") {
  torch::manual_seed(1);
  nn::CondUNet unet(tiny_unet());
  torch::NoGradGuard ng;
  auto z = torch::randn({1, 3, 2, 4, 4});
  auto t = torch::tensor({10}, torch::kLong);
  auto a = unet->forward(z, t, torch::randn({1, 5, 8}));
  auto b = unet->forward(z, t, torch::randn({1, 5, 8}));
  CHECK((a - b).abs().max().item<double>() > 0.0);
}

TEST_CASE("DDIM sampler criterion") {
  const auto o = criteria::ddim_sampler();
  INFO(o.detail);
  CHECK(o.pass);
}

TEST_CASE("identity-capacity autoencoder reconstructs almost exactly") {
  torch::manual_seed(2);
  auto clips = torch::rand({24, 2, 8, 8}) * 2 - 1;
  nn::AutoencoderConfig ac;
  ac.downsample = 1;
  ac.latent_channels = 4;
  ac.width = 16;
  diffusion::AutoencoderTrainConfig tc;
  tc.epochs = 400;
  tc.batch_size = 8;
  tc.lr = 3e-3;
  const auto res = diffusion::train_autoencoder(clips.narrow(0, 0, 16), clips.narrow(0, 16, 8), ac, tc);
  MESSAGE("identity autoencoder val MSE " << res.val_mse);
  CHECK(res.val_mse < 1e-3);
  CHECK(res.model->latent_scale() > 0.0);
  for (const auto& p : res.model->parameters()) CHECK(!p.requires_grad());
}
