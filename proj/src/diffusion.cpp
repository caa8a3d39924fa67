#include "ecgcmr/diffusion.hpp"

#include <cmath>
#include <limits>

#include "ecgcmr/batching.hpp"
#include "ecgcmr/error.hpp"
#include "ecgcmr/log.hpp"
#include "ecgcmr/module_io.hpp"
#include "ecgcmr/random.hpp"

namespace ecgcmr::diffusion {

using nlohmann::json;
using torch::indexing::Slice;

namespace {

torch::Tensor alpha_bar_table(const NoiseSchedule& s, torch::ScalarType dtype) {
  std::vector<double> ab(s.alpha_bar.size() + 1, 1.0);
  std::copy(s.alpha_bar.begin(), s.alpha_bar.end(), ab.begin() + 1);
  return torch::tensor(ab, torch::kFloat64).to(dtype);
}

torch::Tensor per_item(const torch::Tensor& v, const torch::Tensor& like) {
  std::vector<int64_t> shape(static_cast<std::size_t>(like.dim()), 1);
  shape[0] = like.size(0);
  return v.view(shape);
}

std::vector<int64_t> concat_batches(const std::vector<std::size_t>& idx) {
  return std::vector<int64_t>(idx.begin(), idx.end());
}

}  // namespace

EpsPredictor predictor(nn::CondUNet& unet) {
  return [unet](const torch::Tensor& z, const torch::Tensor& t, const torch::Tensor& c) mutable {
    return unet->forward(z, t, c);
  };
}

torch::Tensor q_sample(const torch::Tensor& z0, const torch::Tensor& t, const torch::Tensor& eps,
                       const NoiseSchedule& s) {
  if (z0.sizes() != eps.sizes()) throw ConfigError("q_sample: noise and latent differ in shape");
  if (t.dim() != 1 || t.size(0) != z0.size(0)) throw ConfigError("q_sample: need one step per item");
  if (t.min().item<int64_t>() < 1 || t.max().item<int64_t>() > s.steps) throw ConfigError("q_sample: step out of range");
  auto ab = alpha_bar_table(s, z0.scalar_type()).index_select(0, t.to(torch::kLong));
  return per_item(ab.sqrt(), z0) * z0 + per_item((1.0 - ab).sqrt(), z0) * eps;
}

torch::Tensor predict_z0(const torch::Tensor& z_t, const torch::Tensor& eps_hat, double alpha_bar_t) {
  return (z_t - std::sqrt(1.0 - alpha_bar_t) * eps_hat) / std::sqrt(alpha_bar_t);
}

NoiseDraw draw_noise(const torch::Tensor& z0, int steps, std::uint64_t seed) {
  auto gen = make_generator(seed);
  NoiseDraw d;
  d.t = torch::randint(1, steps + 1, {z0.size(0)}, gen, torch::kLong);
  d.eps = torch::randn(z0.sizes(), gen, z0.options());
  return d;
}

torch::Tensor ldm_loss(const EpsPredictor& eps_fn, const torch::Tensor& z0, const torch::Tensor& context,
                       const NoiseDraw& draw, const NoiseSchedule& s) {
  auto z_t = q_sample(z0, draw.t, draw.eps, s);
  auto loss = (eps_fn(z_t, draw.t, context) - draw.eps).pow(2).mean();
  require_finite(loss, "diffusion loss");
  return loss;
}

torch::Tensor ldm_loss(const EpsPredictor& eps_fn, const torch::Tensor& z0, const torch::Tensor& context,
                       const NoiseSchedule& s, std::uint64_t seed) {
  return ldm_loss(eps_fn, z0, context, draw_noise(z0, s.steps, seed), s);
}

torch::Tensor condition_tokens(nn::EcgVit& encoder, const torch::Tensor& ecg) {
  torch::NoGradGuard ng;
  encoder->eval();
  return encoder->forward(ecg).tokens;
}

torch::Tensor ldm_loss(nn::CondUNet& unet, nn::LatentAutoencoder& ae, nn::EcgVit& encoder, const torch::Tensor& clips,
                       const torch::Tensor& ecg, const NoiseSchedule& s, std::uint64_t seed) {
  torch::Tensor z0;
  {
    torch::NoGradGuard ng;
    ae->eval();
    z0 = ae->encode(clips);
  }
  return ldm_loss(predictor(unet), z0, condition_tokens(encoder, ecg), s, seed);
}

torch::Tensor ddim_sample_latent(const EpsPredictor& eps_fn, c10::IntArrayRef shape, const torch::Tensor& context,
                                 const NoiseSchedule& s, int n_steps, double eta, std::uint64_t seed,
                                 torch::ScalarType dtype) {
  if (n_steps < 1 || n_steps > s.steps) throw ConfigError("DDIM step count must lie in [1, T]");
  if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("DDIM eta must lie in [0, 1]");
  torch::NoGradGuard ng;
  auto gen = make_generator(seed);
  auto z = torch::randn(shape, gen, torch::TensorOptions().dtype(dtype));
  const auto ts = ddim_timesteps(s.steps, n_steps);
  for (int i = n_steps - 1; i >= 0; --i) {
    const int t = ts[static_cast<std::size_t>(i)];
    const int t_prev = i > 0 ? ts[static_cast<std::size_t>(i - 1)] : 0;
    const auto st = ddim_step(s, t, t_prev, eta);
    auto eps_hat = eps_fn(z, torch::full({z.size(0)}, t, torch::kLong), context);
    auto z0_hat = predict_z0(z, eps_hat, st.alpha_bar_t);
    z = std::sqrt(st.alpha_bar_prev) * z0_hat + st.dir * eps_hat;
    if (st.sigma > 0.0) z = z + st.sigma * torch::randn(shape, gen, z.options());
  }
  return z;
}

torch::Tensor ddim_sample(nn::CondUNet& unet, nn::LatentAutoencoder& ae, const torch::Tensor& context,
                          const NoiseSchedule& s, int n_steps, double eta, std::uint64_t seed) {
  unet->eval();
  ae->eval();
  const auto& c = unet->config();
  auto z = ddim_sample_latent(predictor(unet), {context.size(0), c.frames, c.latent_channels, c.latent_size, c.latent_size},
                              context, s, n_steps, eta, seed);
  torch::NoGradGuard ng;
  return ae->decode(z);
}

json to_json(const std::vector<EpochRecord>& curve) {
  json j = json::array();
  for (const auto& e : curve) {
    j.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
  }
  return j;
}

AutoencoderResult train_autoencoder(const torch::Tensor& train_clips, const torch::Tensor& val_clips,
                                    const nn::AutoencoderConfig& cfg, const AutoencoderTrainConfig& tc) {
  if (train_clips.size(0) == 0 || val_clips.size(0) == 0) throw MissingPrerequisite("autoencoder needs train and val clips");
  torch::manual_seed(derive_seed(tc.seed, "autoencoder_init"));
  AutoencoderResult r;
  r.model = nn::LatentAutoencoder(cfg);
  torch::optim::Adam opt(r.model->parameters(), torch::optim::AdamOptions(tc.lr));
  const auto n = static_cast<std::size_t>(train_clips.size(0));
  auto val_mse = [&] {
    torch::NoGradGuard ng;
    r.model->eval();
    double total = 0.0;
    for (int64_t i = 0; i < val_clips.size(0); i += 64) {
      auto x = val_clips.index({Slice(i, i + 64)});
      total += (r.model->forward(x) - x).pow(2).mean().item<double>() * static_cast<double>(x.size(0));
    }
    return total / static_cast<double>(val_clips.size(0));
  };
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    r.model->train();
    EpochRecord rec{epoch + 1, tc.lr, 0.0, 0.0};
    for (const auto& idx : epoch_batches(n, static_cast<std::size_t>(tc.batch_size), tc.seed, epoch)) {
      auto x = train_clips.index_select(0, torch::tensor(concat_batches(idx), torch::kLong));
      auto loss = (r.model->forward(x) - x).pow(2).mean();
      require_finite(loss, "autoencoder loss");
      opt.zero_grad();
      loss.backward();
      opt.step();
      rec.train_loss += loss.item<double>() * static_cast<double>(idx.size()) / static_cast<double>(n);
    }
    rec.val_loss = val_mse();
    log::info("autoencoder epoch ", rec.epoch, " train ", rec.train_loss, " val ", rec.val_loss);
    r.curve.push_back(rec);
  }
  r.val_mse = r.curve.empty() ? val_mse() : r.curve.back().val_loss;
  r.reached_target = r.val_mse < tc.target_mse;
  if (!r.reached_target) {
    log::warn("autoencoder val MSE ", r.val_mse, " above target ", tc.target_mse);
  }
  r.model->calibrate_scale(train_clips.index({Slice(0, 256)}));
  for (auto& p : r.model->parameters()) p.set_requires_grad(false);
  r.model->eval();
  return r;
}

DiffusionResult train_diffusion(nn::LatentAutoencoder& ae, nn::EcgVit& encoder, const torch::Tensor& train_clips,
                                const torch::Tensor& train_ecg, const torch::Tensor& val_clips,
                                const torch::Tensor& val_ecg, const nn::UNetConfig& cfg, const NoiseSchedule& s,
                                const DiffusionTrainConfig& tc) {
  if (train_clips.size(0) == 0 || val_clips.size(0) == 0) throw MissingPrerequisite("diffusion needs train and val clips");
  for (auto& p : ae->parameters()) p.set_requires_grad(false);
  for (auto& p : encoder->parameters()) p.set_requires_grad(false);
  DiffusionResult r;
  r.ae_hash_before = parameters_hash(*ae);
  r.encoder_hash_before = parameters_hash(*encoder);

  auto encode_all = [&](const torch::Tensor& clips, const torch::Tensor& ecg) {
    torch::NoGradGuard ng;
    ae->eval();
    std::vector<torch::Tensor> z, c;
    for (int64_t i = 0; i < clips.size(0); i += 64) {
      z.push_back(ae->encode(clips.index({Slice(i, i + 64)})));
      c.push_back(condition_tokens(encoder, ecg.index({Slice(i, i + 64)})));
    }
    return std::make_pair(torch::cat(z), torch::cat(c));
  };
  const auto [train_z, train_c] = encode_all(train_clips, train_ecg);
  const auto [val_z, val_c] = encode_all(val_clips, val_ecg);
  const auto val_draw = draw_noise(val_z, s.steps, derive_seed(tc.seed, "diffusion_val"));

  torch::manual_seed(derive_seed(tc.seed, "diffusion_init"));
  r.unet = nn::CondUNet(cfg);
  auto eps_fn = predictor(r.unet);
  torch::optim::AdamW opt(r.unet->parameters(), torch::optim::AdamWOptions(tc.lr).weight_decay(0.0));
  const auto n = static_cast<std::size_t>(train_z.size(0));
  r.best_val_loss = std::numeric_limits<double>::infinity();
  Checkpoint best;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    r.unet->train();
    EpochRecord rec{epoch + 1, tc.lr, 0.0, 0.0};
    set_learning_rate(opt, tc.lr);
    const auto batches = epoch_batches(n, static_cast<std::size_t>(tc.batch_size), tc.seed, epoch);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      auto index = torch::tensor(concat_batches(batches[bi]), torch::kLong);
      auto z0 = train_z.index_select(0, index);
      const auto draw_seed = derive_seed(derive_seed(tc.seed, static_cast<std::uint64_t>(epoch)), bi);
      auto loss = ldm_loss(eps_fn, z0, train_c.index_select(0, index), s, draw_seed);
      opt.zero_grad();
      loss.backward();
      opt.step();
      rec.train_loss += loss.item<double>() * static_cast<double>(index.size(0)) / static_cast<double>(n);
    }
    {
      torch::NoGradGuard ng;
      r.unet->eval();
      double total = 0.0;
      for (int64_t i = 0; i < val_z.size(0); i += 32) {
        NoiseDraw d{val_draw.t.index({Slice(i, i + 32)}), val_draw.eps.index({Slice(i, i + 32)})};
        auto z0 = val_z.index({Slice(i, i + 32)});
        total += ldm_loss(eps_fn, z0, val_c.index({Slice(i, i + 32)}), d, s).item<double>() *
                 static_cast<double>(z0.size(0));
      }
      rec.val_loss = total / static_cast<double>(val_z.size(0));
    }
    log::info("diffusion epoch ", rec.epoch, " lr ", rec.lr, " train ", rec.train_loss, " val ", rec.val_loss);
    r.curve.push_back(rec);
    if (rec.val_loss < r.best_val_loss) {
      r.best_val_loss = rec.val_loss;
      r.best_epoch = rec.epoch;
      best = Checkpoint{};
      append_module(best, *r.unet, "");
    }
  }
  load_module(*r.unet, best, "");
  r.ae_hash_after = parameters_hash(*ae);
  r.encoder_hash_after = parameters_hash(*encoder);
  if (r.ae_hash_after != r.ae_hash_before) throw NumericError("frozen autoencoder changed during diffusion training");
  if (r.encoder_hash_after != r.encoder_hash_before) {
    throw NumericError("frozen ECG encoder changed during diffusion training");
  }
  r.unet->eval();
  return r;
}

}  // namespace ecgcmr::diffusion
