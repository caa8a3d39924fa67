#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "ecgcmr/nn/ecg_vit.hpp"
#include "ecgcmr/nn/unet.hpp"
#include "ecgcmr/schedule.hpp"

namespace ecgcmr::diffusion {

/// eps_hat(z_t, t, c) with t a [B] tensor of steps in [1, T].
using EpsPredictor =
    std::function<torch::Tensor(const torch::Tensor& z_t, const torch::Tensor& t, const torch::Tensor& context)>;

EpsPredictor predictor(nn::CondUNet& unet);

/// sqrt(ab_t) z0 + sqrt(1 - ab_t) eps with per-item steps t ([B] long).
torch::Tensor q_sample(const torch::Tensor& z0, const torch::Tensor& t, const torch::Tensor& eps,
                       const NoiseSchedule& s);

/// Inverts q_sample given a noise estimate.
torch::Tensor predict_z0(const torch::Tensor& z_t, const torch::Tensor& eps_hat, double alpha_bar_t);

struct NoiseDraw {
  torch::Tensor t;    // [B] long in [1, T]
  torch::Tensor eps;  // shape of z0
};

NoiseDraw draw_noise(const torch::Tensor& z0, int steps, std::uint64_t seed);

/// Mean squared error between eps and eps_hat(q_sample(z0, t, eps), t, c).
torch::Tensor ldm_loss(const EpsPredictor& eps_fn, const torch::Tensor& z0, const torch::Tensor& context,
                       const NoiseDraw& draw, const NoiseSchedule& s);
torch::Tensor ldm_loss(const EpsPredictor& eps_fn, const torch::Tensor& z0, const torch::Tensor& context,
                       const NoiseSchedule& s, std::uint64_t seed);

/// Condition tokens of the frozen ECG encoder, [B, 1 + N, D].
torch::Tensor condition_tokens(nn::EcgVit& encoder, const torch::Tensor& ecg);

/// Full loss from pixels: encode clips with the frozen autoencoder and ECGs
/// with the frozen encoder, then ldm_loss.
torch::Tensor ldm_loss(nn::CondUNet& unet, nn::LatentAutoencoder& ae, nn::EcgVit& encoder, const torch::Tensor& clips,
                       const torch::Tensor& ecg, const NoiseSchedule& s, std::uint64_t seed);

/// DDIM over floor(i T / n) for i = n..1 and finally to the clean sample.
/// `seed` fixes z_T and, for eta > 0, the per-step noise. Returns z_0.
torch::Tensor ddim_sample_latent(const EpsPredictor& eps_fn, c10::IntArrayRef shape, const torch::Tensor& context,
                                 const NoiseSchedule& s, int n_steps, double eta, std::uint64_t seed,
                                 torch::ScalarType dtype = torch::kFloat32);

/// Decoded clips [B, T, H, W].
torch::Tensor ddim_sample(nn::CondUNet& unet, nn::LatentAutoencoder& ae, const torch::Tensor& context,
                          const NoiseSchedule& s, int n_steps, double eta, std::uint64_t seed);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

nlohmann::json to_json(const std::vector<EpochRecord>& curve);

struct AutoencoderTrainConfig {
  int epochs = 10;
  int batch_size = 16;
  double lr = 1e-3;
  double target_mse = 0.01;
  std::uint64_t seed = 0;
};

struct AutoencoderResult {
  nn::LatentAutoencoder model{nullptr};
  std::vector<EpochRecord> curve;
  double val_mse = 0.0;
  bool reached_target = false;
};

/// Reconstruction training on [N, T, H, W] clips; the returned model has its
/// latent scale calibrated on the training clips and is frozen.
AutoencoderResult train_autoencoder(const torch::Tensor& train_clips, const torch::Tensor& val_clips,
                                    const nn::AutoencoderConfig& cfg, const AutoencoderTrainConfig& tc);

struct DiffusionTrainConfig {
  int epochs = 30;
  int batch_size = 8;
  double lr = 3e-4;
  std::uint64_t seed = 0;
};

struct DiffusionResult {
  nn::CondUNet unet{nullptr};  // lowest validation loss weights
  std::vector<EpochRecord> curve;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  std::string ae_hash_before, ae_hash_after;
  std::string encoder_hash_before, encoder_hash_after;
};

/// Trains the U-Net at a constant learning rate on frozen latents and frozen
/// condition tokens. Throws if either frozen module changes.
DiffusionResult train_diffusion(nn::LatentAutoencoder& ae, nn::EcgVit& encoder, const torch::Tensor& train_clips,
                                const torch::Tensor& train_ecg, const torch::Tensor& val_clips,
                                const torch::Tensor& val_ecg, const nn::UNetConfig& cfg, const NoiseSchedule& s,
                                const DiffusionTrainConfig& tc);

}  // namespace ecgcmr::diffusion
