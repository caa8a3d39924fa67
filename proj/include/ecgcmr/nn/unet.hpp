#pragma once

#include <torch/torch.h>

#include "ecgcmr/nn/layers.hpp"

namespace ecgcmr::nn {

struct AutoencoderConfig {
  int downsample = 4;  // power of two
  int latent_channels = 4;
  int width = 32;

  void validate() const;
};

/// Per-frame convolutional autoencoder. Clips are [B, T, H, W]; latents are
/// [B, T, C, H/d, W/d] scaled by a stored factor to roughly unit variance.
class LatentAutoencoderImpl : public torch::nn::Module {
 public:
  explicit LatentAutoencoderImpl(AutoencoderConfig cfg);

  torch::Tensor encode(const torch::Tensor& clips);
  torch::Tensor decode(const torch::Tensor& latents);
  torch::Tensor forward(const torch::Tensor& clips) { return decode(encode(clips)); }

  /// Sets the latent scale to 1 / std of the unscaled latents of `clips`.
  void calibrate_scale(const torch::Tensor& clips);
  double latent_scale() const { return scale_.item<double>(); }
  const AutoencoderConfig& config() const { return cfg_; }

 private:
  AutoencoderConfig cfg_;
  torch::nn::Sequential enc_{nullptr}, dec_{nullptr};
  torch::Tensor scale_;
};
TORCH_MODULE(LatentAutoencoder);

struct UNetConfig {
  int latent_channels = 4;
  int latent_size = 8;
  int frames = 12;
  int width = 32;
  int heads = 4;
  int context_dim = 64;
  bool global_condition = true;  // class token also enters through the timestep embedding

  void validate() const;
};

class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int64_t in, int64_t out, int64_t emb_dim);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& emb);

 private:
  torch::nn::GroupNorm n1_{nullptr}, n2_{nullptr};
  torch::nn::Conv2d c1_{nullptr}, c2_{nullptr}, skip_{nullptr};
  torch::nn::Linear emb_{nullptr};
};
TORCH_MODULE(ResBlock);

/// Spatial self-attention, cross-attention to the condition tokens,
/// attention across frames and a feed-forward layer, each residual.
class SpatioTemporalBlockImpl : public torch::nn::Module {
 public:
  SpatioTemporalBlockImpl(int64_t channels, int64_t heads, int64_t context_dim);
  /// x: [B*T, C, h, w]; context: [B, N, context_dim].
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& context, int64_t frames);

 private:
  torch::nn::LayerNorm ln_s_{nullptr}, ln_c_{nullptr}, ln_t_{nullptr}, ln_f_{nullptr};
  Attention spatial_{nullptr}, cross_{nullptr}, temporal_{nullptr};
  Mlp ff_{nullptr};
};
TORCH_MODULE(SpatioTemporalBlock);

/// Epsilon predictor eps(z_t, t, c) over [B, T, C, h, w] latents; the output
/// has the input's shape.
class CondUNetImpl : public torch::nn::Module {
 public:
  explicit CondUNetImpl(UNetConfig cfg);

  torch::Tensor forward(const torch::Tensor& z, const torch::Tensor& t, const torch::Tensor& context);
  const UNetConfig& config() const { return cfg_; }

 private:
  UNetConfig cfg_;
  torch::nn::Conv2d conv_in_{nullptr}, down_{nullptr}, up_{nullptr}, conv_out_{nullptr};
  torch::Tensor pos_embed_;
  torch::nn::Sequential time_mlp_{nullptr};
  torch::nn::Linear cond_proj_{nullptr};
  ResBlock res_d0_{nullptr}, res_d1_{nullptr}, res_mid_{nullptr}, res_u1_{nullptr}, res_u0_{nullptr};
  SpatioTemporalBlock st_d0_{nullptr}, st_d1_{nullptr}, st_u1_{nullptr}, st_u0_{nullptr};
  torch::nn::GroupNorm norm_out_{nullptr};
};
TORCH_MODULE(CondUNet);

}  // namespace ecgcmr::nn
