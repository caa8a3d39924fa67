#include "ecgcmr/nn/unet.hpp"

#include "ecgcmr/error.hpp"

namespace ecgcmr::nn {

namespace F = torch::nn::functional;
using torch::nn::Conv2d;
using torch::nn::Conv2dOptions;

namespace {

torch::nn::GroupNorm group_norm(int64_t channels) {
  int64_t groups = 8;
  while (channels % groups != 0) groups /= 2;
  return torch::nn::GroupNorm(torch::nn::GroupNormOptions(groups, channels));
}

Conv2d conv3(int64_t in, int64_t out, int64_t stride = 1) {
  return Conv2d(Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

}  // namespace

void AutoencoderConfig::validate() const {
  if (downsample < 1 || (downsample & (downsample - 1)) != 0) {
    throw ConfigError("autoencoder downsample must be a power of two");
  }
  if (latent_channels < 1 || width < 1) throw ConfigError("autoencoder widths must be positive");
}

LatentAutoencoderImpl::LatentAutoencoderImpl(AutoencoderConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const int64_t w = cfg_.width;
  enc_ = torch::nn::Sequential();
  enc_->push_back(conv3(1, w));
  enc_->push_back(torch::nn::SiLU());
  for (int d = cfg_.downsample; d > 1; d /= 2) {
    enc_->push_back(conv3(w, w, 2));
    enc_->push_back(torch::nn::SiLU());
  }
  enc_->push_back(conv3(w, cfg_.latent_channels));
  dec_ = torch::nn::Sequential();
  dec_->push_back(conv3(cfg_.latent_channels, w));
  dec_->push_back(torch::nn::SiLU());
  for (int d = cfg_.downsample; d > 1; d /= 2) {
    dec_->push_back(torch::nn::Upsample(
        torch::nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest)));
    dec_->push_back(conv3(w, w));
    dec_->push_back(torch::nn::SiLU());
  }
  dec_->push_back(conv3(w, 1));
  register_module("enc", enc_);
  register_module("dec", dec_);
  scale_ = register_buffer("latent_scale", torch::ones({1}));
}

torch::Tensor LatentAutoencoderImpl::encode(const torch::Tensor& clips) {
  const auto b = clips.size(0), t = clips.size(1), h = clips.size(2), w = clips.size(3);
  if (h % cfg_.downsample != 0 || w % cfg_.downsample != 0) {
    throw ConfigError("clip size is not divisible by the autoencoder downsample factor");
  }
  auto z = enc_->forward(clips.reshape({b * t, 1, h, w})) * scale_.to(clips.scalar_type());
  return z.view({b, t, z.size(1), z.size(2), z.size(3)});
}

torch::Tensor LatentAutoencoderImpl::decode(const torch::Tensor& latents) {
  const auto b = latents.size(0), t = latents.size(1);
  auto x = dec_->forward(latents.reshape({b * t, latents.size(2), latents.size(3), latents.size(4)}) /
                         scale_.to(latents.scalar_type()));
  return x.view({b, t, x.size(2), x.size(3)});
}

void LatentAutoencoderImpl::calibrate_scale(const torch::Tensor& clips) {
  torch::NoGradGuard ng;
  scale_.fill_(1.0);
  const double sd = encode(clips).std().item<double>();
  if (!(sd > 0.0)) throw NumericError("autoencoder latents have zero variance");
  scale_.fill_(1.0 / sd);
}

void UNetConfig::validate() const {
  if (latent_size % 2 != 0) throw ConfigError("latent size must be even for the two-level U-Net");
  if (width % heads != 0) throw ConfigError("U-Net width must be divisible by the head count");
  if (latent_channels < 1 || frames < 1 || context_dim < 1) throw ConfigError("invalid U-Net dimensions");
}

ResBlockImpl::ResBlockImpl(int64_t in, int64_t out, int64_t emb_dim) {
  n1_ = register_module("n1", group_norm(in));
  c1_ = register_module("c1", conv3(in, out));
  emb_ = register_module("emb", torch::nn::Linear(emb_dim, out));
  n2_ = register_module("n2", group_norm(out));
  c2_ = register_module("c2", conv3(out, out));
  if (in != out) skip_ = register_module("skip", Conv2d(Conv2dOptions(in, out, 1)));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& emb) {
  auto h = c1_(F::silu(n1_(x)));
  h = h + emb_(F::silu(emb)).unsqueeze(-1).unsqueeze(-1);
  h = c2_(F::silu(n2_(h)));
  return (skip_ ? skip_(x) : x) + h;
}

SpatioTemporalBlockImpl::SpatioTemporalBlockImpl(int64_t channels, int64_t heads, int64_t context_dim) {
  auto ln = [&] { return torch::nn::LayerNorm(torch::nn::LayerNormOptions({channels})); };
  ln_s_ = register_module("ln_s", ln());
  spatial_ = register_module("spatial", Attention(channels, heads));
  ln_c_ = register_module("ln_c", ln());
  cross_ = register_module("cross", Attention(channels, heads, context_dim));
  ln_t_ = register_module("ln_t", ln());
  temporal_ = register_module("temporal", Attention(channels, heads));
  ln_f_ = register_module("ln_f", ln());
  ff_ = register_module("ff", Mlp(channels, 2 * channels));
}

torch::Tensor SpatioTemporalBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& context, int64_t frames) {
  const auto bt = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  const auto b = bt / frames, hw = h * w;
  auto s = x.flatten(2).transpose(1, 2);  // [B*T, hw, C]
  s = s + spatial_(ln_s_(s));
  auto q = s.reshape({b, frames * hw, c});
  q = q + cross_->forward(ln_c_(q), context);
  // [B, T, hw, C] -> [B*hw, T, C]
  auto tq = q.view({b, frames, hw, c}).transpose(1, 2).reshape({b * hw, frames, c});
  auto pos = sinusoidal_embedding(torch::arange(frames, x.options()), c).unsqueeze(0);
  tq = tq + temporal_(ln_t_(tq + pos));
  tq = tq + ff_(ln_f_(tq));
  return tq.view({b, hw, frames, c}).transpose(1, 2).reshape({bt, hw, c}).transpose(1, 2).reshape({bt, c, h, w});
}

CondUNetImpl::CondUNetImpl(UNetConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const int64_t w = cfg_.width, w2 = 2 * w, emb = 4 * w;
  conv_in_ = register_module("conv_in", conv3(cfg_.latent_channels, w));
  pos_embed_ = register_parameter("pos_embed", torch::zeros({1, w, cfg_.latent_size, cfg_.latent_size}));
  time_mlp_ = register_module("time_mlp", torch::nn::Sequential(torch::nn::Linear(w, emb), torch::nn::SiLU(),
                                                                 torch::nn::Linear(emb, emb)));
  if (cfg_.global_condition) cond_proj_ = register_module("cond_proj", torch::nn::Linear(cfg_.context_dim, emb));
  res_d0_ = register_module("res_d0", ResBlock(w, w, emb));
  st_d0_ = register_module("st_d0", SpatioTemporalBlock(w, cfg_.heads, cfg_.context_dim));
  down_ = register_module("down", conv3(w, w2, 2));
  res_d1_ = register_module("res_d1", ResBlock(w2, w2, emb));
  st_d1_ = register_module("st_d1", SpatioTemporalBlock(w2, cfg_.heads, cfg_.context_dim));
  res_mid_ = register_module("res_mid", ResBlock(w2, w2, emb));
  res_u1_ = register_module("res_u1", ResBlock(2 * w2, w2, emb));
  st_u1_ = register_module("st_u1", SpatioTemporalBlock(w2, cfg_.heads, cfg_.context_dim));
  up_ = register_module("up", conv3(w2, w));
  res_u0_ = register_module("res_u0", ResBlock(2 * w, w, emb));
  st_u0_ = register_module("st_u0", SpatioTemporalBlock(w, cfg_.heads, cfg_.context_dim));
  norm_out_ = register_module("norm_out", group_norm(w));
  conv_out_ = register_module("conv_out", conv3(w, cfg_.latent_channels));
  {
    torch::NoGradGuard ng;
    pos_embed_.normal_(0.0, 0.02);
  }
}

torch::Tensor CondUNetImpl::forward(const torch::Tensor& z, const torch::Tensor& t, const torch::Tensor& context) {
  if (z.dim() != 5 || z.size(2) != cfg_.latent_channels || z.size(3) != cfg_.latent_size ||
      z.size(4) != cfg_.latent_size) {
    throw ConfigError("latent shape does not match the U-Net configuration");
  }
  if (context.dim() != 3 || context.size(0) != z.size(0) || context.size(2) != cfg_.context_dim) {
    throw ConfigError("condition tokens must be [B, N, context_dim]");
  }
  const auto b = z.size(0), frames = z.size(1);
  auto emb = time_mlp_->forward(sinusoidal_embedding(t.to(z.scalar_type()), cfg_.width));
  if (cond_proj_) emb = emb + cond_proj_(context.select(1, 0));
  emb = emb.repeat_interleave(frames, 0);

  auto x = conv_in_(z.reshape({b * frames, z.size(2), z.size(3), z.size(4)})) + pos_embed_;
  auto h0 = st_d0_->forward(res_d0_(x, emb), context, frames);
  auto h1 = st_d1_->forward(res_d1_(down_(h0), emb), context, frames);
  auto m = res_mid_(h1, emb);
  auto u1 = st_u1_->forward(res_u1_(torch::cat({m, h1}, 1), emb), context, frames);
  auto u0 = up_(F::interpolate(u1, F::InterpolateFuncOptions()
                                       .scale_factor(std::vector<double>{2.0, 2.0})
                                       .mode(torch::kNearest)));
  u0 = st_u0_->forward(res_u0_(torch::cat({u0, h0}, 1), emb), context, frames);
  auto out = conv_out_(F::silu(norm_out_(u0)));
  return out.view(z.sizes());
}

}  // namespace ecgcmr::nn
