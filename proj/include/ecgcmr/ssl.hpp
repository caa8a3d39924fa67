#pragma once

#include <memory>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "ecgcmr/batching.hpp"
#include "ecgcmr/cmr.hpp"
#include "ecgcmr/nn/swin.hpp"

namespace ecgcmr::ssl {

struct SslConfig {
  nn::SwinStyleConfig la;
  nn::SwinStyleConfig sa;
  double mask_ratio = 0.75;
  double tau = 0.1;
  double lambda = 1.0;
  int proj_dim = 128;
  int decoder_hidden = 256;
  bool share_encoders = false;

  void validate() const;
};

nlohmann::json to_json(const nn::SwinStyleConfig& c);
nn::SwinStyleConfig swin_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SslConfig& c);
SslConfig ssl_from_json(const nlohmann::json& j);

class SslModelImpl : public torch::nn::Module {
 public:
  explicit SslModelImpl(SslConfig cfg);

  nn::SwinEncoder& encoder(View v) { return v == View::long_axis ? enc_la_ : enc_sa_; }
  nn::SslDecoder& decoder(View v) { return v == View::long_axis ? dec_la_ : dec_sa_; }
  torch::nn::Linear& projection(View v) { return v == View::long_axis ? proj_la_ : proj_sa_; }
  const SslConfig& config() const { return cfg_; }

 private:
  SslConfig cfg_;
  nn::SwinEncoder enc_la_{nullptr}, enc_sa_{nullptr};
  nn::SslDecoder dec_la_{nullptr}, dec_sa_{nullptr};
  torch::nn::Linear proj_la_{nullptr}, proj_sa_{nullptr};
};
TORCH_MODULE(SslModel);

/// Mean squared error over masked units only; zero when nothing is masked.
torch::Tensor masked_mse(const torch::Tensor& prediction, const torch::Tensor& target);

/// Decoder predictions for the masked units, [B, M, pixels].
torch::Tensor reconstruct_masked(const nn::EncoderOutput& encoded, const torch::Tensor& masked, nn::SslDecoder& decoder);

struct SslLoss {
  torch::Tensor total;
  torch::Tensor recon_la;
  torch::Tensor recon_sa;
  torch::Tensor contrastive;
};

/// recon_la + recon_sa + lambda * (CE over rows + CE over columns).
SslLoss ssl_objective(const torch::Tensor& recon_la, const torch::Tensor& recon_sa, const torch::Tensor& emb_la,
                      const torch::Tensor& emb_sa, double tau, double lambda);

/// Full masked forward of a paired batch ([B, T, H, W] per view).
SslLoss ssl_loss(SslModel& model, const torch::Tensor& la, const torch::Tensor& sa,
                 const std::vector<nn::MaskPlan>& plans_la, const std::vector<nn::MaskPlan>& plans_sa);

/// Unmasked pooled encoder features (before the SSL projection).
torch::Tensor pooled_features(SslModel& model, View view, const torch::Tensor& clips);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 16;
  double lr = 1e-3;
  double warmup_fraction = 0.1;
  double weight_decay = 0.05;
  bool augment = true;
  cmr::AugmentPolicy policy;
  std::uint64_t seed = 0;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_recon = 0.0;
  double train_contrastive = 0.0;
  double val_loss = 0.0;
};

nlohmann::json to_json(const std::vector<EpochRecord>& curve);

struct SslResult {
  SslModel model{nullptr};
  std::shared_ptr<torch::optim::AdamW> optimizer;
  std::vector<EpochRecord> curve;
  int epoch = 0;
  double val_loss = 0.0;
};

/// Model-ready clip batch of one view: augmented in training mode,
/// normalize_resize only otherwise.
torch::Tensor clip_batch(const SampleRefs& samples, const std::vector<std::size_t>& idx, View view,
                         cmr::Mode mode, int epoch, std::uint64_t seed, const cmr::AugmentPolicy& policy,
                         int out_size);

SslResult train_ssl(const SampleRefs& train, const SampleRefs& val, const SslConfig& cfg, const TrainConfig& tc);

}  // namespace ecgcmr::ssl
