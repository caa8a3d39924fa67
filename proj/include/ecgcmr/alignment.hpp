#pragma once

#include <memory>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "ecgcmr/batching.hpp"
#include "ecgcmr/ecg.hpp"
#include "ecgcmr/nn/ecg_vit.hpp"
#include "ecgcmr/ssl.hpp"

namespace ecgcmr::align {

struct AlignConfig {
  nn::EcgVitConfig vit;
  int proj_dim = 128;
  double tau = 0.07;
};

nlohmann::json to_json(const nn::EcgVitConfig& c);
nn::EcgVitConfig vit_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AlignConfig& c);
AlignConfig align_from_json(const nlohmann::json& j);

/// Unit-norm projected embeddings entering the contrastive loss.
struct EmbeddingBatch {
  torch::Tensor ecg;
  torch::Tensor cmr_la;
  torch::Tensor cmr_sa;
  double tau = 0.07;

  void validate() const;
};

struct AlignLoss {
  torch::Tensor total;
  torch::Tensor la;
  torch::Tensor sa;
};

/// info_nce(ecg, la) + info_nce(ecg, sa).
AlignLoss align_loss(const EmbeddingBatch& batch);

/// ECG encoder with its projection plus the CMR-side projections. The CMR
/// encoders live in the SSL checkpoint and only their pooled features enter.
class AlignModelImpl : public torch::nn::Module {
 public:
  AlignModelImpl(AlignConfig cfg, int64_t cmr_dim_la, int64_t cmr_dim_sa);

  torch::Tensor embed_ecg(const torch::Tensor& ecg);
  torch::Tensor embed_cmr(View view, const torch::Tensor& pooled);

  /// Standardise pooled CMR features of `view` with the mean and std of `reference`.
  void set_feature_stats(View view, const torch::Tensor& reference);

  nn::EcgVit& encoder() { return vit_; }
  const AlignConfig& config() const { return cfg_; }

 private:
  AlignConfig cfg_;
  nn::EcgVit vit_{nullptr};
  torch::nn::Linear ecg_proj_{nullptr}, la_proj_{nullptr}, sa_proj_{nullptr};
  torch::Tensor la_center_, la_scale_, sa_center_, sa_scale_;
};
TORCH_MODULE(AlignModel);

struct TrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double lr = 1e-3;
  double warmup_fraction = 0.1;
  double weight_decay = 0.05;
  bool augment = true;
  ecg::AugmentPolicy policy;
  int sa_size = 32;
  int la_size = 48;
  std::uint64_t seed = 0;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

nlohmann::json to_json(const std::vector<EpochRecord>& curve);

struct AlignResult {
  AlignModel model{nullptr};  // best-validation weights
  std::vector<EpochRecord> curve;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  std::string frozen_hash_before;
  std::string frozen_hash_after;
};

/// Model-ready ECG batch [B, 12, L]: augmented in training mode, min-max only otherwise.
torch::Tensor ecg_batch(const SampleRefs& samples, const std::vector<std::size_t>& idx, ecg::Mode mode, int epoch,
                        std::uint64_t seed, const ecg::AugmentPolicy& policy);

/// Frozen pooled CMR features of every sample, [N, D] per view (evaluation path).
std::pair<torch::Tensor, torch::Tensor> frozen_cmr_features(ssl::SslModel& cmr, const SampleRefs& samples,
                                                            int la_size, int sa_size);

AlignResult train_alignment(const SampleRefs& train, const SampleRefs& val, ssl::SslModel& cmr,
                            const AlignConfig& cfg, const TrainConfig& tc);

/// Top-1 ECG -> CMR retrieval accuracy over a gallery of the first `gallery` samples.
double retrieval_top1(AlignModel& model, ssl::SslModel& cmr, const SampleRefs& samples, View view, int gallery,
                      int la_size, int sa_size);

}  // namespace ecgcmr::align
