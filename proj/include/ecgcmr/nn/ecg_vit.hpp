#pragma once

#include <torch/torch.h>

#include "ecgcmr/nn/layers.hpp"

namespace ecgcmr::nn {

struct EcgVitConfig {
  int leads = 12;
  int length = 1000;
  int patch_height = 1;
  int patch_width = 50;
  int dim = 64;
  int depth = 4;
  int heads = 4;
  double mlp_ratio = 2.0;

  int tokens() const { return (leads / patch_height) * (length / patch_width); }
  void validate() const;
};

struct Patches {
  torch::Tensor values;     // [B, N, patch_height * patch_width]
  torch::Tensor lead_index;  // [N] patch row
  torch::Tensor time_index;  // [N] patch column
};

/// Lead-major then time tokenization of a [B, leads, L] batch.
Patches ecg_patchify(const torch::Tensor& ecg, int patch_height, int patch_width);

struct EcgVitOutput {
  torch::Tensor cls;     // [B, D] global embedding
  torch::Tensor tokens;  // [B, 1 + N, D] final normalized sequence, class token first
  torch::Tensor cam_activation;  // [B, 1 + N, D] input of the last block (grad retained on request)
};

class EcgVitImpl : public torch::nn::Module {
 public:
  explicit EcgVitImpl(EcgVitConfig cfg);

  EcgVitOutput forward(const torch::Tensor& ecg, bool keep_cam = false);
  const EcgVitConfig& config() const { return cfg_; }

 private:
  EcgVitConfig cfg_;
  torch::nn::Linear embed_{nullptr};
  torch::Tensor cls_token_;
  torch::Tensor pos_embed_;
  std::vector<TransformerBlock> blocks_;
  torch::nn::LayerNorm norm_{nullptr};
};
TORCH_MODULE(EcgVit);

}  // namespace ecgcmr::nn
