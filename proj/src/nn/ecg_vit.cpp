#include "ecgcmr/nn/ecg_vit.hpp"

#include "ecgcmr/error.hpp"

namespace ecgcmr::nn {

void EcgVitConfig::validate() const {
  if (patch_height < 1 || patch_width < 1 || leads % patch_height != 0 || length % patch_width != 0) {
    throw ConfigError("ECG patch shape (" + std::to_string(patch_height) + ", " + std::to_string(patch_width) +
                      ") does not tile a " + std::to_string(leads) + " x " + std::to_string(length) + " record");
  }
  if (depth < 1 || heads < 1 || dim % heads != 0) throw ConfigError("ECG ViT width must be divisible by heads");
}

Patches ecg_patchify(const torch::Tensor& ecg, int patch_height, int patch_width) {
  if (ecg.dim() != 3) throw ConfigError("ecg_patchify expects [B, leads, L]");
  const int64_t b = ecg.size(0), leads = ecg.size(1), len = ecg.size(2);
  if (patch_height < 1 || patch_width < 1 || leads % patch_height != 0 || len % patch_width != 0) {
    throw ConfigError("ECG patch shape does not tile the record");
  }
  const int64_t rows = leads / patch_height, cols = len / patch_width;
  Patches p;
  p.values = ecg.reshape({b, rows, patch_height, cols, patch_width})
                 .permute({0, 1, 3, 2, 4})
                 .reshape({b, rows * cols, patch_height * patch_width});
  auto idx = torch::arange(rows * cols, torch::kLong);
  p.lead_index = idx.div(cols, "floor");
  p.time_index = idx.remainder(cols);
  return p;
}

EcgVitImpl::EcgVitImpl(EcgVitConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  embed_ = register_module("embed", torch::nn::Linear(cfg_.patch_height * cfg_.patch_width, cfg_.dim));
  cls_token_ = register_parameter("cls_token", torch::randn({1, 1, cfg_.dim}) * 0.02);
  pos_embed_ = register_parameter("pos_embed", torch::randn({1, cfg_.tokens() + 1, cfg_.dim}) * 0.02);
  for (int i = 0; i < cfg_.depth; ++i) {
    blocks_.push_back(register_module("block" + std::to_string(i), TransformerBlock(cfg_.dim, cfg_.heads, cfg_.mlp_ratio)));
  }
  norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg_.dim})));
  init_weights(*this);
}

EcgVitOutput EcgVitImpl::forward(const torch::Tensor& ecg, bool keep_cam) {
  if (ecg.size(1) != cfg_.leads || ecg.size(2) != cfg_.length) {
    throw ConfigError("ECG ViT expects [B, " + std::to_string(cfg_.leads) + ", " + std::to_string(cfg_.length) + "]");
  }
  auto p = ecg_patchify(ecg, cfg_.patch_height, cfg_.patch_width);
  auto h = embed_(p.values);
  h = torch::cat({cls_token_.expand({h.size(0), 1, cfg_.dim}), h}, 1) + pos_embed_;
  EcgVitOutput out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (i + 1 == blocks_.size()) {
      if (keep_cam && h.requires_grad()) h.retain_grad();
      out.cam_activation = h;
    }
    h = blocks_[i](h);
  }
  out.tokens = norm_(h);
  out.cls = out.tokens.select(1, 0);
  return out;
}

}  // namespace ecgcmr::nn
