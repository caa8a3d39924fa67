#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "ecgcmr/nn/layers.hpp"

namespace ecgcmr::nn {

/// Hierarchical windowed-attention encoder. Frames enter as channels.
struct SwinStyleConfig {
  int image_size = 32;
  int in_channels = 12;
  int patch_size = 4;
  int window_size = 4;
  std::vector<int> depths{2, 2};
  std::vector<int> heads{2, 4};
  std::vector<int> dims{32, 64};
  double mlp_ratio = 2.0;

  int stages() const { return static_cast<int>(depths.size()); }
  int grid(int stage) const { return image_size / patch_size >> stage; }
  /// Side of one mask unit in pixels: a final-stage token.
  int mask_unit() const { return patch_size << (stages() - 1); }
  int unit_grid() const { return image_size / mask_unit(); }
  int total_units() const { return unit_grid() * unit_grid(); }
  int unit_pixels() const { return in_channels * mask_unit() * mask_unit(); }
  void validate() const;
};

struct MaskPlan {
  int total_patches = 0;
  std::vector<int> masked;   // ascending
  std::vector<int> visible;  // ascending
  double mask_ratio = 0.0;

  void validate() const;
};

/// round(ratio * total) units drawn uniformly without replacement.
MaskPlan make_mask_plan(int total_patches, double mask_ratio, std::uint64_t seed);
/// Degenerate plan with every unit visible.
MaskPlan full_plan(int total_patches);

/// Visible units bucketed by the final-stage window that holds them.
std::vector<std::vector<int>> visible_groups(const MaskPlan& plan, int unit_grid, int window_size);

/// [B, U] boolean visibility from per-sample plans.
torch::Tensor visibility(const std::vector<MaskPlan>& plans);
/// [B, M] indices of masked units; every plan must mask the same count.
torch::Tensor masked_indices(const std::vector<MaskPlan>& plans);

/// Attention inside (optionally shifted) windows of a [B, G, G, C] map.
/// Tokens with visible == false are never attended to; the map is padded
/// with invisible tokens up to a multiple of the window.
torch::Tensor window_attention(Attention& attn, const torch::Tensor& x, const torch::Tensor& visible, int window,
                               bool shift);

class WindowBlockImpl : public torch::nn::Module {
 public:
  WindowBlockImpl(int64_t dim, int64_t heads, int window, bool shift, double mlp_ratio);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& visible);

 private:
  int window_;
  bool shift_;
  torch::nn::LayerNorm ln1_{nullptr}, ln2_{nullptr};
  Attention attn_{nullptr};
  Mlp mlp_{nullptr};
};
TORCH_MODULE(WindowBlock);

class PatchMergingImpl : public torch::nn::Module {
 public:
  PatchMergingImpl(int64_t dim, int64_t out_dim);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::LayerNorm norm_{nullptr};
  torch::nn::Linear reduce_{nullptr};
};
TORCH_MODULE(PatchMerging);

struct EncoderOutput {
  torch::Tensor tokens;   // [B, U, D] final-stage tokens after the last norm
  torch::Tensor visible;  // [B, U] bool, undefined when unmasked
};

class SwinEncoderImpl : public torch::nn::Module {
 public:
  explicit SwinEncoderImpl(SwinStyleConfig cfg);

  /// Plain forward over every patch.
  torch::Tensor forward(const torch::Tensor& x);
  /// Forward where only visible units take part; invisible tokens are zero.
  EncoderOutput forward_masked(const torch::Tensor& x, const torch::Tensor& visible_units);

  const SwinStyleConfig& config() const { return cfg_; }
  int64_t out_dim() const { return cfg_.dims.back(); }

 private:
  SwinStyleConfig cfg_;
  torch::nn::Conv2d patch_embed_{nullptr};
  torch::Tensor pos_embed_;
  std::vector<std::vector<WindowBlock>> blocks_;
  std::vector<PatchMerging> merges_;
  torch::nn::LayerNorm norm_{nullptr};
};
TORCH_MODULE(SwinEncoder);

/// Embeddings of the visible units only, [B, |visible|, D].
torch::Tensor encode_visible(SwinEncoder& encoder, const torch::Tensor& x, const std::vector<MaskPlan>& plans);

/// Mean over visible final-stage tokens (all tokens when unmasked).
torch::Tensor pool_tokens(const EncoderOutput& out);

/// Pixels of each mask unit, [B, U, C * unit * unit] (channel, row, column order).
torch::Tensor unit_patches(const torch::Tensor& x, int unit);

/// MLP decoder: global visible context plus the masked unit's position
/// embedding -> that unit's pixels.
class SslDecoderImpl : public torch::nn::Module {
 public:
  SslDecoderImpl(int64_t dim, int64_t units, int64_t out_pixels, int64_t hidden);
  torch::Tensor forward(const torch::Tensor& context, const torch::Tensor& masked);

 private:
  torch::Tensor pos_;
  Mlp mlp_{nullptr};
};
TORCH_MODULE(SslDecoder);

}  // namespace ecgcmr::nn
