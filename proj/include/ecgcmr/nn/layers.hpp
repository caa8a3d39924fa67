#pragma once

#include <torch/torch.h>

namespace ecgcmr::nn {

/// Multi-head scaled dot-product attention. Without a context it is
/// self-attention; `bias` is added to the logits and must broadcast to
/// [B, heads, N, M].
class AttentionImpl : public torch::nn::Module {
 public:
  AttentionImpl(int64_t dim, int64_t heads, int64_t context_dim = 0);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& context = {}, const torch::Tensor& bias = {});

  int64_t heads() const { return heads_; }

 private:
  int64_t heads_;
  int64_t head_dim_;
  torch::nn::Linear q_{nullptr}, k_{nullptr}, v_{nullptr}, out_{nullptr};
};
TORCH_MODULE(Attention);

class MlpImpl : public torch::nn::Module {
 public:
  MlpImpl(int64_t dim, int64_t hidden, int64_t out = 0);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(Mlp);

/// Pre-norm transformer block.
class TransformerBlockImpl : public torch::nn::Module {
 public:
  TransformerBlockImpl(int64_t dim, int64_t heads, double mlp_ratio);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& bias = {});

 private:
  torch::nn::LayerNorm ln1_{nullptr}, ln2_{nullptr};
  Attention attn_{nullptr};
  Mlp mlp_{nullptr};
};
TORCH_MODULE(TransformerBlock);

/// Sinusoidal embedding of (possibly fractional) positions/timesteps, [N] -> [N, dim].
torch::Tensor sinusoidal_embedding(const torch::Tensor& positions, int64_t dim);

/// Rows scaled to unit L2 norm.
torch::Tensor l2_normalize(const torch::Tensor& x);

/// Softmax cross-entropy of similarity logits a.b^T / tau against diagonal
/// targets, rows and columns. Returns the two directions; N = 1 gives zeros.
std::pair<torch::Tensor, torch::Tensor> contrastive_directions(const torch::Tensor& a, const torch::Tensor& b,
                                                               double tau);

/// Mean of the two CE directions.
torch::Tensor info_nce(const torch::Tensor& a, const torch::Tensor& b, double tau);

/// Truncated-normal style init used for embeddings and linear layers.
void init_weights(torch::nn::Module& module, double stddev = 0.02);

}  // namespace ecgcmr::nn
