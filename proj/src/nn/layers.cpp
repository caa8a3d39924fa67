#include "ecgcmr/nn/layers.hpp"

#include <cmath>

#include "ecgcmr/error.hpp"

namespace ecgcmr::nn {

namespace F = torch::nn::functional;

AttentionImpl::AttentionImpl(int64_t dim, int64_t heads, int64_t context_dim) : heads_(heads) {
  if (heads < 1 || dim % heads != 0) throw ConfigError("attention width must be divisible by the head count");
  head_dim_ = dim / heads;
  const int64_t ctx = context_dim > 0 ? context_dim : dim;
  q_ = register_module("q", torch::nn::Linear(dim, dim));
  k_ = register_module("k", torch::nn::Linear(ctx, dim));
  v_ = register_module("v", torch::nn::Linear(ctx, dim));
  out_ = register_module("out", torch::nn::Linear(dim, dim));
}

torch::Tensor AttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& context, const torch::Tensor& bias) {
  const auto& ctx = context.defined() ? context : x;
  const int64_t b = x.size(0), n = x.size(1), m = ctx.size(1);
  auto split = [&](const torch::Tensor& t, int64_t len) {
    return t.view({b, len, heads_, head_dim_}).transpose(1, 2);
  };
  auto q = split(q_(x), n);
  auto k = split(k_(ctx), m);
  auto v = split(v_(ctx), m);
  auto logits = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim_));
  if (bias.defined()) logits = logits + bias;
  auto y = torch::matmul(torch::softmax(logits, -1), v);
  return out_(y.transpose(1, 2).reshape({b, n, heads_ * head_dim_}));
}

MlpImpl::MlpImpl(int64_t dim, int64_t hidden, int64_t out) {
  fc1_ = register_module("fc1", torch::nn::Linear(dim, hidden));
  fc2_ = register_module("fc2", torch::nn::Linear(hidden, out > 0 ? out : dim));
}

torch::Tensor MlpImpl::forward(const torch::Tensor& x) { return fc2_(F::gelu(fc1_(x))); }

TransformerBlockImpl::TransformerBlockImpl(int64_t dim, int64_t heads, double mlp_ratio) {
  ln1_ = register_module("ln1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  attn_ = register_module("attn", Attention(dim, heads));
  ln2_ = register_module("ln2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  mlp_ = register_module("mlp", Mlp(dim, static_cast<int64_t>(std::lround(dim * mlp_ratio))));
}

torch::Tensor TransformerBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& bias) {
  auto h = x + attn_->forward(ln1_(x), torch::Tensor(), bias);
  return h + mlp_(ln2_(h));
}

torch::Tensor sinusoidal_embedding(const torch::Tensor& positions, int64_t dim) {
  const int64_t half = dim / 2;
  auto opts = torch::TensorOptions().dtype(positions.scalar_type() == torch::kFloat64 ? torch::kFloat64 : torch::kFloat32);
  auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, opts) / static_cast<double>(half));
  auto args = positions.to(opts.dtype_opt()->toScalarType()).unsqueeze(1) * freqs.unsqueeze(0);
  auto emb = torch::cat({torch::sin(args), torch::cos(args)}, 1);
  if (dim % 2 == 1) emb = F::pad(emb, F::PadFuncOptions({0, 1}));
  return emb;
}

torch::Tensor l2_normalize(const torch::Tensor& x) {
  return x / x.norm(2, -1, true).clamp_min(1e-12);
}

std::pair<torch::Tensor, torch::Tensor> contrastive_directions(const torch::Tensor& a, const torch::Tensor& b,
                                                               double tau) {
  if (!(tau > 0.0)) throw ConfigError("contrastive temperature must be positive");
  if (a.dim() != 2 || a.sizes() != b.sizes()) throw ConfigError("contrastive inputs must be N x D of equal shape");
  const int64_t n = a.size(0);
  if (n <= 1) {
    auto zero = (a.sum() + b.sum()) * 0.0;
    return {zero, zero};
  }
  auto logits = torch::matmul(a, b.t()) / tau;
  auto target = torch::arange(n, torch::TensorOptions().dtype(torch::kLong).device(a.device()));
  return {F::cross_entropy(logits, target), F::cross_entropy(logits.t(), target)};
}

torch::Tensor info_nce(const torch::Tensor& a, const torch::Tensor& b, double tau) {
  auto [rows, cols] = contrastive_directions(a, b, tau);
  return 0.5 * (rows + cols);
}

void init_weights(torch::nn::Module& module, double stddev) {
  torch::NoGradGuard guard;
  for (auto& m : module.modules(/*include_self=*/false)) {
    if (auto* lin = m->as<torch::nn::Linear>()) {
      lin->weight.normal_(0.0, stddev).clamp_(-2.0 * stddev, 2.0 * stddev);
      if (lin->bias.defined()) lin->bias.zero_();
    }
  }
}

}  // namespace ecgcmr::nn
