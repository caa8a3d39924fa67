#include "ecgcmr/nn/swin.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ecgcmr/error.hpp"
#include "ecgcmr/random.hpp"

namespace ecgcmr::nn {

namespace F = torch::nn::functional;

namespace {
constexpr double kBlocked = -1e9;
}

void SwinStyleConfig::validate() const {
  if (depths.empty() || depths.size() != heads.size() || depths.size() != dims.size()) {
    throw ConfigError("swin: depths, heads and dims need one entry per stage");
  }
  if (patch_size < 1 || window_size < 1 || in_channels < 1) throw ConfigError("swin: sizes must be positive");
  if (image_size % mask_unit() != 0) {
    throw ConfigError("swin: image size must be a multiple of patch_size * 2^(stages-1)");
  }
  for (std::size_t s = 0; s < dims.size(); ++s) {
    if (depths[s] < 1 || heads[s] < 1 || dims[s] % heads[s] != 0) {
      throw ConfigError("swin: every stage needs depth >= 1 and width divisible by heads");
    }
  }
}

void MaskPlan::validate() const {
  std::vector<int> all(masked);
  all.insert(all.end(), visible.begin(), visible.end());
  std::sort(all.begin(), all.end());
  if (static_cast<int>(all.size()) != total_patches) throw ConfigError("mask plan does not cover every patch");
  for (int i = 0; i < total_patches; ++i) {
    if (all[static_cast<std::size_t>(i)] != i) throw ConfigError("mask plan is not a partition of the patches");
  }
}

MaskPlan make_mask_plan(int total_patches, double mask_ratio, std::uint64_t seed) {
  if (total_patches < 1) throw ConfigError("mask plan needs at least one patch");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("mask ratio must lie in (0, 1)");
  const auto n_masked = static_cast<int>(std::lround(mask_ratio * total_patches));
  if (n_masked == 0 || n_masked == total_patches) {
    throw ConfigError("mask ratio leaves no masked or no visible patch");
  }
  std::vector<int> perm(static_cast<std::size_t>(total_patches));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  rng.shuffle(perm);
  MaskPlan p;
  p.total_patches = total_patches;
  p.mask_ratio = mask_ratio;
  p.masked.assign(perm.begin(), perm.begin() + n_masked);
  p.visible.assign(perm.begin() + n_masked, perm.end());
  std::sort(p.masked.begin(), p.masked.end());
  std::sort(p.visible.begin(), p.visible.end());
  return p;
}

MaskPlan full_plan(int total_patches) {
  MaskPlan p;
  p.total_patches = total_patches;
  p.visible.resize(static_cast<std::size_t>(total_patches));
  std::iota(p.visible.begin(), p.visible.end(), 0);
  return p;
}

std::vector<std::vector<int>> visible_groups(const MaskPlan& plan, int unit_grid, int window_size) {
  const int w = std::max(1, std::min(window_size, unit_grid));
  const int per_side = (unit_grid + w - 1) / w;
  std::vector<std::vector<int>> groups(static_cast<std::size_t>(per_side * per_side));
  for (int u : plan.visible) {
    const int r = u / unit_grid, c = u % unit_grid;
    groups[static_cast<std::size_t>((r / w) * per_side + c / w)].push_back(u);
  }
  return groups;
}

torch::Tensor visibility(const std::vector<MaskPlan>& plans) {
  if (plans.empty()) throw ConfigError("no mask plans");
  const int64_t u = plans.front().total_patches;
  auto vis = torch::zeros({static_cast<int64_t>(plans.size()), u}, torch::kBool);
  auto acc = vis.accessor<bool, 2>();
  for (std::size_t b = 0; b < plans.size(); ++b) {
    if (plans[b].total_patches != u) throw ConfigError("mask plans disagree on the patch count");
    for (int i : plans[b].visible) acc[static_cast<int64_t>(b)][i] = true;
  }
  return vis;
}

torch::Tensor masked_indices(const std::vector<MaskPlan>& plans) {
  if (plans.empty()) throw ConfigError("no mask plans");
  const auto m = static_cast<int64_t>(plans.front().masked.size());
  auto idx = torch::empty({static_cast<int64_t>(plans.size()), m}, torch::kLong);
  auto acc = idx.accessor<int64_t, 2>();
  for (std::size_t b = 0; b < plans.size(); ++b) {
    if (static_cast<int64_t>(plans[b].masked.size()) != m) throw ConfigError("mask plans disagree on the masked count");
    for (int64_t i = 0; i < m; ++i) acc[static_cast<int64_t>(b)][i] = plans[b].masked[static_cast<std::size_t>(i)];
  }
  return idx;
}

namespace {

torch::Tensor partition(const torch::Tensor& x, int w) {
  // [B, G, G, C] -> [B * nW, w * w, C]
  const int64_t b = x.size(0), g = x.size(1), c = x.size(3);
  return x.view({b, g / w, w, g / w, w, c}).permute({0, 1, 3, 2, 4, 5}).reshape({-1, w * w, c});
}

torch::Tensor unpartition(const torch::Tensor& win, int64_t b, int64_t g, int w) {
  const int64_t c = win.size(2);
  return win.view({b, g / w, g / w, w, w, c}).permute({0, 1, 3, 2, 4, 5}).reshape({b, g, g, c});
}

torch::Tensor shift_region_mask(int64_t g, int w, int s, const torch::TensorOptions& opts) {
  auto labels = torch::zeros({1, g, g, 1}, torch::kFloat32);
  const int64_t bounds[4] = {0, g - w, g - s, g};
  int cnt = 0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      labels.index_put_({0, torch::indexing::Slice(bounds[i], bounds[i + 1]),
                         torch::indexing::Slice(bounds[j], bounds[j + 1]), 0},
                        static_cast<float>(cnt++));
    }
  }
  auto mw = partition(labels, w).squeeze(-1);  // [nW, w*w]
  auto diff = mw.unsqueeze(1) - mw.unsqueeze(2);
  return torch::where(diff != 0, torch::full({}, kBlocked), torch::zeros({})).to(opts);
}

}  // namespace

torch::Tensor window_attention(Attention& attn, const torch::Tensor& x, const torch::Tensor& visible, int window,
                               bool shift) {
  const int64_t b = x.size(0), g = x.size(1), c = x.size(3);
  const int w = static_cast<int>(std::min<int64_t>(window, g));
  const int64_t gp = (g + w - 1) / w * w;
  torch::Tensor vis = visible;
  torch::Tensor h = x;
  if (gp != g) {
    h = F::pad(h, F::PadFuncOptions({0, 0, 0, gp - g, 0, gp - g}));
    if (!vis.defined()) vis = torch::ones({b, g, g}, torch::kBool);
    vis = F::pad(vis.to(torch::kFloat32), F::PadFuncOptions({0, gp - g, 0, gp - g})).to(torch::kBool);
  }
  const int s = (shift && gp > w) ? w / 2 : 0;
  if (s > 0) {
    h = torch::roll(h, {-s, -s}, {1, 2});
    if (vis.defined()) vis = torch::roll(vis, {-s, -s}, {1, 2});
  }
  auto win = partition(h, w);
  const int64_t nw = (gp / w) * (gp / w);
  torch::Tensor bias;
  if (vis.defined()) {
    auto vw = partition(vis.unsqueeze(-1).to(x.scalar_type()), w).squeeze(-1);  // [B*nW, w*w]
    bias = ((1.0 - vw) * kBlocked).view({b * nw, 1, 1, w * w});
  }
  if (s > 0) {
    auto region = shift_region_mask(gp, w, s, x.options()).unsqueeze(0).expand({b, nw, w * w, w * w});
    region = region.reshape({b * nw, 1, w * w, w * w});
    bias = bias.defined() ? bias + region : region;
  }
  auto out = unpartition(attn->forward(win, torch::Tensor(), bias), b, gp, w);
  if (s > 0) out = torch::roll(out, {s, s}, {1, 2});
  if (gp != g) out = out.index({torch::indexing::Slice(), torch::indexing::Slice(0, g), torch::indexing::Slice(0, g)});
  return out.contiguous().view({b, g, g, c});
}

WindowBlockImpl::WindowBlockImpl(int64_t dim, int64_t heads, int window, bool shift, double mlp_ratio)
    : window_(window), shift_(shift) {
  ln1_ = register_module("ln1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  attn_ = register_module("attn", Attention(dim, heads));
  ln2_ = register_module("ln2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  mlp_ = register_module("mlp", Mlp(dim, static_cast<int64_t>(std::lround(dim * mlp_ratio))));
}

torch::Tensor WindowBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& visible) {
  auto h = x + window_attention(attn_, ln1_(x), visible, window_, shift_);
  h = h + mlp_(ln2_(h));
  if (visible.defined()) h = h * visible.unsqueeze(-1).to(h.scalar_type());
  return h;
}

PatchMergingImpl::PatchMergingImpl(int64_t dim, int64_t out_dim) {
  norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({4 * dim})));
  reduce_ = register_module("reduce", torch::nn::Linear(torch::nn::LinearOptions(4 * dim, out_dim).bias(false)));
}

torch::Tensor PatchMergingImpl::forward(const torch::Tensor& x) {
  using torch::indexing::Slice;
  auto x0 = x.index({Slice(), Slice(0, torch::indexing::None, 2), Slice(0, torch::indexing::None, 2)});
  auto x1 = x.index({Slice(), Slice(1, torch::indexing::None, 2), Slice(0, torch::indexing::None, 2)});
  auto x2 = x.index({Slice(), Slice(0, torch::indexing::None, 2), Slice(1, torch::indexing::None, 2)});
  auto x3 = x.index({Slice(), Slice(1, torch::indexing::None, 2), Slice(1, torch::indexing::None, 2)});
  return reduce_(norm_(torch::cat({x0, x1, x2, x3}, -1)));
}

SwinEncoderImpl::SwinEncoderImpl(SwinStyleConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int g0 = cfg_.grid(0);
  patch_embed_ = register_module(
      "patch_embed",
      torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg_.in_channels, cfg_.dims[0], cfg_.patch_size).stride(cfg_.patch_size)));
  pos_embed_ = register_parameter("pos_embed", torch::randn({1, g0, g0, cfg_.dims[0]}) * 0.02);
  for (int s = 0; s < cfg_.stages(); ++s) {
    std::vector<WindowBlock> stage;
    for (int d = 0; d < cfg_.depths[static_cast<std::size_t>(s)]; ++d) {
      auto blk = WindowBlock(cfg_.dims[static_cast<std::size_t>(s)], cfg_.heads[static_cast<std::size_t>(s)],
                             cfg_.window_size, d % 2 == 1, cfg_.mlp_ratio);
      stage.push_back(register_module("stage" + std::to_string(s) + "_block" + std::to_string(d), blk));
    }
    blocks_.push_back(std::move(stage));
    if (s + 1 < cfg_.stages()) {
      merges_.push_back(register_module("merge" + std::to_string(s),
                                        PatchMerging(cfg_.dims[static_cast<std::size_t>(s)],
                                                     cfg_.dims[static_cast<std::size_t>(s) + 1])));
    }
  }
  norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg_.dims.back()})));
  init_weights(*this);
}

torch::Tensor SwinEncoderImpl::forward(const torch::Tensor& x) { return forward_masked(x, {}).tokens; }

EncoderOutput SwinEncoderImpl::forward_masked(const torch::Tensor& x, const torch::Tensor& visible_units) {
  if (x.dim() != 4 || x.size(1) != cfg_.in_channels || x.size(2) != cfg_.image_size || x.size(3) != cfg_.image_size) {
    throw ConfigError("swin encoder: input must be [B, " + std::to_string(cfg_.in_channels) + ", " +
                      std::to_string(cfg_.image_size) + ", " + std::to_string(cfg_.image_size) + "]");
  }
  const int64_t b = x.size(0);
  const int ug = cfg_.unit_grid();
  auto h = patch_embed_(x).permute({0, 2, 3, 1}) + pos_embed_;
  torch::Tensor unit_vis;
  if (visible_units.defined()) {
    if (visible_units.size(0) != b || visible_units.size(1) != cfg_.total_units()) {
      throw ConfigError("swin encoder: visibility does not match the unit grid");
    }
    unit_vis = visible_units.view({b, ug, ug});
  }
  for (int s = 0; s < cfg_.stages(); ++s) {
    torch::Tensor vis;
    if (unit_vis.defined()) {
      const int64_t f = int64_t{1} << (cfg_.stages() - 1 - s);
      vis = unit_vis.repeat_interleave(f, 1).repeat_interleave(f, 2);
      h = h * vis.unsqueeze(-1).to(h.scalar_type());
    }
    for (auto& blk : blocks_[static_cast<std::size_t>(s)]) h = blk(h, vis);
    if (s + 1 < cfg_.stages()) h = merges_[static_cast<std::size_t>(s)](h);
  }
  h = norm_(h).reshape({b, -1, cfg_.dims.back()});
  EncoderOutput out;
  if (unit_vis.defined()) {
    out.visible = visible_units;
    h = h * visible_units.unsqueeze(-1).to(h.scalar_type());
  }
  out.tokens = h;
  return out;
}

torch::Tensor encode_visible(SwinEncoder& encoder, const torch::Tensor& x, const std::vector<MaskPlan>& plans) {
  auto out = encoder->forward_masked(x, visibility(plans));
  const auto nv = static_cast<int64_t>(plans.front().visible.size());
  auto idx = torch::empty({static_cast<int64_t>(plans.size()), nv}, torch::kLong);
  auto acc = idx.accessor<int64_t, 2>();
  for (std::size_t b = 0; b < plans.size(); ++b) {
    if (static_cast<int64_t>(plans[b].visible.size()) != nv) throw ConfigError("mask plans disagree on the visible count");
    for (int64_t i = 0; i < nv; ++i) acc[static_cast<int64_t>(b)][i] = plans[b].visible[static_cast<std::size_t>(i)];
  }
  return torch::gather(out.tokens, 1, idx.unsqueeze(-1).expand({-1, -1, out.tokens.size(2)}));
}

torch::Tensor pool_tokens(const EncoderOutput& out) {
  if (!out.visible.defined()) return out.tokens.mean(1);
  auto w = out.visible.to(out.tokens.scalar_type()).unsqueeze(-1);
  return (out.tokens * w).sum(1) / w.sum(1).clamp_min(1.0);
}

torch::Tensor unit_patches(const torch::Tensor& x, int unit) {
  const int64_t b = x.size(0), c = x.size(1), g = x.size(2) / unit;
  return x.view({b, c, g, unit, g, unit}).permute({0, 2, 4, 1, 3, 5}).reshape({b, g * g, c * unit * unit});
}

SslDecoderImpl::SslDecoderImpl(int64_t dim, int64_t units, int64_t out_pixels, int64_t hidden) {
  pos_ = register_parameter("pos", torch::randn({units, dim}) * 0.02);
  mlp_ = register_module("mlp", Mlp(2 * dim, hidden, out_pixels));
  init_weights(*this);
}

torch::Tensor SslDecoderImpl::forward(const torch::Tensor& context, const torch::Tensor& masked) {
  const int64_t b = masked.size(0), m = masked.size(1), d = pos_.size(1);
  auto pos = pos_.index_select(0, masked.reshape({-1})).view({b, m, d});
  return mlp_(torch::cat({context.unsqueeze(1).expand({b, m, d}), pos}, -1));
}

}  // namespace ecgcmr::nn
