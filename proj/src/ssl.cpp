#include "ecgcmr/ssl.hpp"

#include <numeric>

#include "ecgcmr/error.hpp"
#include "ecgcmr/log.hpp"
#include "ecgcmr/random.hpp"
#include "ecgcmr/schedule.hpp"

namespace ecgcmr::ssl {

using nlohmann::json;

void SslConfig::validate() const {
  la.validate();
  sa.validate();
  if (la.in_channels != sa.in_channels) throw ConfigError("SSL: both views need the same frame count");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("SSL: mask ratio must lie in (0, 1)");
  if (!(tau > 0.0)) throw ConfigError("SSL: temperature must be positive");
  if (share_encoders && (la.image_size != sa.image_size || la.dims != sa.dims || la.depths != sa.depths)) {
    throw ConfigError("SSL: shared encoders need identical view geometry");
  }
}

json to_json(const nn::SwinStyleConfig& c) {
  return {{"image_size", c.image_size}, {"in_channels", c.in_channels}, {"patch_size", c.patch_size},
          {"window_size", c.window_size}, {"depths", c.depths},         {"heads", c.heads},
          {"dims", c.dims},               {"mlp_ratio", c.mlp_ratio}};
}

nn::SwinStyleConfig swin_from_json(const json& j) {
  nn::SwinStyleConfig c;
  c.image_size = j.at("image_size");
  c.in_channels = j.at("in_channels");
  c.patch_size = j.at("patch_size");
  c.window_size = j.at("window_size");
  c.depths = j.at("depths").get<std::vector<int>>();
  c.heads = j.at("heads").get<std::vector<int>>();
  c.dims = j.at("dims").get<std::vector<int>>();
  c.mlp_ratio = j.at("mlp_ratio");
  return c;
}

json to_json(const SslConfig& c) {
  return {{"la", to_json(c.la)},         {"sa", to_json(c.sa)},
          {"mask_ratio", c.mask_ratio},  {"tau", c.tau},
          {"lambda", c.lambda},          {"proj_dim", c.proj_dim},
          {"decoder_hidden", c.decoder_hidden}, {"share_encoders", c.share_encoders}};
}

SslConfig ssl_from_json(const json& j) {
  SslConfig c;
  c.la = swin_from_json(j.at("la"));
  c.sa = swin_from_json(j.at("sa"));
  c.mask_ratio = j.at("mask_ratio");
  c.tau = j.at("tau");
  c.lambda = j.at("lambda");
  c.proj_dim = j.at("proj_dim");
  c.decoder_hidden = j.at("decoder_hidden");
  c.share_encoders = j.at("share_encoders");
  return c;
}

SslModelImpl::SslModelImpl(SslConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  enc_la_ = register_module("enc_la", nn::SwinEncoder(cfg_.la));
  enc_sa_ = cfg_.share_encoders ? enc_la_ : register_module("enc_sa", nn::SwinEncoder(cfg_.sa));
  dec_la_ = register_module("dec_la", nn::SslDecoder(cfg_.la.dims.back(), cfg_.la.total_units(),
                                                     cfg_.la.unit_pixels(), cfg_.decoder_hidden));
  dec_sa_ = register_module("dec_sa", nn::SslDecoder(cfg_.sa.dims.back(), cfg_.sa.total_units(),
                                                     cfg_.sa.unit_pixels(), cfg_.decoder_hidden));
  proj_la_ = register_module("proj_la", torch::nn::Linear(cfg_.la.dims.back(), cfg_.proj_dim));
  proj_sa_ = register_module("proj_sa", torch::nn::Linear(cfg_.sa.dims.back(), cfg_.proj_dim));
}

torch::Tensor masked_mse(const torch::Tensor& prediction, const torch::Tensor& target) {
  if (prediction.sizes() != target.sizes()) throw ConfigError("reconstruction and target differ in shape");
  if (prediction.numel() == 0) return torch::zeros({}, prediction.options());
  return (prediction - target).pow(2).mean();
}

torch::Tensor reconstruct_masked(const nn::EncoderOutput& encoded, const torch::Tensor& masked,
                                 nn::SslDecoder& decoder) {
  if (masked.size(0) != encoded.tokens.size(0)) throw ConfigError("mask plan and embeddings disagree on batch size");
  return decoder(nn::pool_tokens(encoded), masked);
}

SslLoss ssl_objective(const torch::Tensor& recon_la, const torch::Tensor& recon_sa, const torch::Tensor& emb_la,
                      const torch::Tensor& emb_sa, double tau, double lambda) {
  auto [rows, cols] = nn::contrastive_directions(emb_la, emb_sa, tau);
  SslLoss l;
  l.recon_la = recon_la;
  l.recon_sa = recon_sa;
  l.contrastive = rows + cols;
  l.total = recon_la + recon_sa + lambda * l.contrastive;
  return l;
}

namespace {

std::pair<torch::Tensor, torch::Tensor> view_terms(SslModel& model, View view, const torch::Tensor& x,
                                                   const std::vector<nn::MaskPlan>& plans) {
  auto& enc = model->encoder(view);
  const auto& cfg = enc->config();
  auto encoded = enc->forward_masked(x, nn::visibility(plans));
  auto masked = nn::masked_indices(plans);
  torch::Tensor recon;
  if (masked.size(1) == 0) {
    recon = torch::zeros({}, x.options());
  } else {
    auto pred = reconstruct_masked(encoded, masked, model->decoder(view));
    auto target = torch::gather(nn::unit_patches(x, cfg.mask_unit()), 1,
                                masked.unsqueeze(-1).expand({-1, -1, cfg.unit_pixels()}));
    recon = masked_mse(pred, target);
  }
  auto emb = nn::l2_normalize(model->projection(view)(nn::pool_tokens(encoded)));
  return {recon, emb};
}

}  // namespace

SslLoss ssl_loss(SslModel& model, const torch::Tensor& la, const torch::Tensor& sa,
                 const std::vector<nn::MaskPlan>& plans_la, const std::vector<nn::MaskPlan>& plans_sa) {
  if (la.size(0) != sa.size(0)) throw ConfigError("ssl_loss: long- and short-axis batches are not paired");
  auto [recon_la, emb_la] = view_terms(model, View::long_axis, la, plans_la);
  auto [recon_sa, emb_sa] = view_terms(model, View::short_axis, sa, plans_sa);
  return ssl_objective(recon_la, recon_sa, emb_la, emb_sa, model->config().tau, model->config().lambda);
}

torch::Tensor pooled_features(SslModel& model, View view, const torch::Tensor& clips) {
  return nn::pool_tokens(model->encoder(view)->forward_masked(clips, {}));
}

json to_json(const std::vector<EpochRecord>& curve) {
  json j = json::array();
  for (const auto& e : curve) {
    j.push_back({{"epoch", e.epoch},
                 {"lr", e.lr},
                 {"train_loss", e.train_loss},
                 {"train_recon", e.train_recon},
                 {"train_contrastive", e.train_contrastive},
                 {"val_loss", e.val_loss}});
  }
  return j;
}

torch::Tensor clip_batch(const SampleRefs& samples, const std::vector<std::size_t>& idx, View view,
                         cmr::Mode mode, int epoch, std::uint64_t seed, const cmr::AugmentPolicy& policy,
                         int out_size) {
  std::vector<torch::Tensor> clips;
  clips.reserve(idx.size());
  for (auto i : idx) {
    const auto* s = samples[i];
    const auto& clip = view == View::long_axis ? s->cmr_la : s->cmr_sa;
    const auto sub = derive_seed(augment_seed(seed, epoch, s->id), view == View::long_axis ? 1 : 2);
    clips.push_back(clip_to_tensor(cmr::prepare_for_model(clip, mode, sub, policy, out_size)));
  }
  return torch::stack(clips);
}

namespace {

std::vector<nn::MaskPlan> plans_for(const SampleRefs& samples, const std::vector<std::size_t>& idx, int units,
                                    double ratio, std::uint64_t seed, int epoch, int view_tag) {
  std::vector<nn::MaskPlan> plans;
  for (auto i : idx) {
    const auto s = derive_seed(augment_seed(derive_seed(seed, "mask"), epoch, samples[i]->id),
                               static_cast<std::uint64_t>(view_tag));
    plans.push_back(nn::make_mask_plan(units, ratio, s));
  }
  return plans;
}

}  // namespace

SslResult train_ssl(const SampleRefs& train, const SampleRefs& val, const SslConfig& cfg, const TrainConfig& tc) {
  if (train.empty() || val.empty()) throw MissingPrerequisite("SSL training needs non-empty train and val splits");
  if (tc.epochs < 1) throw ConfigError("SSL: epochs must be >= 1");
  torch::manual_seed(derive_seed(tc.seed, "ssl_init"));
  SslResult r;
  r.model = SslModel(cfg);
  r.optimizer = std::make_shared<torch::optim::AdamW>(
      r.model->parameters(), torch::optim::AdamWOptions(tc.lr).weight_decay(tc.weight_decay));
  const LrSchedule sched{LrSchedule::Kind::warmup_constant, tc.lr, tc.warmup_fraction * tc.epochs,
                         static_cast<double>(tc.epochs)};

  const auto la_units = cfg.la.total_units(), sa_units = cfg.sa.total_units();
  const cmr::Mode train_mode = tc.augment ? cmr::Mode::train : cmr::Mode::eval;

  std::vector<std::size_t> all_val(val.size());
  std::iota(all_val.begin(), all_val.end(), 0);
  const auto val_la = clip_batch(val, all_val, View::long_axis, cmr::Mode::eval, 0, tc.seed, tc.policy, cfg.la.image_size);
  const auto val_sa = clip_batch(val, all_val, View::short_axis, cmr::Mode::eval, 0, tc.seed, tc.policy, cfg.sa.image_size);
  const auto val_plans_la = plans_for(val, all_val, la_units, cfg.mask_ratio, tc.seed, -1, 1);
  const auto val_plans_sa = plans_for(val, all_val, sa_units, cfg.mask_ratio, tc.seed, -1, 2);

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    r.model->train();
    const auto batches = epoch_batches(train.size(), static_cast<std::size_t>(tc.batch_size), tc.seed, epoch);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = sched.at(epoch);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& idx = batches[bi];
      const double lr = sched.at(epoch + static_cast<double>(bi) / static_cast<double>(batches.size()));
      set_learning_rate(*r.optimizer, lr);
      auto la = clip_batch(train, idx, View::long_axis, train_mode, epoch, tc.seed, tc.policy, cfg.la.image_size);
      auto sa = clip_batch(train, idx, View::short_axis, train_mode, epoch, tc.seed, tc.policy, cfg.sa.image_size);
      auto loss = ssl_loss(r.model, la, sa, plans_for(train, idx, la_units, cfg.mask_ratio, tc.seed, epoch, 1),
                           plans_for(train, idx, sa_units, cfg.mask_ratio, tc.seed, epoch, 2));
      require_finite(loss.total, "SSL loss");
      r.optimizer->zero_grad();
      loss.total.backward();
      r.optimizer->step();
      const double w = static_cast<double>(idx.size()) / static_cast<double>(train.size());
      rec.train_loss += w * loss.total.item<double>();
      rec.train_recon += w * (loss.recon_la + loss.recon_sa).item<double>();
      rec.train_contrastive += w * loss.contrastive.item<double>();
    }
    r.model->eval();
    {
      torch::NoGradGuard ng;
      double total = 0.0;
      for (std::size_t i = 0; i < val.size(); i += 64) {
        const auto end = std::min<std::size_t>(val.size(), i + 64);
        using torch::indexing::Slice;
        std::vector<nn::MaskPlan> pla(val_plans_la.begin() + i, val_plans_la.begin() + end);
        std::vector<nn::MaskPlan> psa(val_plans_sa.begin() + i, val_plans_sa.begin() + end);
        auto l = ssl_loss(r.model, val_la.index({Slice(i, end)}), val_sa.index({Slice(i, end)}), pla, psa);
        total += l.total.item<double>() * static_cast<double>(end - i);
      }
      rec.val_loss = total / static_cast<double>(val.size());
    }
    log::info("ssl epoch ", rec.epoch, " lr ", rec.lr, " train ", rec.train_loss, " recon ", rec.train_recon,
              " val ", rec.val_loss);
    r.curve.push_back(rec);
  }
  r.epoch = tc.epochs;
  r.val_loss = r.curve.back().val_loss;
  return r;
}

}  // namespace ecgcmr::ssl
