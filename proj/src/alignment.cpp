#include "ecgcmr/alignment.hpp"

#include <numeric>

#include "ecgcmr/error.hpp"
#include "ecgcmr/log.hpp"
#include "ecgcmr/module_io.hpp"
#include "ecgcmr/random.hpp"
#include "ecgcmr/schedule.hpp"

namespace ecgcmr::align {

using nlohmann::json;

json to_json(const nn::EcgVitConfig& c) {
  return {{"leads", c.leads}, {"length", c.length}, {"patch_height", c.patch_height}, {"patch_width", c.patch_width},
          {"dim", c.dim},     {"depth", c.depth},   {"heads", c.heads},               {"mlp_ratio", c.mlp_ratio}};
}

nn::EcgVitConfig vit_from_json(const json& j) {
  nn::EcgVitConfig c;
  c.leads = j.at("leads");
  c.length = j.at("length");
  c.patch_height = j.at("patch_height");
  c.patch_width = j.at("patch_width");
  c.dim = j.at("dim");
  c.depth = j.at("depth");
  c.heads = j.at("heads");
  c.mlp_ratio = j.at("mlp_ratio");
  return c;
}

json to_json(const AlignConfig& c) { return {{"vit", to_json(c.vit)}, {"proj_dim", c.proj_dim}, {"tau", c.tau}}; }

AlignConfig align_from_json(const json& j) {
  AlignConfig c;
  c.vit = vit_from_json(j.at("vit"));
  c.proj_dim = j.at("proj_dim");
  c.tau = j.at("tau");
  return c;
}

void EmbeddingBatch::validate() const {
  if (!(tau > 0.0)) throw ConfigError("embedding batch temperature must be positive");
  if (ecg.dim() != 2 || ecg.sizes() != cmr_la.sizes() || ecg.sizes() != cmr_sa.sizes()) {
    throw ConfigError("embedding batch modalities differ in shape");
  }
}

AlignLoss align_loss(const EmbeddingBatch& batch) {
  batch.validate();
  AlignLoss l;
  l.la = nn::info_nce(batch.ecg, batch.cmr_la, batch.tau);
  l.sa = nn::info_nce(batch.ecg, batch.cmr_sa, batch.tau);
  l.total = l.la + l.sa;
  return l;
}

AlignModelImpl::AlignModelImpl(AlignConfig cfg, int64_t cmr_dim_la, int64_t cmr_dim_sa) : cfg_(cfg) {
  vit_ = register_module("vit", nn::EcgVit(cfg_.vit));
  ecg_proj_ = register_module("ecg_proj", torch::nn::Linear(cfg_.vit.dim, cfg_.proj_dim));
  la_proj_ = register_module("la_proj", torch::nn::Linear(cmr_dim_la, cfg_.proj_dim));
  sa_proj_ = register_module("sa_proj", torch::nn::Linear(cmr_dim_sa, cfg_.proj_dim));
  la_center_ = register_buffer("la_center", torch::zeros({cmr_dim_la}));
  la_scale_ = register_buffer("la_scale", torch::ones({cmr_dim_la}));
  sa_center_ = register_buffer("sa_center", torch::zeros({cmr_dim_sa}));
  sa_scale_ = register_buffer("sa_scale", torch::ones({cmr_dim_sa}));
}

void AlignModelImpl::set_feature_stats(View view, const torch::Tensor& reference) {
  torch::NoGradGuard ng;
  auto& center = view == View::long_axis ? la_center_ : sa_center_;
  auto& scale = view == View::long_axis ? la_scale_ : sa_scale_;
  center.copy_(reference.mean(0));
  scale.copy_(reference.size(0) > 1 ? reference.std(0).clamp_min(1e-6) : torch::ones_like(scale));
}

torch::Tensor AlignModelImpl::embed_ecg(const torch::Tensor& ecg) {
  return nn::l2_normalize(ecg_proj_(vit_(ecg).cls));
}

torch::Tensor AlignModelImpl::embed_cmr(View view, const torch::Tensor& pooled) {
  if (view == View::long_axis) return nn::l2_normalize(la_proj_((pooled - la_center_) / la_scale_));
  return nn::l2_normalize(sa_proj_((pooled - sa_center_) / sa_scale_));
}

json to_json(const std::vector<EpochRecord>& curve) {
  json j = json::array();
  for (const auto& e : curve) {
    j.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
  }
  return j;
}

torch::Tensor ecg_batch(const SampleRefs& samples, const std::vector<std::size_t>& idx, ecg::Mode mode, int epoch,
                        std::uint64_t seed, const ecg::AugmentPolicy& policy) {
  std::vector<torch::Tensor> out;
  out.reserve(idx.size());
  for (auto i : idx) {
    const auto* s = samples[i];
    out.push_back(ecg_to_tensor(ecg::prepare_for_model(s->ecg, mode, augment_seed(seed, epoch, s->id), policy)));
  }
  return torch::stack(out);
}

std::pair<torch::Tensor, torch::Tensor> frozen_cmr_features(ssl::SslModel& cmr, const SampleRefs& samples,
                                                            int la_size, int sa_size) {
  torch::NoGradGuard ng;
  cmr->eval();
  std::vector<torch::Tensor> la, sa;
  for (std::size_t i = 0; i < samples.size(); i += 64) {
    std::vector<std::size_t> idx(std::min<std::size_t>(64, samples.size() - i));
    std::iota(idx.begin(), idx.end(), i);
    la.push_back(ssl::pooled_features(
        cmr, View::long_axis, ssl::clip_batch(samples, idx, View::long_axis, cmr::Mode::eval, 0, 0, {}, la_size)));
    sa.push_back(ssl::pooled_features(
        cmr, View::short_axis, ssl::clip_batch(samples, idx, View::short_axis, cmr::Mode::eval, 0, 0, {}, sa_size)));
  }
  return {torch::cat(la), torch::cat(sa)};
}

namespace {

double evaluate_loss(AlignModel& model, const torch::Tensor& ecg, const torch::Tensor& la, const torch::Tensor& sa,
                     double tau, int batch) {
  torch::NoGradGuard ng;
  model->eval();
  double total = 0.0;
  const int64_t n = ecg.size(0);
  for (int64_t i = 0; i < n; i += batch) {
    using torch::indexing::Slice;
    const int64_t end = std::min<int64_t>(n, i + batch);
    EmbeddingBatch b{model->embed_ecg(ecg.index({Slice(i, end)})),
                     model->embed_cmr(View::long_axis, la.index({Slice(i, end)})),
                     model->embed_cmr(View::short_axis, sa.index({Slice(i, end)})), tau};
    total += align_loss(b).total.item<double>() * static_cast<double>(end - i);
  }
  return total / static_cast<double>(n);
}

}  // namespace

AlignResult train_alignment(const SampleRefs& train, const SampleRefs& val, ssl::SslModel& cmr,
                            const AlignConfig& cfg, const TrainConfig& tc) {
  if (train.empty() || val.empty()) throw MissingPrerequisite("alignment needs non-empty train and val splits");
  for (auto& p : cmr->parameters()) p.set_requires_grad(false);
  AlignResult r;
  r.frozen_hash_before = parameters_hash(*cmr);

  const auto [train_la, train_sa] = frozen_cmr_features(cmr, train, tc.la_size, tc.sa_size);
  const auto [val_la, val_sa] = frozen_cmr_features(cmr, val, tc.la_size, tc.sa_size);
  std::vector<std::size_t> all_val(val.size());
  std::iota(all_val.begin(), all_val.end(), 0);
  const auto val_ecg = ecg_batch(val, all_val, ecg::Mode::eval, 0, tc.seed, tc.policy);

  torch::manual_seed(derive_seed(tc.seed, "align_init"));
  AlignModel model(cfg, train_la.size(1), train_sa.size(1));
  model->set_feature_stats(View::long_axis, train_la);
  model->set_feature_stats(View::short_axis, train_sa);
  torch::optim::AdamW opt(model->parameters(), torch::optim::AdamWOptions(tc.lr).weight_decay(tc.weight_decay));
  const LrSchedule sched{LrSchedule::Kind::warmup_constant, tc.lr, tc.warmup_fraction * tc.epochs,
                         static_cast<double>(tc.epochs)};
  const auto mode = tc.augment ? ecg::Mode::train : ecg::Mode::eval;
  r.best_val_loss = std::numeric_limits<double>::infinity();
  Checkpoint best;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    model->train();
    const auto batches = epoch_batches(train.size(), static_cast<std::size_t>(tc.batch_size), tc.seed, epoch);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = sched.at(epoch);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& idx = batches[bi];
      set_learning_rate(opt, sched.at(epoch + static_cast<double>(bi) / static_cast<double>(batches.size())));
      auto index = torch::tensor(std::vector<int64_t>(idx.begin(), idx.end()), torch::kLong);
      EmbeddingBatch b{model->embed_ecg(ecg_batch(train, idx, mode, epoch, tc.seed, tc.policy)),
                       model->embed_cmr(View::long_axis, train_la.index_select(0, index)),
                       model->embed_cmr(View::short_axis, train_sa.index_select(0, index)), cfg.tau};
      auto loss = align_loss(b);
      require_finite(loss.total, "alignment loss");
      opt.zero_grad();
      loss.total.backward();
      opt.step();
      rec.train_loss += loss.total.item<double>() * static_cast<double>(idx.size()) / static_cast<double>(train.size());
    }
    rec.val_loss = evaluate_loss(model, val_ecg, val_la, val_sa, cfg.tau, tc.batch_size);
    log::info("align epoch ", rec.epoch, " lr ", rec.lr, " train ", rec.train_loss, " val ", rec.val_loss);
    r.curve.push_back(rec);
    if (rec.val_loss < r.best_val_loss) {
      r.best_val_loss = rec.val_loss;
      r.best_epoch = rec.epoch;
      best = Checkpoint{};
      append_module(best, *model, "");
    }
  }
  load_module(*model, best, "");
  r.model = model;
  r.frozen_hash_after = parameters_hash(*cmr);
  if (r.frozen_hash_after != r.frozen_hash_before) throw NumericError("frozen CMR encoder changed during alignment");
  return r;
}

double retrieval_top1(AlignModel& model, ssl::SslModel& cmr, const SampleRefs& samples, View view, int gallery,
                      int la_size, int sa_size) {
  const std::size_t n = std::min<std::size_t>(samples.size(), static_cast<std::size_t>(gallery));
  if (n == 0) throw ConfigError("retrieval gallery is empty");
  SampleRefs sub(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(n));
  auto [la, sa] = frozen_cmr_features(cmr, sub, la_size, sa_size);
  torch::NoGradGuard ng;
  model->eval();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  auto e = model->embed_ecg(ecg_batch(sub, idx, ecg::Mode::eval, 0, 0, {}));
  auto c = model->embed_cmr(view, view == View::long_axis ? la : sa);
  auto hits = torch::matmul(e, c.t()).argmax(1).eq(torch::arange(static_cast<int64_t>(n)));
  return hits.to(torch::kFloat64).mean().item<double>();
}

}  // namespace ecgcmr::align
