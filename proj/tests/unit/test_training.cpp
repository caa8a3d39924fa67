#include "../support/torch_doctest.hpp"

#include <algorithm>
#include <numeric>

#include "ecgcmr/alignment.hpp"
#include "ecgcmr/cohort.hpp"
#include "ecgcmr/dataset.hpp"
#include "ecgcmr/diffusion.hpp"
#include "ecgcmr/downstream.hpp"
#include "ecgcmr/pipeline.hpp"
#include "ecgcmr/ssl.hpp"

using namespace ecgcmr;
namespace fs = std::filesystem;

namespace {

// Synthesized and preprocessed through the pipeline stages, then loaded back.
struct Cohort {
  dataset::Cohort data;
  std::vector<cohort::PairedSample>& samples = data.samples;
  SampleRefs train, val;

  Cohort(std::size_t n, std::uint64_t seed) {
    const auto root = fs::temp_directory_path() / ("ecgcmr_training_" + std::to_string(n) + "_" + std::to_string(seed));
    fs::remove_all(root);
    pipeline::Options opts;
    opts.config.set("cohort.n", static_cast<int>(n));
    opts.config.set("seed", static_cast<int>(seed));
    opts.out = root;
    pipeline::run("synth", opts);
    pipeline::run("preprocess", opts);
    data = dataset::load_cohort(root / "preprocessed" / "data");
    fs::remove_all(root);
    train = data.select(cohort::Split::train);
    val = data.select(cohort::Split::val);
  }
};

std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

Config small_align_config() {
  Config cfg;
  cfg.set("align.depth", 2);
  cfg.set("align.dim", 64);
  cfg.set("align.patch_width", 100);
  return cfg;
}

}  // namespace

TEST_CASE("SSL reconstruction loss halves on a 200-sample toy run") {
  Cohort c(200, 21);
  Config cfg;
  auto tc = pipeline::ssl_train_config(cfg);
  tc.epochs = 30;
  tc.seed = 1;
  const auto r = ssl::train_ssl(c.train, c.val, pipeline::ssl_config(cfg, cohort::GeneratorConfig{}.frames), tc);
  REQUIRE(r.curve.size() == 30);
  const double first = r.curve.front().train_recon, last = r.curve.back().train_recon;
  MESSAGE("SSL recon epoch 1 " << first << ", epoch 30 " << last);
  CHECK(last < 0.5 * first);
}

TEST_CASE("alignment ranks the paired SA clip far above chance on a 500-pair toy run") {
  Cohort c(500, 22);
  Config cfg = small_align_config();
  const auto frames = cohort::GeneratorConfig{}.frames;
  auto stc = pipeline::ssl_train_config(cfg);
  stc.epochs = 20;
  auto cmr = ssl::train_ssl(c.train, c.val, pipeline::ssl_config(cfg, frames), stc).model;
  auto atc = pipeline::align_train_config(cfg);
  atc.epochs = 20;
  atc.seed = 2;
  auto aligned = align::train_alignment(c.train, c.val, cmr,
                                        pipeline::align_config(cfg, static_cast<int>(c.samples[0].ecg.length)), atc);
  auto model = aligned.model;
  constexpr int kGallery = 50;
  REQUIRE(c.val.size() >= static_cast<std::size_t>(kGallery));
  const SampleRefs gallery(c.val.begin(), c.val.begin() + kGallery);
  const double top1 = align::retrieval_top1(model, cmr, gallery, View::short_axis, kGallery, atc.la_size, atc.sa_size);

  torch::NoGradGuard ng;
  model->eval();
  const auto [la, sa] = align::frozen_cmr_features(cmr, gallery, atc.la_size, atc.sa_size);
  const auto sim = model->embed_ecg(align::ecg_batch(gallery, iota_n(kGallery), ecg::Mode::eval, 0, 0, {}))
                       .mm(model->embed_cmr(View::short_axis, sa).t());
  const auto rank = sim.gt(sim.diagonal().unsqueeze(1)).sum(1).to(torch::kFloat64) + 1.0;
  const double mean_rank = rank.mean().item<double>();
  const double top5 = rank.le(5).to(torch::kFloat64).mean().item<double>();
  MESSAGE("ECG to SA over " << kGallery << ": top-1 " << top1 << ", top-5 " << top5 << ", mean rank " << mean_rank);
  CHECK(mean_rank < 0.5 * (kGallery + 1) / 2.0);
  CHECK(top5 > 2.0 * 5.0 / kGallery);
}

TEST_CASE("diffusion validation loss falls within ten epochs on 300 pairs") {
  Cohort c(300, 23);
  Config cfg = small_align_config();
  const View view = View::short_axis;
  const int size = pipeline::input_size(cfg, view);
  auto clips = [&](const SampleRefs& s) {
    return ssl::clip_batch(s, iota_n(s.size()), view, cmr::Mode::eval, 0, 0, {}, size);
  };
  auto ecgs = [&](const SampleRefs& s) { return align::ecg_batch(s, iota_n(s.size()), ecg::Mode::eval, 0, 0, {}); };
  const auto train_clips = clips(c.train), val_clips = clips(c.val);
  const auto train_ecg = ecgs(c.train), val_ecg = ecgs(c.val);

  torch::manual_seed(7);
  nn::EcgVit encoder(pipeline::vit_config(cfg, static_cast<int>(train_ecg.size(2))));
  for (auto& p : encoder->parameters()) p.set_requires_grad(false);
  encoder->eval();

  diffusion::AutoencoderTrainConfig atc;
  atc.epochs = 5;
  auto ae = diffusion::train_autoencoder(train_clips, val_clips, pipeline::autoencoder_config(cfg), atc).model;
  diffusion::DiffusionTrainConfig dtc;
  dtc.epochs = 10;
  dtc.seed = 3;
  const auto ucfg =
      pipeline::unet_config(cfg, view, static_cast<int>(train_clips.size(1)), encoder->config().dim);
  const auto r = diffusion::train_diffusion(ae, encoder, train_clips, train_ecg, val_clips, val_ecg, ucfg,
                                            pipeline::noise_schedule(cfg), dtc);
  REQUIRE(r.curve.size() == 10);
  MESSAGE("diffusion val loss epoch 1 " << r.curve.front().val_loss << ", epoch 10 " << r.curve.back().val_loss);
  CHECK(r.curve.back().val_loss < r.curve.front().val_loss);
  CHECK(r.ae_hash_before == r.ae_hash_after);
  CHECK(r.encoder_hash_before == r.encoder_hash_after);
}

TEST_CASE("fine-tuning keeps the epoch with the best validation AUC") {
  Cohort c(300, 24);
  Config cfg = small_align_config();
  cfg.set("finetune.epochs", 6);
  cfg.set("finetune.warmup_epochs", 1);
  const auto task = pipeline::task_spec(cfg);
  const auto stats = cohort::covariate_stats(c.samples);
  const auto vit = pipeline::vit_config(cfg, static_cast<int>(c.samples[0].ecg.length));
  auto tc = pipeline::finetune_train_config(cfg, 5);
  tc.pretrained = false;
  const auto r = downstream::finetune(c.train, c.val, task, stats, vit, nullptr, tc);
  REQUIRE(!r.curve.empty());
  double best = -1.0;
  int best_epoch = 0;
  for (const auto& e : r.curve) {
    REQUIRE(e.val_auc.has_value());
    if (*e.val_auc > best) best = *e.val_auc, best_epoch = e.epoch;
  }
  CHECK(r.best_metric == best);
  CHECK(r.best_epoch == best_epoch);

  downstream::DataContext ctx{task, stats, r.scaler};
  auto model = r.model;
  const auto probs = downstream::predict(model, c.val, ctx);
  std::vector<int> labels;
  for (const auto* s : c.val) labels.push_back(downstream::class_of(*s, task));
  CHECK(downstream::classification_auc(probs, labels, task.kind) == doctest::Approx(best).epsilon(1e-6));
}
