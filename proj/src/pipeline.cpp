#include "ecgcmr/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "ecgcmr/error.hpp"
#include "ecgcmr/hash.hpp"
#include "ecgcmr/image_io.hpp"
#include "ecgcmr/log.hpp"
#include "ecgcmr/module_io.hpp"
#include "ecgcmr/random.hpp"

namespace ecgcmr::pipeline {

namespace {

constexpr int kManifestVersion = 1;

std::string sample_name(int id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "s%06d", id);
  return buf;
}

cohort::Split split_arg(const std::string& s) {
  if (s == "train") return cohort::Split::train;
  if (s == "val") return cohort::Split::val;
  if (s == "test") return cohort::Split::test;
  throw ConfigError("unknown split '" + s + "' (train|val|test)");
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_json(const fs::path& path, const json& j) { atomic_write(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingPrerequisite("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + " is not valid JSON: " + e.what());
  }
}

// Fresh stage directory: artifacts go to "<name>.partial" and are renamed
// into place by commit(); anything left uncommitted is removed.
class StageWriter {
 public:
  StageWriter(const fs::path& out, const std::string& name, bool force)
      : final_(out / name), tmp_(out / (name + ".partial")) {
    if (fs::exists(final_) && !force) {
      throw ConfigError("output " + final_.string() + " already exists (use --force to replace it)");
    }
    fs::remove_all(tmp_);
    fs::create_directories(tmp_);
  }
  StageWriter(const StageWriter&) = delete;
  StageWriter& operator=(const StageWriter&) = delete;
  ~StageWriter() {
    if (!done_) {
      std::error_code ec;
      fs::remove_all(tmp_, ec);
    }
  }

  const fs::path& path() const { return tmp_; }

  json commit(json manifest) {
    json outputs = json::object();
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(tmp_)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) outputs[fs::relative(f, tmp_).generic_string()] = sha256_file(f);
    manifest["outputs"] = outputs;
    manifest["artifacts_path"] = final_.string();
    write_json(tmp_ / kManifestName, manifest);
    if (fs::exists(final_)) fs::remove_all(final_);
    fs::rename(tmp_, final_);
    done_ = true;
    return manifest;
  }

 private:
  fs::path final_;
  fs::path tmp_;
  bool done_ = false;
};

struct Context {
  const Options& opts;
  const Config& cfg;
  std::uint64_t seed;
  json inputs = json::array();
  json consumed = json::object();
  json produced = json::object();

  // Verified prerequisite stage directory.
  fs::path require(const std::string& stage, const std::string& producer) {
    const auto dir = opts.out / stage;
    if (!fs::exists(dir / kManifestName)) {
      throw MissingPrerequisite("missing artifact " + dir.string() + " (produced by `ecgcmr " + producer + "`)");
    }
    verify_manifest(dir);
    inputs.push_back({{"stage", stage}, {"path", dir.string()}, {"manifest_sha256", sha256_file(dir / kManifestName)}});
    return dir;
  }

  Checkpoint consume(const fs::path& path) {
    consumed[path.string()] = sha256_file(path);
    return load_checkpoint(path);
  }

  void produce(const fs::path& dir, const std::string& file, const Checkpoint& ckpt) {
    save_checkpoint(dir / file, ckpt);
    produced[file] = sha256_file(dir / file);
  }
};

dataset::Cohort load_stage_cohort(Context& ctx, const std::string& stage, const std::string& producer) {
  return dataset::load_cohort(ctx.require(stage, producer) / "data");
}

std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

json unet_to_json(const nn::UNetConfig& c) {
  return {{"latent_channels", c.latent_channels}, {"latent_size", c.latent_size}, {"frames", c.frames},
          {"width", c.width},                     {"heads", c.heads},             {"context_dim", c.context_dim},
          {"global_condition", c.global_condition}};
}

json ae_to_json(const nn::AutoencoderConfig& c) {
  return {{"downsample", c.downsample}, {"latent_channels", c.latent_channels}, {"width", c.width}};
}

nn::AutoencoderConfig ae_from_json(const json& j) {
  nn::AutoencoderConfig c;
  c.downsample = j.at("downsample");
  c.latent_channels = j.at("latent_channels");
  c.width = j.at("width");
  return c;
}

ecg::PreprocessConfig ecg_preprocess_config(const Config& cfg) {
  ecg::PreprocessConfig p;
  p.seasonal_period = cfg.get<int>("preprocess.ecg.seasonal_period");
  p.wavelet_name = cfg.get<std::string>("preprocess.ecg.wavelet");
  p.wavelet_levels = cfg.get<int>("preprocess.ecg.wavelet_levels");
  const auto rule = cfg.get<std::string>("preprocess.ecg.threshold_rule");
  if (rule == "universal") p.threshold_rule = ecg::ThresholdRule::universal;
  else if (rule == "fixed") p.threshold_rule = ecg::ThresholdRule::fixed;
  else throw ConfigError("preprocess.ecg.threshold_rule must be universal|fixed");
  p.fixed_threshold = cfg.get<double>("preprocess.ecg.fixed_threshold");
  p.savgol_window = cfg.get<int>("preprocess.ecg.savgol_window");
  p.savgol_polyorder = cfg.get<int>("preprocess.ecg.savgol_polyorder");
  p.validate();
  return p;
}

ecg::AugmentPolicy ecg_policy(const Config& cfg) {
  ecg::AugmentPolicy p;
  p.crop_scale_min = cfg.get<double>("augment.ecg.crop_scale_min");
  p.crop_scale_max = cfg.get<double>("augment.ecg.crop_scale_max");
  p.time_flip_prob = cfg.get<double>("augment.ecg.time_flip_prob");
  p.sign_flip_prob = cfg.get<double>("augment.ecg.sign_flip_prob");
  p.validate();
  return p;
}

cmr::AugmentPolicy cmr_policy(const Config& cfg) {
  cmr::AugmentPolicy p;
  p.max_rotation_deg = cfg.get<double>("augment.cmr.max_rotation_deg");
  p.hflip_prob = cfg.get<double>("augment.cmr.hflip_prob");
  p.vflip_prob = cfg.get<double>("augment.cmr.vflip_prob");
  p.scale_min = cfg.get<double>("augment.cmr.scale_min");
  p.scale_max = cfg.get<double>("augment.cmr.scale_max");
  p.aspect_min = cfg.get<double>("augment.cmr.aspect_min");
  p.aspect_max = cfg.get<double>("augment.cmr.aspect_max");
  p.validate();
  return p;
}

SampleRefs select_samples(const dataset::Cohort& c, const std::string& split, const json& ids, std::size_t limit) {
  SampleRefs out;
  std::set<int> wanted;
  for (const auto& v : ids) wanted.insert(v.get<int>());
  for (const auto* s : c.select(split_arg(split))) {
    if (!wanted.empty() && !wanted.count(s->id)) continue;
    out.push_back(s);
  }
  if (!wanted.empty() && out.size() != wanted.size()) {
    throw ConfigError("some requested sample ids are not in the " + split + " split");
  }
  if (limit > 0 && out.size() > limit) out.resize(limit);
  if (out.empty()) throw ConfigError("no samples selected from the " + split + " split");
  return out;
}

// ----------------------------------------------------------------- commands

json cmd_synth(Context& ctx, StageWriter& w) {
  const auto& cfg = ctx.cfg;
  const auto gen = dataset::generator_from_json(cfg.at("cohort.generator"));
  const auto n = cfg.get<std::size_t>("cohort.n");
  if (n < 10) throw ConfigError("cohort.n must be at least 10");
  cohort::SplitRatios ratios{cfg.get<double>("cohort.split.train"), cfg.get<double>("cohort.split.val"),
                             cfg.get<double>("cohort.split.test")};
  const auto gen_seed = derive_seed(ctx.seed, "cohort");
  dataset::Cohort c;
  c.samples = cohort::generate_samples(n, gen_seed, gen, cfg.get<unsigned>("runtime.threads"));
  cohort::CohortManifest m;
  std::ostringstream id;
  id << "synthetic-" << std::hex << gen_seed;
  m.cohort_id = id.str();
  m.n_samples = n;
  m.generator_seed = gen_seed;
  m = cohort::split_cohort(m, ratios, derive_seed(ctx.seed, "split"));
  m.covariate_stats = cohort::covariate_stats(c.samples);
  c.manifest = m;
  c.info = {{"stage", "synthetic"}, {"generator", dataset::to_json(gen)}};
  dataset::write_cohort(w.path() / "data", c);
  return {{"dataset_hash", sha256_tree(w.path() / "data")}, {"n_samples", n}};
}

json cmd_preprocess(Context& ctx, StageWriter& w) {
  const auto& cfg = ctx.cfg;
  auto c = load_stage_cohort(ctx, "cohort", "synth");
  const auto pcfg = ecg_preprocess_config(cfg);
  const int sa_crop = cfg.get<int>("preprocess.cmr.sa_crop");
  const int la_crop = cfg.get<int>("preprocess.cmr.la_crop");
  const auto modality = cfg.get<std::string>("preprocess.modality");
  if (modality != "all" && modality != "ecg" && modality != "cmr") {
    throw ConfigError("preprocess.modality must be all|ecg|cmr");
  }
  for (auto& s : c.samples) {
    if (modality != "cmr") s.ecg = ecg::preprocess(s.ecg, pcfg, s.covariates.mean_heart_rate);
    if (modality == "ecg") continue;
    const auto win_la = cmr::heart_crop_window(s.mask_la, la_crop);
    const auto win_sa = cmr::heart_crop_window(s.mask_sa, sa_crop);
    s.cmr_la = cmr::crop_to_heart(s.cmr_la, s.mask_la, la_crop);
    s.cmr_sa = cmr::crop_to_heart(s.cmr_sa, s.mask_sa, sa_crop);
    s.mask_la = cmr::crop_mask(s.mask_la, win_la);
    s.mask_sa = cmr::crop_mask(s.mask_sa, win_sa);
    s.sa_volume.reset();
  }
  c.info["stage"] = "preprocessed";
  c.info["preprocess"] = cfg.at("preprocess");
  dataset::write_cohort(w.path() / "data", c);
  return {{"dataset_hash", sha256_tree(w.path() / "data")}, {"n_samples", c.samples.size()}};
}

json cmd_pretrain_cmr(Context& ctx, StageWriter& w) {
  const auto& cfg = ctx.cfg;
  auto c = load_stage_cohort(ctx, "preprocessed", "preprocess");
  const int frames = c.samples.front().cmr_sa.frames;
  const auto sc = ssl_config(cfg, frames);
  auto tc = ssl_train_config(cfg);
  tc.seed = derive_seed(ctx.seed, "ssl");
  auto r = ssl::train_ssl(c.select(cohort::Split::train), c.select(cohort::Split::val), sc, tc);
  Checkpoint ck;
  ck.kind = "ssl";
  ck.meta = {{"config", ssl::to_json(sc)}, {"epoch", r.epoch}, {"val_loss", r.val_loss}};
  append_module(ck, *r.model, "model/");
  append_adam_state(ck, *r.optimizer, *r.model, "optim/");
  ctx.produce(w.path(), "ssl.ckpt", ck);
  write_json(w.path() / "curve.json", ssl::to_json(r.curve));
  return {{"final_val_loss", r.val_loss}, {"first_val_loss", r.curve.front().val_loss}};
}

json cmd_pretrain_align(Context& ctx, StageWriter& w) {
  const auto& cfg = ctx.cfg;
  auto c = load_stage_cohort(ctx, "preprocessed", "preprocess");
  const auto ssl_dir = ctx.require("ssl", "pretrain-cmr");
  ctx.consumed[(ssl_dir / "ssl.ckpt").string()] = sha256_file(ssl_dir / "ssl.ckpt");
  auto cmr_model = load_ssl(ssl_dir);
  const auto ac = align_config(cfg, static_cast<int>(c.samples.front().ecg.length));
  auto tc = align_train_config(cfg);
  tc.seed = derive_seed(ctx.seed, "align");
  const auto train = c.select(cohort::Split::train), val = c.select(cohort::Split::val);
  auto r = align::train_alignment(train, val, cmr_model, ac, tc);
  const auto& sc = cmr_model->config();
  Checkpoint ck;
  ck.kind = "align";
  ck.meta = {{"config", align::to_json(ac)},
             {"cmr_dims", {{"la", sc.la.dims.back()}, {"sa", sc.sa.dims.back()}}},
             {"best_epoch", r.best_epoch},
             {"best_val_loss", r.best_val_loss},
             {"frozen_cmr_hash_before", r.frozen_hash_before},
             {"frozen_cmr_hash_after", r.frozen_hash_after}};
  append_module(ck, *r.model, "model/");
  ctx.produce(w.path(), "align.ckpt", ck);
  write_json(w.path() / "curve.json", align::to_json(r.curve));
  const int gallery = static_cast<int>(val.size());
  const double top1_la = align::retrieval_top1(r.model, cmr_model, val, View::long_axis, gallery, tc.la_size, tc.sa_size);
  const double top1_sa = align::retrieval_top1(r.model, cmr_model, val, View::short_axis, gallery, tc.la_size, tc.sa_size);
  return {{"best_epoch", r.best_epoch},
          {"best_val_loss", r.best_val_loss},
          {"frozen_cmr_hash_before", r.frozen_hash_before},
          {"frozen_cmr_hash_after", r.frozen_hash_after},
          {"retrieval_top1", {{"la", top1_la}, {"sa", top1_sa}, {"chance", 1.0 / gallery}}}};
}

json cmd_train_diffusion(Context& ctx, StageWriter& w) {
  const auto& cfg = ctx.cfg;
  const View view = view_arg(cfg.get<std::string>("diffusion.view"));
  auto c = load_stage_cohort(ctx, "preprocessed", "preprocess");
  const auto align_dir = ctx.require("align", "pretrain-align");
  ctx.consumed[(align_dir / "align.ckpt").string()] = sha256_file(align_dir / "align.ckpt");
  auto aligned = load_align(align_dir);
  auto encoder = aligned->encoder();

  const int size = input_size(cfg, view);
  const auto train = c.select(cohort::Split::train), val = c.select(cohort::Split::val);
  auto clips = [&](const SampleRefs& s) {
    return ssl::clip_batch(s, iota_n(s.size()), view, cmr::Mode::eval, 0, 0, {}, size);
  };
  auto ecgs = [&](const SampleRefs& s) { return align::ecg_batch(s, iota_n(s.size()), ecg::Mode::eval, 0, 0, {}); };
  const auto train_clips = clips(train), val_clips = clips(val);
  const auto train_ecg = ecgs(train), val_ecg = ecgs(val);

  const auto aec = autoencoder_config(cfg);
  diffusion::AutoencoderTrainConfig atc;
  atc.epochs = cfg.get<int>("autoencoder.epochs");
  atc.batch_size = cfg.get<int>("autoencoder.batch_size");
  atc.lr = cfg.get<double>("autoencoder.lr");
  atc.target_mse = cfg.get<double>("autoencoder.target_mse");
  atc.seed = derive_seed(ctx.seed, "autoencoder_" + to_string(view));
  auto ae = diffusion::train_autoencoder(train_clips, val_clips, aec, atc);

  const auto ucfg = unet_config(cfg, view, static_cast<int>(train_clips.size(1)), encoder->config().dim);
  const auto schedule = noise_schedule(cfg);
  diffusion::DiffusionTrainConfig dtc;
  dtc.epochs = cfg.get<int>("diffusion.epochs");
  dtc.batch_size = cfg.get<int>("diffusion.batch_size");
  dtc.lr = cfg.get<double>("diffusion.lr");
  dtc.seed = derive_seed(ctx.seed, "diffusion_" + to_string(view));
  auto r = diffusion::train_diffusion(ae.model, encoder, train_clips, train_ecg, val_clips, val_ecg, ucfg, schedule, dtc);

  Checkpoint ack;
  ack.kind = "autoencoder";
  ack.meta = {{"view", to_string(view)},       {"config", ae_to_json(aec)},
              {"val_mse", ae.val_mse},         {"target_mse", atc.target_mse},
              {"reached_target", ae.reached_target}, {"latent_scale", ae.model->latent_scale()}};
  append_module(ack, *ae.model, "model/");
  ctx.produce(w.path(), "autoencoder.ckpt", ack);

  Checkpoint dck;
  dck.kind = "diffusion";
  dck.meta = {{"view", to_string(view)},
              {"unet", unet_to_json(ucfg)},
              {"schedule",
               {{"steps", schedule.steps},
                {"beta_start", cfg.get<double>("diffusion.beta_start")},
                {"beta_end", cfg.get<double>("diffusion.beta_end")}}},
              {"autoencoder", ae_to_json(aec)},
              {"encoder", align::to_json(encoder->config())},
              {"best_epoch", r.best_epoch},
              {"best_val_loss", r.best_val_loss}};
  append_module(dck, *r.unet, "unet/");
  append_module(dck, *ae.model, "ae/");
  append_module(dck, *encoder, "cond/");
  ctx.produce(w.path(), "diffusion.ckpt", dck);
  write_json(w.path() / "curve.json",
             {{"autoencoder", diffusion::to_json(ae.curve)}, {"diffusion", diffusion::to_json(r.curve)}});
  return {{"view", to_string(view)},
          {"autoencoder_val_mse", ae.val_mse},
          {"autoencoder_reached_target", ae.reached_target},
          {"best_epoch", r.best_epoch},
          {"best_val_loss", r.best_val_loss},
          {"frozen",
           {{"autoencoder_before", r.ae_hash_before},
            {"autoencoder_after", r.ae_hash_after},
            {"encoder_before", r.encoder_hash_before},
            {"encoder_after", r.encoder_hash_after}}}};
}

json cmd_generate(Context& ctx, StageWriter& w) {
  const auto& cfg = ctx.cfg;
  const View view = view_arg(cfg.get<std::string>("generate.view"));
  auto c = load_stage_cohort(ctx, "preprocessed", "preprocess");
  const auto ddir = ctx.require("diffusion_" + to_string(view), "train-diffusion --view " + to_string(view));
  auto ck = ctx.consume(ddir / "diffusion.ckpt");
  const auto frames = c.samples.front().cmr_sa.frames;
  const int context_dim = ck.meta.at("encoder").at("dim");
  auto b = load_diffusion(ck, unet_config(cfg, view, frames, context_dim));
  const int steps = cfg.get<int>("generate.steps");
  const double eta = cfg.get<double>("generate.eta");
  const bool png = cfg.get<bool>("generate.png");
  const auto samples = select_samples(c, cfg.get<std::string>("generate.split"), cfg.at("generate.ids"),
                                      cfg.get<std::size_t>("generate.limit"));
  const int size = input_size(cfg, view);
  const auto gen_seed = derive_seed(ctx.seed, "generate");
  json ids = json::array(), lvm = json::array(), rvedv = json::array(), real = json::array(), gen = json::array();
  for (const auto* s : samples) {
    auto ecg = align::ecg_batch({s}, {0}, ecg::Mode::eval, 0, 0, {});
    auto tokens = diffusion::condition_tokens(b.encoder, ecg);
    auto out = diffusion::ddim_sample(b.unet, b.ae, tokens, b.schedule, steps, eta, derive_seed(gen_seed, s->id));
    const auto clip = tensor_to_clip(out[0], view);
    dataset::write_clip(w.path() / "clips", sample_name(s->id), clip);
    if (png) write_clip_png(w.path() / "png" / (sample_name(s->id) + ".png"), clip, -1.0f, 1.0f);
    const auto& real_clip = view == View::long_axis ? s->cmr_la : s->cmr_sa;
    ids.push_back(s->id);
    lvm.push_back(s->latent.lvm_like);
    rvedv.push_back(s->latent.rvedv_like);
    real.push_back(wall_readout(cmr::normalize_resize(real_clip, size)));
    gen.push_back(wall_readout(clip));
  }
  write_json(w.path() / "readouts.json", {{"view", to_string(view)},
                                          {"steps", steps},
                                          {"eta", eta},
                                          {"ids", ids},
                                          {"lvm_like", lvm},
                                          {"rvedv_like", rvedv},
                                          {"real_readout", real},
                                          {"generated_readout", gen}});
  return {{"view", to_string(view)}, {"n_generated", samples.size()}, {"steps", steps}, {"eta", eta}};
}

json cmd_finetune(Context& ctx, StageWriter& w) {
  const auto& cfg = ctx.cfg;
  auto c = load_stage_cohort(ctx, "preprocessed", "preprocess");
  const auto task = task_spec(cfg);
  auto tc = finetune_train_config(cfg, ctx.seed);
  const int length = static_cast<int>(c.samples.front().ecg.length);
  auto vit = vit_config(cfg, length);
  align::AlignModel aligned{nullptr};
  if (tc.pretrained) {
    const auto align_dir = ctx.require("align", "pretrain-align");
    ctx.consumed[(align_dir / "align.ckpt").string()] = sha256_file(align_dir / "align.ckpt");
    aligned = load_align(align_dir);
    vit = aligned->encoder()->config();
  }
  nn::EcgVit* init = tc.pretrained ? &aligned->encoder() : nullptr;
  auto r = downstream::finetune(c.select(cohort::Split::train), c.select(cohort::Split::val), task,
                                c.manifest.covariate_stats, vit, init, tc);
  Checkpoint ck;
  ck.kind = "finetune";
  ck.meta = {{"name", finetune_name(cfg)},
             {"task", downstream::to_json(task)},
             {"encoder", align::to_json(vit)},
             {"film_hidden", tc.film_hidden},
             {"init", tc.pretrained ? "pretrained" : "scratch"},
             {"scaler", {{"mean", r.scaler.mean}, {"stddev", r.scaler.stddev}}},
             {"best_epoch", r.best_epoch},
             {"best_metric", r.best_metric},
             {"metric_name", r.metric_name},
             {"train_ids", r.train_ids}};
  append_module(ck, *r.model, "model/");
  ctx.produce(w.path(), "finetune.ckpt", ck);
  write_json(w.path() / "curve.json", downstream::to_json(r.curve));
  return {{"name", finetune_name(cfg)},
          {"best_epoch", r.best_epoch},
          {r.metric_name, r.best_metric},
          {"epochs_run", r.curve.size()},
          {"n_train", r.train_ids.size()}};
}

std::string task_or_default(const Config& cfg, const std::string& key) {
  const auto v = cfg.get<std::string>(key);
  return v.empty() ? finetune_name(cfg) : v;
}

json cmd_predict(Context& ctx, StageWriter& w) {
  const auto& cfg = ctx.cfg;
  auto c = load_stage_cohort(ctx, "preprocessed", "preprocess");
  const auto name = task_or_default(cfg, "predict.task");
  const auto fdir = ctx.require("finetune_" + name, "finetune");
  ctx.consumed[(fdir / "finetune.ckpt").string()] = sha256_file(fdir / "finetune.ckpt");
  auto b = load_finetune(fdir, c.manifest.covariate_stats);
  const auto samples = c.select(split_arg(cfg.get<std::string>("predict.split")));
  const auto out = downstream::predict(b.model, samples, b.context);
  json ids = json::array();
  std::ostringstream csv;
  csv << "id";
  for (std::size_t k = 0; k < out.front().size(); ++k) csv << ",output_" << k;
  csv << "\n" << std::setprecision(17);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    ids.push_back(samples[i]->id);
    csv << samples[i]->id;
    for (double v : out[i]) csv << ',' << v;
    csv << "\n";
  }
  write_json(w.path() / "predictions.json",
             {{"task", name}, {"kind", downstream::to_string(b.context.task.kind)}, {"ids", ids}, {"outputs", out}});
  atomic_write(w.path() / "predictions.csv", csv.str());
  return {{"task", name}, {"n", samples.size()}};
}

void add_generated_metrics(stats::MetricsReport& report, const json& readouts, std::size_t resamples,
                           std::uint64_t seed) {
  const auto lvm = readouts.at("lvm_like").get<std::vector<double>>();
  const auto real = readouts.at("real_readout").get<std::vector<double>>();
  const auto gen = readouts.at("generated_readout").get<std::vector<double>>();
  if (lvm.size() != gen.size() || real.size() != gen.size()) throw FormatError("generated readouts are unpaired");
  std::vector<std::vector<double>> truth(gen.size()), real_rows(gen.size()), gen_rows(gen.size());
  for (std::size_t i = 0; i < gen.size(); ++i) {
    truth[i] = {lvm[i]};
    real_rows[i] = {real[i]};
    gen_rows[i] = {gen[i]};
  }
  const auto view = readouts.at("view").get<std::string>();
  const auto r_lvm = stats::gen_vs_real_correlation(truth, gen_rows, resamples, derive_seed(seed, "gen_lvm"))[0];
  const auto r_real = stats::gen_vs_real_correlation(real_rows, gen_rows, resamples, derive_seed(seed, "gen_real"))[0];
  report.metrics.push_back({"generated_" + view + "_r_lvm_like", r_lvm.r, r_lvm.ci, "bootstrap"});
  report.metrics.push_back({"generated_" + view + "_r_real_readout", r_real.r, r_real.ci, "bootstrap"});
  std::vector<double> shuffled;
  Rng rng(derive_seed(seed, "gen_shuffle"));
  for (int k = 0; k < 200; ++k) {
    auto perm = gen;
    rng.shuffle(perm);
    shuffled.push_back(std::abs(stats::pearson_r(lvm, perm)));
  }
  report.metrics.push_back({"generated_" + view + "_shuffled_median_abs_r", stats::median(shuffled), std::nullopt, ""});
}

json cmd_evaluate(Context& ctx, StageWriter& w) {
  const auto& cfg = ctx.cfg;
  auto c = load_stage_cohort(ctx, "preprocessed", "preprocess");
  const auto name = task_or_default(cfg, "evaluate.task");
  const auto fdir = ctx.require("finetune_" + name, "finetune");
  ctx.consumed[(fdir / "finetune.ckpt").string()] = sha256_file(fdir / "finetune.ckpt");
  auto model = load_finetune(fdir, c.manifest.covariate_stats);
  std::optional<FinetuneBundle> base;
  const auto baseline = cfg.get<std::string>("evaluate.baseline");
  if (!baseline.empty()) {
    const auto bdir = ctx.require("finetune_" + baseline, "finetune");
    ctx.consumed[(bdir / "finetune.ckpt").string()] = sha256_file(bdir / "finetune.ckpt");
    base = load_finetune(bdir, c.manifest.covariate_stats);
  }
  const auto samples = c.select(split_arg(cfg.get<std::string>("evaluate.split")));
  const auto resamples = cfg.get<std::size_t>("evaluate.bootstrap");
  const auto eval_seed = derive_seed(ctx.seed, "evaluate");
  auto report = evaluate_task(name, model, samples, base ? &*base : nullptr, resamples,
                              cfg.get<double>("evaluate.threshold"), eval_seed);
  const auto generated = cfg.get<std::string>("evaluate.generated");
  if (!generated.empty()) {
    const auto view = view_arg(generated);
    const auto gdir = ctx.require("generated_" + to_string(view), "generate --view " + to_string(view));
    add_generated_metrics(report, read_json(gdir / "readouts.json"), resamples, eval_seed);
  }
  report.validate();
  const auto rj = report.to_json();
  write_json(w.path() / "metrics.json", rj);
  atomic_write(w.path() / "metrics.csv", report.to_csv());
  return {{"task", name}, {"n", report.n}, {"metrics_sha256", to_hex(sha256(std::span<const std::uint8_t>(
                                                                  reinterpret_cast<const std::uint8_t*>(rj.dump().data()),
                                                                  rj.dump().size())))}};
}

json cmd_gradcam(Context& ctx, StageWriter& w) {
  const auto& cfg = ctx.cfg;
  auto c = load_stage_cohort(ctx, "preprocessed", "preprocess");
  const auto name = task_or_default(cfg, "gradcam.task");
  const auto fdir = ctx.require("finetune_" + name, "finetune");
  ctx.consumed[(fdir / "finetune.ckpt").string()] = sha256_file(fdir / "finetune.ckpt");
  auto b = load_finetune(fdir, c.manifest.covariate_stats);
  if (b.context.task.kind == downstream::TaskKind::regression) {
    throw ConfigError("gradcam needs a classification checkpoint; '" + name + "' is a regression task");
  }
  const int target = cfg.get<int>("gradcam.target_class");
  const auto& wanted = cfg.at("gradcam.ids");
  SampleRefs samples;
  if (!wanted.empty()) {
    samples = select_samples(c, "test", wanted, 0);
  } else {
    for (const auto* s : c.select(cohort::Split::test)) {
      if (downstream::class_of(*s, b.context.task) == target) samples.push_back(s);
    }
    const auto limit = cfg.get<std::size_t>("gradcam.limit");
    if (limit > 0 && samples.size() > limit) samples.resize(limit);
  }
  if (samples.empty()) throw ConfigError("no test samples of the target class for Grad-CAM");
  const bool png = cfg.get<bool>("gradcam.png");
  json rows = json::array();
  std::size_t enriched = 0;
  for (const auto* s : samples) {
    auto batch = downstream::make_batch({s}, {0}, b.context, ecg::Mode::eval, 0, 0, {});
    const auto map = downstream::grad_cam(b.model, batch.ecg[0], batch.covariates[0], target);
    const auto length = s->ecg.length;
    std::ostringstream csv;
    csv << std::setprecision(7);
    for (int l = 0; l < kLeads; ++l) {
      for (std::size_t i = 0; i < length; ++i) csv << (i ? "," : "") << map[l * length + i];
      csv << "\n";
    }
    atomic_write(w.path() / ("heatmap_" + sample_name(s->id) + ".csv"), csv.str());
    if (png) {
      write_heatmap_png(w.path() / ("heatmap_" + sample_name(s->id) + ".png"), map, kLeads, static_cast<int>(length));
    }
    const auto [share, covered] = downstream::qrs_saliency_share(map, length, s->qrs_windows);
    enriched += share > covered ? 1 : 0;
    rows.push_back({{"id", s->id}, {"qrs_share_top_decile", share}, {"qrs_coverage", covered}});
  }
  const double frac = static_cast<double>(enriched) / static_cast<double>(samples.size());
  write_json(w.path() / "summary.json", {{"task", name}, {"target_class", target}, {"samples", rows},
                                         {"qrs_enriched_fraction", frac}});
  return {{"task", name}, {"n", samples.size()}, {"qrs_enriched_fraction", frac}};
}

double split_metric(downstream::DownstreamModel& model, const downstream::DataContext& dc, const SampleRefs& samples) {
  const auto out = downstream::predict(model, samples, dc);
  if (dc.task.kind == downstream::TaskKind::regression) {
    double sum = 0.0;
    for (std::size_t j = 0; j < dc.task.phenotypes.size(); ++j) {
      std::vector<double> p, t;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        p.push_back(out[i][j]);
        t.push_back(samples[i]->phenotypes.at(static_cast<std::size_t>(dc.task.phenotypes[j])));
      }
      sum += stats::pearson_r(p, t);
    }
    return sum / static_cast<double>(dc.task.phenotypes.size());
  }
  std::vector<int> labels;
  for (const auto* s : samples) labels.push_back(downstream::class_of(*s, dc.task));
  return downstream::classification_auc(out, labels, dc.task.kind);
}

json cmd_label_efficiency(Context& ctx, StageWriter& w) {
  const auto& cfg = ctx.cfg;
  auto c = load_stage_cohort(ctx, "preprocessed", "preprocess");
  const auto fractions = cfg.get<std::vector<double>>("label_efficiency.fractions");
  const auto seeds = cfg.get<std::vector<std::uint64_t>>("label_efficiency.seeds");
  const auto inits = cfg.get<std::vector<std::string>>("label_efficiency.inits");
  const auto metric_split = split_arg(cfg.get<std::string>("label_efficiency.metric_split"));
  if (fractions.empty() || seeds.empty() || inits.empty()) throw ConfigError("label_efficiency needs fractions, seeds and inits");
  auto task = task_spec(cfg);
  const int length = static_cast<int>(c.samples.front().ecg.length);
  auto vit = vit_config(cfg, length);
  align::AlignModel aligned{nullptr};
  if (std::find(inits.begin(), inits.end(), "pretrained") != inits.end()) {
    const auto align_dir = ctx.require("align", "pretrain-align");
    ctx.consumed[(align_dir / "align.ckpt").string()] = sha256_file(align_dir / "align.ckpt");
    aligned = load_align(align_dir);
    vit = aligned->encoder()->config();
  }
  const auto train = c.select(cohort::Split::train), val = c.select(cohort::Split::val);
  const auto eval_samples = c.select(metric_split);
  const auto resamples = cfg.get<std::size_t>("evaluate.bootstrap");
  json summary = {{"task", downstream::to_string(task.kind)},
                  {"metric", task.kind == downstream::TaskKind::regression ? "mean_r" : "auroc"},
                  {"metric_split", cohort::to_string(metric_split)},
                  {"curves", json::object()}};
  std::map<std::string, std::vector<stats::EfficiencyRow>> curves;
  for (const auto& init : inits) {
    if (init != "pretrained" && init != "scratch") throw ConfigError("label_efficiency.inits entries are pretrained|scratch");
    auto trainer = [&](double fraction, std::uint64_t seed) {
      auto t = task;
      t.fraction = fraction;
      auto tc = finetune_train_config(cfg, seed);
      tc.pretrained = init == "pretrained";
      auto r = downstream::finetune(train, val, t, c.manifest.covariate_stats, vit,
                                    tc.pretrained ? &aligned->encoder() : nullptr, tc);
      if (metric_split == cohort::Split::val && t.kind != downstream::TaskKind::regression) return r.best_metric;
      downstream::DataContext dc{t, c.manifest.covariate_stats, r.scaler};
      return split_metric(r.model, dc, eval_samples);
    };
    const auto rows = stats::label_efficiency_curve(fractions, seeds, trainer, resamples,
                                                    derive_seed(ctx.seed, "label_efficiency_" + init));
    atomic_write(w.path() / ("curve_" + init + ".csv"), stats::efficiency_csv(rows));
    json jr = json::array();
    for (const auto& r : rows) {
      jr.push_back({{"fraction", r.fraction}, {"per_seed", r.per_seed}, {"median", r.median},
                    {"ci", {r.ci.lo, r.ci.hi}}});
    }
    summary["curves"][init] = jr;
    curves[init] = rows;
  }
  if (curves.count("pretrained") && curves.count("scratch")) {
    summary["smallest_fraction_gap"] = curves["pretrained"].front().median - curves["scratch"].front().median;
  }
  write_json(w.path() / "summary.json", summary);
  return summary;
}

using Handler = json (*)(Context&, StageWriter&);

const std::map<std::string, Handler>& handlers() {
  static const std::map<std::string, Handler> h = {
      {"synth", cmd_synth},
      {"preprocess", cmd_preprocess},
      {"pretrain-cmr", cmd_pretrain_cmr},
      {"pretrain-align", cmd_pretrain_align},
      {"train-diffusion", cmd_train_diffusion},
      {"generate", cmd_generate},
      {"finetune", cmd_finetune},
      {"predict", cmd_predict},
      {"evaluate", cmd_evaluate},
      {"gradcam", cmd_gradcam},
      {"label-efficiency", cmd_label_efficiency},
  };
  return h;
}

}  // namespace

const std::vector<std::string>& commands() {
  static const std::vector<std::string> c = {"synth",    "preprocess", "pretrain-cmr", "pretrain-align",
                                             "train-diffusion", "generate", "finetune", "predict",
                                             "evaluate", "gradcam",    "label-efficiency"};
  return c;
}

std::string stage_name(const std::string& command, const Config& cfg) {
  if (command == "synth") return "cohort";
  if (command == "preprocess") return "preprocessed";
  if (command == "pretrain-cmr") return "ssl";
  if (command == "pretrain-align") return "align";
  if (command == "train-diffusion") return "diffusion_" + to_string(view_arg(cfg.get<std::string>("diffusion.view")));
  if (command == "generate") return "generated_" + to_string(view_arg(cfg.get<std::string>("generate.view")));
  if (command == "finetune") return "finetune_" + finetune_name(cfg);
  if (command == "predict") return "predictions_" + task_or_default(cfg, "predict.task");
  if (command == "evaluate") return "evaluation_" + task_or_default(cfg, "evaluate.task");
  if (command == "gradcam") return "gradcam_" + task_or_default(cfg, "gradcam.task");
  if (command == "label-efficiency") return "label_efficiency_" + cfg.get<std::string>("finetune.task");
  throw ConfigError("unknown command '" + command + "'");
}

StageResult run(const std::string& command, const Options& opts) {
  const auto it = handlers().find(command);
  if (it == handlers().end()) throw ConfigError("unknown command '" + command + "'");
  const auto& cfg = opts.config;
  const auto threads = cfg.get<int>("runtime.threads");
  if (threads < 1) throw ConfigError("runtime.threads must be >= 1");
  torch::set_num_threads(threads);
  const auto name = stage_name(command, cfg);
  fs::create_directories(opts.out);
  Context ctx{opts, cfg, cfg.get<std::uint64_t>("seed")};
  const auto started = utc_now();
  const auto t0 = std::chrono::steady_clock::now();
  StageWriter w(opts.out, name, opts.force);
  log::info("running ", command, " -> ", (opts.out / name).string());
  auto summary = it->second(ctx, w);
  json manifest = {
      {"format_version", kManifestVersion},
      {"command", command},
      {"stage", name},
      {"seed", ctx.seed},
      {"config", cfg.doc()},
      {"inputs", ctx.inputs},
      {"checkpoints", {{"consumed", ctx.consumed}, {"produced", ctx.produced}}},
      {"summary", summary},
      {"started_utc", started},
      {"wall_clock_seconds",
       std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()},
  };
  StageResult r;
  r.manifest = w.commit(manifest);
  r.dir = opts.out / name;
  return r;
}

json read_manifest(const fs::path& stage_dir) { return read_json(stage_dir / kManifestName); }

json verify_manifest(const fs::path& stage_dir) {
  const auto m = read_manifest(stage_dir);
  if (m.value("format_version", 0) != kManifestVersion) {
    throw FormatError("unsupported run manifest version in " + stage_dir.string());
  }
  std::vector<std::string> problems;
  std::set<std::string> listed;
  for (const auto& [rel, hash] : m.at("outputs").items()) {
    listed.insert(rel);
    const auto p = stage_dir / rel;
    if (!fs::exists(p)) problems.push_back("missing " + rel);
    else if (sha256_file(p) != hash.get<std::string>()) problems.push_back("hash mismatch " + rel);
  }
  for (const auto& e : fs::recursive_directory_iterator(stage_dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), stage_dir).generic_string();
    if (rel != kManifestName && !listed.count(rel)) problems.push_back("unlisted " + rel);
  }
  if (!problems.empty()) {
    std::string msg = "artifacts in " + stage_dir.string() + " do not match their manifest:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw FormatError(msg);
  }
  return m;
}

fs::path default_out() {
  const char* env = std::getenv("ECGCMR_OUT");
  return env != nullptr && *env != '\0' ? fs::path(env) : fs::path("runs");
}

View view_arg(const std::string& s) {
  if (s == "la" || s == "long_axis") return View::long_axis;
  if (s == "sa" || s == "short_axis") return View::short_axis;
  throw ConfigError("unknown view '" + s + "' (la|sa)");
}

int input_size(const Config& cfg, View view) {
  return cfg.get<int>(view == View::long_axis ? "input.la_size" : "input.sa_size");
}

nn::SwinStyleConfig swin_config(const Config& cfg, int image_size, int frames) {
  nn::SwinStyleConfig c;
  c.image_size = image_size;
  c.in_channels = frames;
  c.patch_size = cfg.get<int>("ssl.patch_size");
  c.window_size = cfg.get<int>("ssl.window_size");
  c.depths = cfg.get<std::vector<int>>("ssl.depths");
  c.heads = cfg.get<std::vector<int>>("ssl.heads");
  c.dims = cfg.get<std::vector<int>>("ssl.dims");
  c.mlp_ratio = cfg.get<double>("ssl.mlp_ratio");
  c.validate();
  return c;
}

ssl::SslConfig ssl_config(const Config& cfg, int frames) {
  ssl::SslConfig c;
  c.la = swin_config(cfg, input_size(cfg, View::long_axis), frames);
  c.sa = swin_config(cfg, input_size(cfg, View::short_axis), frames);
  c.mask_ratio = cfg.get<double>("ssl.mask_ratio");
  c.tau = cfg.get<double>("ssl.tau");
  c.lambda = cfg.get<double>("ssl.lambda");
  c.proj_dim = cfg.get<int>("ssl.proj_dim");
  c.decoder_hidden = cfg.get<int>("ssl.decoder_hidden");
  c.share_encoders = cfg.get<bool>("ssl.share_encoders");
  c.validate();
  return c;
}

ssl::TrainConfig ssl_train_config(const Config& cfg) {
  ssl::TrainConfig t;
  t.epochs = cfg.get<int>("ssl.epochs");
  t.batch_size = cfg.get<int>("ssl.batch_size");
  t.lr = cfg.get<double>("ssl.lr");
  t.warmup_fraction = cfg.get<double>("ssl.warmup_fraction");
  t.weight_decay = cfg.get<double>("ssl.weight_decay");
  t.augment = cfg.get<bool>("ssl.augment");
  t.policy = cmr_policy(cfg);
  if (t.epochs < 1 || t.batch_size < 1) throw ConfigError("ssl.epochs and ssl.batch_size must be >= 1");
  return t;
}

nn::EcgVitConfig vit_config(const Config& cfg, int length) {
  nn::EcgVitConfig v;
  v.length = length;
  v.patch_width = cfg.get<int>("align.patch_width");
  v.dim = cfg.get<int>("align.dim");
  v.depth = cfg.get<int>("align.depth");
  v.heads = cfg.get<int>("align.heads");
  v.mlp_ratio = cfg.get<double>("align.mlp_ratio");
  v.validate();
  return v;
}

align::AlignConfig align_config(const Config& cfg, int length) {
  align::AlignConfig a;
  a.vit = vit_config(cfg, length);
  a.proj_dim = cfg.get<int>("align.proj_dim");
  a.tau = cfg.get<double>("align.tau");
  if (!(a.tau > 0.0)) throw ConfigError("align.tau must be positive");
  return a;
}

align::TrainConfig align_train_config(const Config& cfg) {
  align::TrainConfig t;
  t.epochs = cfg.get<int>("align.epochs");
  t.batch_size = cfg.get<int>("align.batch_size");
  t.lr = cfg.get<double>("align.lr");
  t.warmup_fraction = cfg.get<double>("align.warmup_fraction");
  t.weight_decay = cfg.get<double>("align.weight_decay");
  t.augment = cfg.get<bool>("align.augment");
  t.policy = ecg_policy(cfg);
  t.la_size = input_size(cfg, View::long_axis);
  t.sa_size = input_size(cfg, View::short_axis);
  if (t.epochs < 1 || t.batch_size < 2) throw ConfigError("align.epochs must be >= 1 and align.batch_size >= 2");
  return t;
}

nn::AutoencoderConfig autoencoder_config(const Config& cfg) {
  nn::AutoencoderConfig c;
  c.downsample = cfg.get<int>("autoencoder.downsample");
  c.latent_channels = cfg.get<int>("autoencoder.latent_channels");
  c.width = cfg.get<int>("autoencoder.width");
  c.validate();
  return c;
}

NoiseSchedule noise_schedule(const Config& cfg) {
  return linear_beta_schedule(cfg.get<int>("diffusion.steps"), cfg.get<double>("diffusion.beta_start"),
                              cfg.get<double>("diffusion.beta_end"));
}

nn::UNetConfig unet_config(const Config& cfg, View view, int frames, int context_dim) {
  const auto ae = autoencoder_config(cfg);
  const int size = input_size(cfg, view);
  if (size % ae.downsample != 0) throw ConfigError("input size is not divisible by autoencoder.downsample");
  nn::UNetConfig u;
  u.latent_channels = ae.latent_channels;
  u.latent_size = size / ae.downsample;
  u.frames = frames;
  u.width = cfg.get<int>("diffusion.width");
  u.heads = cfg.get<int>("diffusion.heads");
  u.context_dim = context_dim;
  u.global_condition = cfg.get<bool>("diffusion.global_condition");
  u.validate();
  return u;
}

downstream::TaskSpec task_spec(const Config& cfg) {
  downstream::TaskSpec t;
  t.kind = downstream::task_kind_from_string(cfg.get<std::string>("finetune.task"));
  t.phenotypes = cfg.get<std::vector<int>>("finetune.phenotypes");
  t.covariates = cfg.get<std::vector<std::string>>("finetune.covariates");
  t.fraction = cfg.get<double>("finetune.fraction");
  t.balance = cfg.get<std::string>("finetune.balance");
  t.validate(cfg.get<int>("cohort.generator.phenotypes"));
  return t;
}

downstream::TrainConfig finetune_train_config(const Config& cfg, std::uint64_t seed) {
  downstream::TrainConfig t;
  t.epochs = cfg.get<int>("finetune.epochs");
  t.warmup_epochs = cfg.get<double>("finetune.warmup_epochs");
  t.batch_size = cfg.get<int>("finetune.batch_size");
  t.lr = cfg.get<double>("finetune.lr");
  t.weight_decay = cfg.get<double>("finetune.weight_decay");
  t.patience = cfg.get<int>("finetune.patience");
  t.film_hidden = cfg.get<int>("finetune.film_hidden");
  t.augment = cfg.get<bool>("finetune.augment");
  const auto init = cfg.get<std::string>("finetune.init");
  if (init != "pretrained" && init != "scratch") throw ConfigError("finetune.init must be pretrained|scratch");
  t.pretrained = init == "pretrained";
  t.policy = ecg_policy(cfg);
  t.seed = derive_seed(seed, "finetune");
  if (t.epochs < 1 || t.batch_size < 1 || t.patience < 1) throw ConfigError("finetune epochs, batch size and patience must be >= 1");
  return t;
}

std::string finetune_name(const Config& cfg) {
  const auto n = cfg.get<std::string>("finetune.name");
  if (!n.empty()) return n;
  return cfg.get<std::string>("finetune.task") + "_" + cfg.get<std::string>("finetune.init");
}

ssl::SslModel load_ssl(const fs::path& stage_dir) {
  const auto ck = load_checkpoint(stage_dir / "ssl.ckpt");
  if (ck.kind != "ssl") throw FormatError("expected an ssl checkpoint, found '" + ck.kind + "'");
  ssl::SslModel m(ssl::ssl_from_json(ck.meta.at("config")));
  load_module(*m, ck, "model/");
  m->eval();
  return m;
}

align::AlignModel load_align(const fs::path& stage_dir) {
  const auto ck = load_checkpoint(stage_dir / "align.ckpt");
  if (ck.kind != "align") throw FormatError("expected an align checkpoint, found '" + ck.kind + "'");
  const auto& dims = ck.meta.at("cmr_dims");
  align::AlignModel m(align::align_from_json(ck.meta.at("config")), dims.at("la").get<int64_t>(),
                      dims.at("sa").get<int64_t>());
  load_module(*m, ck, "model/");
  m->eval();
  return m;
}

DiffusionBundle load_diffusion(const Checkpoint& ckpt, const nn::UNetConfig& expected) {
  if (ckpt.kind != "diffusion") throw FormatError("expected a diffusion checkpoint, found '" + ckpt.kind + "'");
  DiffusionBundle b;
  b.view = view_arg(ckpt.meta.at("view").get<std::string>());
  b.unet = nn::CondUNet(expected);
  load_module(*b.unet, ckpt, "unet/");
  b.ae = nn::LatentAutoencoder(ae_from_json(ckpt.meta.at("autoencoder")));
  load_module(*b.ae, ckpt, "ae/");
  b.encoder = nn::EcgVit(align::vit_from_json(ckpt.meta.at("encoder")));
  load_module(*b.encoder, ckpt, "cond/");
  const auto& s = ckpt.meta.at("schedule");
  b.schedule = linear_beta_schedule(s.at("steps"), s.at("beta_start"), s.at("beta_end"));
  for (auto* m : std::initializer_list<torch::nn::Module*>{b.unet.get(), b.ae.get(), b.encoder.get()}) {
    m->eval();
    for (auto& p : m->parameters()) p.set_requires_grad(false);
  }
  return b;
}

FinetuneBundle load_finetune(const fs::path& stage_dir, const cohort::CovariateStats& stats) {
  const auto ck = load_checkpoint(stage_dir / "finetune.ckpt");
  if (ck.kind != "finetune") throw FormatError("expected a finetune checkpoint, found '" + ck.kind + "'");
  FinetuneBundle b;
  b.meta = ck.meta;
  b.context.task = downstream::task_from_json(ck.meta.at("task"));
  b.context.stats = stats;
  b.context.scaler.mean = ck.meta.at("scaler").at("mean").get<std::vector<double>>();
  b.context.scaler.stddev = ck.meta.at("scaler").at("stddev").get<std::vector<double>>();
  b.model = downstream::DownstreamModel(align::vit_from_json(ck.meta.at("encoder")), b.context.task,
                                        ck.meta.at("film_hidden").get<int>());
  load_module(*b.model, ck, "model/");
  b.model->eval();
  return b;
}

double wall_readout(const CmrClip& model_clip) {
  CmrClip unit = model_clip;
  for (auto& v : unit.pixels) v = v * 0.5f + 0.5f;
  double sum = 0.0;
  for (int t = 0; t < unit.frames; ++t) sum += cohort::bright_wall_area(unit, t);
  return sum / std::max(1, unit.frames);
}

namespace {

double se_from_ci(const stats::Interval& ci) { return (ci.hi - ci.lo) / (2.0 * stats::z_for_confidence(0.95)); }

void add_z_tests(stats::MetricsReport& report, const stats::MetricsReport& base, const std::string& skip) {
  for (const auto& m : report.metrics) {
    if (m.name == skip || !m.ci) continue;
    const auto* b = base.find(m.name);
    if (b == nullptr || !b->ci) continue;
    const double se_a = se_from_ci(*m.ci), se_b = se_from_ci(*b->ci);
    if (!(se_a > 0.0) || !(se_b > 0.0)) continue;
    const auto z = stats::two_sided_z_test(m.value, b->value, se_a, se_b);
    report.tests.push_back({m.name + "_vs_baseline", z.z, z.p, "z_test"});
  }
}

stats::MetricsReport multiclass_report(const std::string& name, const std::vector<std::vector<double>>& probs,
                                       const std::vector<int>& labels, std::size_t resamples, std::uint64_t seed) {
  stats::MetricsReport r;
  r.task_id = name;
  r.n = labels.size();
  const std::size_t k = probs.front().size();
  auto macro = [&](std::span<const std::size_t> idx) -> std::optional<double> {
    std::vector<std::vector<double>> p;
    std::vector<int> l;
    for (auto i : idx) {
      p.push_back(probs[i]);
      l.push_back(labels[i]);
    }
    try {
      return downstream::classification_auc(p, l, downstream::TaskKind::multiclass);
    } catch (const ConfigError&) {
      return std::nullopt;
    }
  };
  const auto all = iota_n(labels.size());
  const double auc = *macro(all);
  r.metrics.push_back({"auc_macro", auc, stats::bootstrap_ci(macro, labels.size(), resamples, seed).ci, "bootstrap"});
  const auto ovr = stats::one_vs_rest(labels, static_cast<int>(k));
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> scores;
    for (const auto& p : probs) scores.push_back(p[c]);
    const auto pos = std::count(ovr[c].begin(), ovr[c].end(), 1);
    if (pos == 0 || pos == static_cast<long>(labels.size())) continue;
    auto stat = [&](std::span<const std::size_t> idx) -> std::optional<double> {
      std::vector<double> s;
      std::vector<int> l;
      for (auto i : idx) {
        s.push_back(scores[i]);
        l.push_back(ovr[c][i]);
      }
      const auto p = std::count(l.begin(), l.end(), 1);
      if (p == 0 || p == static_cast<long>(l.size())) return std::nullopt;
      return stats::roc_auc(s, l);
    };
    r.metrics.push_back({"auc_class_" + std::to_string(c), stats::roc_auc(scores, ovr[c]),
                         stats::bootstrap_ci(stat, labels.size(), resamples, derive_seed(seed, c + 1)).ci,
                         "bootstrap"});
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto arg = std::max_element(probs[i].begin(), probs[i].end()) - probs[i].begin();
    correct += arg == labels[i] ? 1 : 0;
  }
  r.metrics.push_back({"accuracy", static_cast<double>(correct) / static_cast<double>(labels.size()),
                       stats::wilson_interval(correct, labels.size()), "wilson"});
  return r;
}

}  // namespace

stats::MetricsReport evaluate_task(const std::string& name, FinetuneBundle& model, const SampleRefs& samples,
                                   FinetuneBundle* baseline, std::size_t resamples, double threshold,
                                   std::uint64_t seed) {
  const auto& task = model.context.task;
  if (baseline != nullptr && baseline->context.task.kind != task.kind) {
    throw ConfigError("baseline task kind differs from the evaluated task");
  }
  const auto out = downstream::predict(model.model, samples, model.context);
  std::vector<std::vector<double>> base_out;
  if (baseline != nullptr) base_out = downstream::predict(baseline->model, samples, baseline->context);
  std::vector<int> labels;
  for (const auto* s : samples) labels.push_back(downstream::class_of(*s, task));

  if (task.kind == downstream::TaskKind::binary) {
    auto scores = [](const std::vector<std::vector<double>>& o) {
      std::vector<double> s;
      for (const auto& row : o) s.push_back(row[1]);
      return s;
    };
    const auto sa = scores(out);
    auto report = stats::binary_report(name, sa, labels, threshold, resamples, seed);
    if (baseline != nullptr) {
      const auto sb = scores(base_out);
      const auto d = stats::delong_test(sa, sb, labels);
      report.tests.push_back({"auc_vs_baseline", d.z, d.p, "delong"});
      add_z_tests(report, stats::binary_report(name, sb, labels, threshold, resamples, seed), "auc");
    }
    return report;
  }
  if (task.kind == downstream::TaskKind::multiclass) {
    auto report = multiclass_report(name, out, labels, resamples, seed);
    if (baseline != nullptr) {
      const auto ovr = stats::one_vs_rest(labels, task.num_classes);
      for (int c = 0; c < task.num_classes; ++c) {
        const auto pos = std::count(ovr[c].begin(), ovr[c].end(), 1);
        if (pos == 0 || pos == static_cast<long>(labels.size())) continue;
        std::vector<double> a, b;
        for (std::size_t i = 0; i < out.size(); ++i) {
          a.push_back(out[i][c]);
          b.push_back(base_out[i][c]);
        }
        const auto d = stats::delong_test(a, b, ovr[c]);
        report.tests.push_back({"auc_class_" + std::to_string(c) + "_vs_baseline", d.z, d.p, "delong"});
      }
      add_z_tests(report, multiclass_report(name, base_out, labels, resamples, seed), "");
    }
    return report;
  }
  const std::size_t targets = task.phenotypes.size();
  const auto all_names = cohort::phenotype_names(static_cast<int>(samples.front()->phenotypes.size()));
  std::vector<std::string> names;
  for (int p : task.phenotypes) names.push_back(all_names.at(static_cast<std::size_t>(p)));
  std::vector<double> pred, truth, base_pred;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = 0; j < targets; ++j) {
      pred.push_back(out[i][j]);
      truth.push_back(samples[i]->phenotypes.at(static_cast<std::size_t>(task.phenotypes[j])));
      if (baseline != nullptr) base_pred.push_back(base_out[i][j]);
    }
  }
  auto report = stats::regression_report(name, pred, truth, targets, names, resamples, seed);
  if (baseline != nullptr) {
    add_z_tests(report, stats::regression_report(name, base_pred, truth, targets, names, resamples, seed), "");
  }
  return report;
}

}  // namespace ecgcmr::pipeline
