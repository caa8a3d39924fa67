#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgcmr/alignment.hpp"
#include "ecgcmr/config.hpp"
#include "ecgcmr/dataset.hpp"
#include "ecgcmr/diffusion.hpp"
#include "ecgcmr/downstream.hpp"
#include "ecgcmr/module_io.hpp"
#include "ecgcmr/ssl.hpp"
#include "ecgcmr/stats.hpp"

namespace ecgcmr::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kManifestName = "run_manifest.json";

/// Subcommands in stage order.
const std::vector<std::string>& commands();

struct Options {
  Config config;
  fs::path out;
  bool force = false;
};

struct StageResult {
  fs::path dir;
  json manifest;
};

/// Run one command. Every command writes a fresh stage directory under
/// `out` holding its artifacts and run_manifest.json; the directory only
/// appears once the command has succeeded.
StageResult run(const std::string& command, const Options& opts);

/// Stage directory a command writes, e.g. "diffusion_sa" or "finetune_binary_pretrained".
std::string stage_name(const std::string& command, const Config& cfg);

/// Recompute the output hashes listed in a manifest; throws FormatError on mismatch.
json verify_manifest(const fs::path& stage_dir);
json read_manifest(const fs::path& stage_dir);

/// Default output root: $ECGCMR_OUT or "./runs".
fs::path default_out();

// Typed views of the configuration.
nn::SwinStyleConfig swin_config(const Config& cfg, int image_size, int frames);
ssl::SslConfig ssl_config(const Config& cfg, int frames);
ssl::TrainConfig ssl_train_config(const Config& cfg);
nn::EcgVitConfig vit_config(const Config& cfg, int length);
align::AlignConfig align_config(const Config& cfg, int length);
align::TrainConfig align_train_config(const Config& cfg);
nn::AutoencoderConfig autoencoder_config(const Config& cfg);
NoiseSchedule noise_schedule(const Config& cfg);
nn::UNetConfig unet_config(const Config& cfg, View view, int frames, int context_dim);
downstream::TaskSpec task_spec(const Config& cfg);
downstream::TrainConfig finetune_train_config(const Config& cfg, std::uint64_t seed);
std::string finetune_name(const Config& cfg);
int input_size(const Config& cfg, View view);
View view_arg(const std::string& s);

// Checkpoint loaders.
ssl::SslModel load_ssl(const fs::path& stage_dir);
align::AlignModel load_align(const fs::path& stage_dir);

struct DiffusionBundle {
  nn::CondUNet unet{nullptr};
  nn::LatentAutoencoder ae{nullptr};
  nn::EcgVit encoder{nullptr};
  NoiseSchedule schedule;
  View view = View::short_axis;
};

/// Builds the networks for `expected` geometry and loads the checkpoint into
/// them; a checkpoint of the other view fails with the mismatched blocks.
DiffusionBundle load_diffusion(const Checkpoint& ckpt, const nn::UNetConfig& expected);

struct FinetuneBundle {
  downstream::DownstreamModel model{nullptr};
  downstream::DataContext context;
  json meta;
};

FinetuneBundle load_finetune(const fs::path& stage_dir, const cohort::CovariateStats& stats);

/// Mean bright-wall area over frames of a model-space ([-1, 1]) clip.
double wall_readout(const CmrClip& model_clip);

/// Task metrics on a split; `baseline` adds paired tests against another model.
stats::MetricsReport evaluate_task(const std::string& name, FinetuneBundle& model, const SampleRefs& samples,
                                   FinetuneBundle* baseline, std::size_t resamples, double threshold,
                                   std::uint64_t seed);

}  // namespace ecgcmr::pipeline
