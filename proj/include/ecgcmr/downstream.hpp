#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "ecgcmr/batching.hpp"
#include "ecgcmr/ecg.hpp"
#include "ecgcmr/nn/ecg_vit.hpp"
#include "ecgcmr/schedule.hpp"

namespace ecgcmr::downstream {

enum class TaskKind { binary, multiclass, regression };

std::string to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string& s);

struct TaskSpec {
  TaskKind kind = TaskKind::binary;
  std::vector<int> phenotypes;          // regression targets
  std::vector<std::string> covariates;  // empty disables modulation
  double fraction = 1.0;
  std::string balance = "none";  // "none" | "undersample"
  int num_classes = 4;           // multiclass

  int outputs() const;
  /// Throws ConfigError; `phenotype_count` bounds the regression indices.
  void validate(int phenotype_count) const;
};

nlohmann::json to_json(const TaskSpec& t);
TaskSpec task_from_json(const nlohmann::json& j);

/// Class index of a sample for the task (binary: any disease).
int class_of(const cohort::PairedSample& s, const TaskSpec& task);

/// out = features * (1 + gamma(cov)) + beta(cov), from a two-layer map whose
/// last layer starts at zero.
class FilmImpl : public torch::nn::Module {
 public:
  FilmImpl(int64_t covariates, int64_t features, int64_t hidden);
  torch::Tensor forward(const torch::Tensor& features, const torch::Tensor& covariates);

  torch::nn::Linear& last() { return fc2_; }

 private:
  int64_t features_;
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(Film);

struct DownstreamOutput {
  torch::Tensor logits;  // [B, outputs]
  torch::Tensor cam_activation;
};

class DownstreamModelImpl : public torch::nn::Module {
 public:
  DownstreamModelImpl(nn::EcgVitConfig vit, TaskSpec task, int film_hidden);

  DownstreamOutput forward(const torch::Tensor& ecg, const torch::Tensor& covariates, bool keep_cam = false);

  nn::EcgVit& encoder() { return vit_; }
  Film& film() { return film_; }
  const TaskSpec& task() const { return task_; }

 private:
  TaskSpec task_;
  nn::EcgVit vit_{nullptr};
  Film film_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(DownstreamModel);

/// Task loss of logits against targets: BCE on the single binary logit,
/// cross-entropy over classes, or MSE on standardized phenotypes.
torch::Tensor task_loss(TaskKind kind, const torch::Tensor& logits, const torch::Tensor& targets);

struct TrainConfig {
  int epochs = 30;
  double warmup_epochs = 3.0;
  int batch_size = 16;
  double lr = 3e-4;
  double weight_decay = 0.05;
  int patience = 20;
  int film_hidden = 32;
  bool augment = true;
  bool pretrained = true;
  ecg::AugmentPolicy policy;
  std::uint64_t seed = 0;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::optional<double> val_auc;
};

nlohmann::json to_json(const std::vector<EpochRecord>& curve);

/// Per-target standardization of regression targets.
struct TargetScaler {
  std::vector<double> mean;
  std::vector<double> stddev;
};

struct Batch {
  torch::Tensor ecg;
  torch::Tensor covariates;
  torch::Tensor targets;
};

struct DataContext {
  TaskSpec task;
  cohort::CovariateStats stats;
  TargetScaler scaler;
};

Batch make_batch(const SampleRefs& samples, const std::vector<std::size_t>& idx, const DataContext& ctx,
                 ecg::Mode mode, int epoch, std::uint64_t seed, const ecg::AugmentPolicy& policy);

/// Training ids after the label fraction (nested across fractions) and the
/// class-balance policy.
SampleRefs training_subset(const SampleRefs& train, const TaskSpec& task, std::uint64_t seed);

struct FinetuneResult {
  DownstreamModel model{nullptr};  // weights of the selected epoch
  std::vector<EpochRecord> curve;
  int best_epoch = 0;
  double best_metric = 0.0;  // val AUROC, or val loss for regression
  std::string metric_name;
  TargetScaler scaler;
  std::vector<int> train_ids;
};

/// `pretrained` is the alignment-stage ECG encoder; ignored for scratch init.
FinetuneResult finetune(const SampleRefs& train, const SampleRefs& val, const TaskSpec& task,
                        const cohort::CovariateStats& stats, const nn::EcgVitConfig& vit, nn::EcgVit* pretrained,
                        const TrainConfig& tc);

/// Binary: [1 - p, p]; multiclass: softmax; regression: phenotype estimates.
std::vector<std::vector<double>> predict(DownstreamModel& model, const SampleRefs& samples, const DataContext& ctx);

/// Mean one-vs-rest AUC for multiclass, plain AUC for binary.
double classification_auc(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels, TaskKind kind);

/// Grad-CAM over the ECG tokens: a [12, L] map in [0, 1], max 1 unless all zero.
std::vector<float> grad_cam(DownstreamModel& model, const torch::Tensor& ecg, const torch::Tensor& covariates,
                            int target_class);

/// Fraction of the top-decile saliency samples that fall inside QRS windows,
/// and the fraction of the record the windows cover.
std::pair<double, double> qrs_saliency_share(const std::vector<float>& heatmap, std::size_t length,
                                             const std::vector<std::pair<int, int>>& windows);

}  // namespace ecgcmr::downstream
