#include "ecgcmr/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "ecgcmr/error.hpp"
#include "ecgcmr/log.hpp"
#include "ecgcmr/module_io.hpp"
#include "ecgcmr/random.hpp"
#include "ecgcmr/stats.hpp"

namespace ecgcmr::downstream {

namespace F = torch::nn::functional;
using nlohmann::json;

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::binary: return "binary";
    case TaskKind::multiclass: return "multiclass";
    case TaskKind::regression: return "regression";
  }
  return "?";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "binary") return TaskKind::binary;
  if (s == "multiclass") return TaskKind::multiclass;
  if (s == "regression") return TaskKind::regression;
  throw ConfigError("unknown task kind '" + s + "' (binary|multiclass|regression)");
}

int TaskSpec::outputs() const {
  switch (kind) {
    case TaskKind::binary: return 1;
    case TaskKind::multiclass: return num_classes;
    case TaskKind::regression: return static_cast<int>(phenotypes.size());
  }
  return 0;
}

void TaskSpec::validate(int phenotype_count) const {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("label fraction must lie in (0, 1]");
  if (balance != "none" && balance != "undersample") throw ConfigError("balance must be none|undersample");
  if (kind == TaskKind::regression) {
    if (phenotypes.empty()) throw ConfigError("regression task needs at least one phenotype index");
    for (int p : phenotypes) {
      if (p < 0 || p >= phenotype_count) {
        throw ConfigError("phenotype index " + std::to_string(p) + " outside [0, " + std::to_string(phenotype_count) + ")");
      }
    }
    if (balance != "none") throw ConfigError("class balancing applies to classification tasks only");
  }
  if (kind == TaskKind::multiclass && num_classes < 2) throw ConfigError("multiclass task needs >= 2 classes");
}

json to_json(const TaskSpec& t) {
  return {{"kind", to_string(t.kind)}, {"phenotypes", t.phenotypes}, {"covariates", t.covariates},
          {"fraction", t.fraction},    {"balance", t.balance},       {"num_classes", t.num_classes}};
}

TaskSpec task_from_json(const json& j) {
  TaskSpec t;
  t.kind = task_kind_from_string(j.at("kind"));
  t.phenotypes = j.at("phenotypes").get<std::vector<int>>();
  t.covariates = j.at("covariates").get<std::vector<std::string>>();
  t.fraction = j.at("fraction");
  t.balance = j.at("balance");
  t.num_classes = j.at("num_classes");
  return t;
}

int class_of(const cohort::PairedSample& s, const TaskSpec& task) {
  const int c = static_cast<int>(s.label);
  return task.kind == TaskKind::binary ? (c != 0 ? 1 : 0) : c;
}

FilmImpl::FilmImpl(int64_t covariates, int64_t features, int64_t hidden) : features_(features) {
  fc1_ = register_module("fc1", torch::nn::Linear(covariates, hidden));
  fc2_ = register_module("fc2", torch::nn::Linear(hidden, 2 * features));
  torch::NoGradGuard ng;
  fc2_->weight.zero_();
  fc2_->bias.zero_();
}

torch::Tensor FilmImpl::forward(const torch::Tensor& features, const torch::Tensor& covariates) {
  auto gb = fc2_(F::silu(fc1_(covariates)));
  auto gamma = gb.narrow(-1, 0, features_);
  auto beta = gb.narrow(-1, features_, features_);
  return features * (1.0 + gamma) + beta;
}

DownstreamModelImpl::DownstreamModelImpl(nn::EcgVitConfig vit, TaskSpec task, int film_hidden)
    : task_(std::move(task)) {
  vit_ = register_module("vit", nn::EcgVit(vit));
  if (!task_.covariates.empty()) {
    film_ = register_module("film", Film(static_cast<int64_t>(task_.covariates.size()), vit.dim, film_hidden));
  }
  head_ = register_module("head", torch::nn::Linear(vit.dim, task_.outputs()));
}

DownstreamOutput DownstreamModelImpl::forward(const torch::Tensor& ecg, const torch::Tensor& covariates,
                                              bool keep_cam) {
  auto out = vit_->forward(ecg, keep_cam);
  auto features = out.cls;
  if (film_) features = film_->forward(features, covariates);
  return {head_(features), out.cam_activation};
}

torch::Tensor task_loss(TaskKind kind, const torch::Tensor& logits, const torch::Tensor& targets) {
  switch (kind) {
    case TaskKind::binary:
      return F::binary_cross_entropy_with_logits(logits.squeeze(-1), targets.to(logits.scalar_type()));
    case TaskKind::multiclass:
      return F::cross_entropy(logits, targets.to(torch::kLong));
    case TaskKind::regression:
      return F::mse_loss(logits, targets.to(logits.scalar_type()));
  }
  throw ConfigError("unknown task kind");
}

json to_json(const std::vector<EpochRecord>& curve) {
  json j = json::array();
  for (const auto& e : curve) {
    json r = {{"epoch", e.epoch}, {"lr", e.lr}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}};
    r["val_auc"] = e.val_auc ? json(*e.val_auc) : json(nullptr);
    j.push_back(r);
  }
  return j;
}

Batch make_batch(const SampleRefs& samples, const std::vector<std::size_t>& idx, const DataContext& ctx,
                 ecg::Mode mode, int epoch, std::uint64_t seed, const ecg::AugmentPolicy& policy) {
  std::vector<torch::Tensor> ecgs, covs;
  const auto& task = ctx.task;
  const auto k = static_cast<int64_t>(idx.size());
  torch::Tensor targets = task.kind == TaskKind::regression
                              ? torch::empty({k, static_cast<int64_t>(task.phenotypes.size())}, torch::kFloat32)
                              : torch::empty({k}, torch::kLong);
  for (int64_t b = 0; b < k; ++b) {
    const auto* s = samples[idx[static_cast<std::size_t>(b)]];
    ecgs.push_back(ecg_to_tensor(ecg::prepare_for_model(s->ecg, mode, augment_seed(seed, epoch, s->id), policy)));
    covs.push_back(task.covariates.empty() ? torch::zeros({0}) : covariate_tensor(s->covariates, task.covariates, ctx.stats));
    if (task.kind == TaskKind::regression) {
      for (std::size_t j = 0; j < task.phenotypes.size(); ++j) {
        const double v = s->phenotypes.at(static_cast<std::size_t>(task.phenotypes[j]));
        targets[b][static_cast<int64_t>(j)] = static_cast<float>((v - ctx.scaler.mean[j]) / ctx.scaler.stddev[j]);
      }
    } else {
      targets[b] = class_of(*s, task);
    }
  }
  return {torch::stack(ecgs), torch::stack(covs), targets};
}

SampleRefs training_subset(const SampleRefs& train, const TaskSpec& task, std::uint64_t seed) {
  std::vector<int> ids;
  ids.reserve(train.size());
  for (const auto* s : train) ids.push_back(s->id);
  const auto kept = stats::nested_subset(ids, task.fraction, seed);
  const std::set<int> keep(kept.begin(), kept.end());
  SampleRefs out;
  for (const auto* s : train) {
    if (keep.count(s->id)) out.push_back(s);
  }
  if (task.balance == "undersample" && task.kind != TaskKind::regression) {
    std::map<int, std::vector<const cohort::PairedSample*>> by_class;
    for (const auto* s : out) by_class[class_of(*s, task)].push_back(s);
    std::size_t smallest = std::numeric_limits<std::size_t>::max();
    for (const auto& [c, v] : by_class) smallest = std::min(smallest, v.size());
    SampleRefs balanced;
    Rng rng(derive_seed(seed, "balance"));
    for (auto& [c, v] : by_class) {
      rng.shuffle(v);
      balanced.insert(balanced.end(), v.begin(), v.begin() + static_cast<std::ptrdiff_t>(smallest));
    }
    std::sort(balanced.begin(), balanced.end(), [](auto* a, auto* b) { return a->id < b->id; });
    out = std::move(balanced);
  }
  return out;
}

namespace {

TargetScaler fit_scaler(const SampleRefs& train, const TaskSpec& task) {
  TargetScaler sc;
  for (int p : task.phenotypes) {
    double sum = 0.0, sq = 0.0;
    for (const auto* s : train) sum += s->phenotypes.at(static_cast<std::size_t>(p));
    const double mean = sum / static_cast<double>(train.size());
    for (const auto* s : train) sq += std::pow(s->phenotypes.at(static_cast<std::size_t>(p)) - mean, 2);
    const double sd = train.size() > 1 ? std::sqrt(sq / static_cast<double>(train.size() - 1)) : 0.0;
    sc.mean.push_back(mean);
    sc.stddev.push_back(sd > 0.0 ? sd : 1.0);
  }
  return sc;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

std::vector<std::vector<double>> to_outputs(const torch::Tensor& logits, const DataContext& ctx) {
  auto l = logits.detach().to(torch::kFloat64).contiguous();
  std::vector<std::vector<double>> out(static_cast<std::size_t>(l.size(0)));
  torch::Tensor v;
  switch (ctx.task.kind) {
    case TaskKind::binary: {
      auto p = torch::sigmoid(l.squeeze(-1));
      v = torch::stack({1.0 - p, p}, 1);
      break;
    }
    case TaskKind::multiclass: v = torch::softmax(l, -1); break;
    case TaskKind::regression: {
      auto mean = torch::tensor(ctx.scaler.mean, torch::kFloat64);
      auto sd = torch::tensor(ctx.scaler.stddev, torch::kFloat64);
      v = l * sd + mean;
      break;
    }
  }
  v = v.contiguous();
  const auto cols = v.size(1);
  for (int64_t i = 0; i < v.size(0); ++i) {
    const double* row = v.data_ptr<double>() + i * cols;
    out[static_cast<std::size_t>(i)].assign(row, row + cols);
  }
  return out;
}

}  // namespace

double classification_auc(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels,
                          TaskKind kind) {
  if (kind == TaskKind::regression) throw ConfigError("AUC needs a classification task");
  if (kind == TaskKind::binary) {
    std::vector<double> scores;
    for (const auto& p : probs) scores.push_back(p.at(1));
    return stats::roc_auc(scores, labels);
  }
  const int k = static_cast<int>(probs.front().size());
  const auto ovr = stats::one_vs_rest(labels, k);
  double sum = 0.0;
  int used = 0;
  for (int c = 0; c < k; ++c) {
    const auto pos = std::count(ovr[c].begin(), ovr[c].end(), 1);
    if (pos == 0 || pos == static_cast<long>(labels.size())) continue;
    std::vector<double> scores;
    for (const auto& p : probs) scores.push_back(p.at(static_cast<std::size_t>(c)));
    sum += stats::roc_auc(scores, ovr[c]);
    ++used;
  }
  if (used == 0) throw ConfigError("AUC undefined: validation set has a single class");
  return sum / used;
}

std::vector<std::vector<double>> predict(DownstreamModel& model, const SampleRefs& samples, const DataContext& ctx) {
  if (model->task().kind != ctx.task.kind || model->task().outputs() != ctx.task.outputs()) {
    throw ConfigError("checkpoint task does not match the requested task");
  }
  torch::NoGradGuard ng;
  model->eval();
  std::vector<std::vector<double>> out;
  const auto idx = all_indices(samples.size());
  for (std::size_t i = 0; i < samples.size(); i += 64) {
    std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(i),
                                   idx.begin() + static_cast<std::ptrdiff_t>(std::min(samples.size(), i + 64)));
    auto b = make_batch(samples, chunk, ctx, ecg::Mode::eval, 0, 0, {});
    auto part = to_outputs(model->forward(b.ecg, b.covariates).logits, ctx);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

FinetuneResult finetune(const SampleRefs& train, const SampleRefs& val, const TaskSpec& task,
                        const cohort::CovariateStats& stats, const nn::EcgVitConfig& vit, nn::EcgVit* pretrained,
                        const TrainConfig& tc) {
  if (train.empty() || val.empty()) throw MissingPrerequisite("fine-tuning needs non-empty train and val splits");
  if (tc.pretrained && pretrained == nullptr) throw MissingPrerequisite("pretrained init requested without an aligned ECG encoder");
  const int phenotype_count = static_cast<int>(train.front()->phenotypes.size());
  task.validate(phenotype_count);

  FinetuneResult r;
  const auto subset = training_subset(train, task, tc.seed);
  if (subset.empty()) throw ConfigError("label fraction leaves no training samples");
  for (const auto* s : subset) r.train_ids.push_back(s->id);
  DataContext ctx{task, stats, {}};
  if (task.kind == TaskKind::regression) ctx.scaler = fit_scaler(subset, task);
  r.scaler = ctx.scaler;

  torch::manual_seed(derive_seed(tc.seed, "finetune_init"));
  r.model = DownstreamModel(vit, task, tc.film_hidden);
  if (tc.pretrained) {
    Checkpoint tmp;
    append_module(tmp, **pretrained, "");
    load_module(*r.model->encoder(), tmp, "");
  }
  torch::optim::AdamW opt(r.model->parameters(), torch::optim::AdamWOptions(tc.lr).weight_decay(tc.weight_decay));
  const LrSchedule sched{LrSchedule::Kind::warmup_cosine, tc.lr, tc.warmup_epochs, static_cast<double>(tc.epochs)};
  sched.validate();

  const auto val_idx = all_indices(val.size());
  const auto val_batch = make_batch(val, val_idx, ctx, ecg::Mode::eval, 0, tc.seed, tc.policy);
  std::vector<int> val_labels;
  if (task.kind != TaskKind::regression) {
    for (const auto* s : val) val_labels.push_back(class_of(*s, task));
  }
  const bool classify = task.kind != TaskKind::regression;
  r.metric_name = classify ? "val_auroc" : "val_loss";
  r.best_metric = classify ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
  const auto mode = tc.augment ? ecg::Mode::train : ecg::Mode::eval;
  Checkpoint best;
  int since_best = 0;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    r.model->train();
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = sched.at(epoch);
    const auto batches = epoch_batches(subset.size(), static_cast<std::size_t>(tc.batch_size), tc.seed, epoch);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      set_learning_rate(opt, sched.at(epoch + static_cast<double>(bi) / static_cast<double>(batches.size())));
      auto b = make_batch(subset, batches[bi], ctx, mode, epoch, tc.seed, tc.policy);
      auto loss = task_loss(task.kind, r.model->forward(b.ecg, b.covariates).logits, b.targets);
      require_finite(loss, "fine-tuning loss");
      opt.zero_grad();
      loss.backward();
      opt.step();
      rec.train_loss += loss.item<double>() * static_cast<double>(batches[bi].size()) / static_cast<double>(subset.size());
    }
    {
      torch::NoGradGuard ng;
      r.model->eval();
      auto logits = r.model->forward(val_batch.ecg, val_batch.covariates).logits;
      rec.val_loss = task_loss(task.kind, logits, val_batch.targets).item<double>();
      if (classify) rec.val_auc = classification_auc(to_outputs(logits, ctx), val_labels, task.kind);
    }
    r.curve.push_back(rec);
    const double metric = classify ? *rec.val_auc : rec.val_loss;
    const bool improved = classify ? metric > r.best_metric : metric < r.best_metric;
    log::info("finetune epoch ", rec.epoch, " lr ", rec.lr, " train ", rec.train_loss, " val_loss ", rec.val_loss,
              classify ? " val_auc " : "", classify ? std::to_string(*rec.val_auc) : "");
    if (improved) {
      r.best_metric = metric;
      r.best_epoch = rec.epoch;
      best = Checkpoint{};
      append_module(best, *r.model, "");
      since_best = 0;
    } else if (++since_best >= tc.patience) {
      log::info("early stop at epoch ", rec.epoch);
      break;
    }
  }
  load_module(*r.model, best, "");
  r.model->eval();
  return r;
}

std::vector<float> grad_cam(DownstreamModel& model, const torch::Tensor& ecg, const torch::Tensor& covariates,
                            int target_class) {
  const auto& task = model->task();
  if (task.kind == TaskKind::regression) throw ConfigError("Grad-CAM needs a classification checkpoint");
  if (target_class < 0 || target_class >= std::max(2, task.outputs())) throw ConfigError("target class out of range");
  model->eval();
  const auto& vc = model->encoder()->config();
  auto x = ecg.dim() == 2 ? ecg.unsqueeze(0) : ecg;
  auto c = covariates.dim() == 1 ? covariates.unsqueeze(0) : covariates;
  auto out = model->forward(x, c, true);
  torch::Tensor target;
  if (task.kind == TaskKind::binary) {
    target = target_class == 1 ? out.logits[0][0] : -out.logits[0][0];
  } else {
    target = out.logits[0][target_class];
  }
  auto grad = torch::autograd::grad({target}, {out.cam_activation}, {}, false, false, true)[0];
  const auto length = static_cast<int64_t>(vc.length);
  const int64_t rows = vc.leads / vc.patch_height, cols = vc.length / vc.patch_width;
  if (!grad.defined()) return std::vector<float>(static_cast<std::size_t>(vc.leads * length), 0.0f);
  auto act = out.cam_activation.detach()[0].narrow(0, 1, rows * cols);
  auto g = grad[0].narrow(0, 1, rows * cols);
  auto weights = g.mean(0);
  auto cam = torch::relu((act * weights).sum(-1)).view({rows, 1, cols});
  auto up = F::interpolate(cam, F::InterpolateFuncOptions()
                                    .size(std::vector<int64_t>{length})
                                    .mode(torch::kLinear)
                                    .align_corners(false));
  auto grid = up.view({rows, length}).repeat_interleave(vc.patch_height, 0);
  const double peak = grid.max().item<double>();
  if (peak > 0.0) grid = grid / peak;
  else grid = torch::zeros_like(grid);
  grid = grid.clamp(0.0, 1.0).to(torch::kFloat32).contiguous();
  return std::vector<float>(grid.data_ptr<float>(), grid.data_ptr<float>() + grid.numel());
}

std::pair<double, double> qrs_saliency_share(const std::vector<float>& heatmap, std::size_t length,
                                             const std::vector<std::pair<int, int>>& windows) {
  if (length == 0 || heatmap.size() % length != 0) throw ConfigError("heatmap size is not a multiple of the length");
  std::vector<char> inside(length, 0);
  for (auto [lo, hi] : windows) {
    for (int i = std::max(lo, 0); i < std::min<int>(hi, static_cast<int>(length)); ++i) inside[static_cast<std::size_t>(i)] = 1;
  }
  const double covered = static_cast<double>(std::count(inside.begin(), inside.end(), 1)) / static_cast<double>(length);
  std::vector<float> sorted = heatmap;
  const std::size_t top = std::max<std::size_t>(1, sorted.size() / 10);
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() - top), sorted.end());
  const float cut = sorted[sorted.size() - top];
  std::size_t hits = 0, total = 0;
  for (std::size_t i = 0; i < heatmap.size(); ++i) {
    if (heatmap[i] >= cut && heatmap[i] > 0.0f) {
      ++total;
      hits += inside[i % length];
    }
  }
  return {total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0, covered};
}

}  // namespace ecgcmr::downstream
