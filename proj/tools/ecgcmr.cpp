#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ecgcmr/error.hpp"
#include "ecgcmr/log.hpp"
#include "ecgcmr/pipeline.hpp"

namespace {

using ecgcmr::Config;
using ecgcmr::ExitCode;
namespace pl = ecgcmr::pipeline;

struct Args {
  std::vector<std::string> configs;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  std::string view;
  std::optional<int> ecg_id;
  std::optional<int> steps;
  std::optional<double> eta;
  std::string task;
  std::string baseline;
  std::string modality;
  std::string generated;
};

void add_common(CLI::App* sub, Args& a) {
  sub->add_option("--config", a.configs, "JSON config file (repeatable, applied in order)")->check(CLI::ExistingFile);
  sub->add_option("--set", a.sets, "override, e.g. --set ssl.epochs=5 (repeatable)");
  sub->add_option("--seed", a.seed, "master seed");
  sub->add_option("--out", a.out, "output root (default $ECGCMR_OUT or ./runs)");
  sub->add_flag("--force", a.force, "replace an existing stage directory");
}

Config resolve(const std::string& command, const Args& a) {
  Config cfg;
  for (const auto& f : a.configs) cfg.merge_file(f);
  for (const auto& s : a.sets) cfg.set(s);
  if (a.seed) cfg.set("seed", *a.seed);
  if (!a.view.empty()) {
    cfg.set(command == "generate" ? "generate.view" : "diffusion.view", a.view);
  }
  if (a.ecg_id) cfg.set("generate.ids", nlohmann::json::array({*a.ecg_id}));
  if (a.steps) cfg.set("generate.steps", *a.steps);
  if (a.eta) cfg.set("generate.eta", *a.eta);
  if (!a.modality.empty()) cfg.set("preprocess.modality", a.modality);
  if (!a.generated.empty()) cfg.set("evaluate.generated", a.generated);
  if (!a.baseline.empty()) cfg.set("evaluate.baseline", a.baseline);
  if (!a.task.empty()) {
    if (command == "finetune" || command == "label-efficiency") cfg.set("finetune.task", a.task);
    else if (command == "predict") cfg.set("predict.task", a.task);
    else if (command == "evaluate") cfg.set("evaluate.task", a.task);
    else if (command == "gradcam") cfg.set("gradcam.task", a.task);
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ECG/CMR cross-modal pipeline on a synthetic cohort"};
  app.require_subcommand(1);
  Args args;
  std::string verify_dir;

  const std::map<std::string, std::string> about = {
      {"synth", "generate the paired synthetic cohort"},
      {"preprocess", "denoise ECGs and crop CMR clips"},
      {"pretrain-cmr", "masked and contrastive pretraining of the CMR encoders"},
      {"pretrain-align", "contrastive ECG-to-CMR alignment"},
      {"train-diffusion", "train the ECG-conditioned latent video diffusion model"},
      {"generate", "sample CMR clips from ECGs with DDIM"},
      {"finetune", "fine-tune the ECG encoder on a downstream task"},
      {"predict", "write predictions of a fine-tuned model"},
      {"evaluate", "metrics with confidence intervals and paired tests"},
      {"gradcam", "saliency maps over ECG leads"},
      {"label-efficiency", "metric versus training fraction, pretrained and scratch"}};
  for (const auto& name : pl::commands()) {
    const auto it = about.find(name);
    auto* sub = app.add_subcommand(name, it == about.end() ? std::string{} : it->second);
    add_common(sub, args);
    if (name == "preprocess") sub->add_option("--modality", args.modality, "all|ecg|cmr");
    if (name == "train-diffusion" || name == "generate") sub->add_option("--view", args.view, "la|sa");
    if (name == "generate") {
      sub->add_option("--ecg", args.ecg_id, "condition on this sample id");
      sub->add_option("--steps", args.steps, "DDIM steps");
      sub->add_option("--eta", args.eta, "DDIM eta in [0,1]");
    }
    if (name == "finetune" || name == "label-efficiency") {
      sub->add_option("--task", args.task, "binary|multiclass|regression");
    }
    if (name == "predict" || name == "evaluate" || name == "gradcam") {
      sub->add_option("--task", args.task, "fine-tuned model name, e.g. binary_pretrained");
    }
    if (name == "evaluate") {
      sub->add_option("--baseline", args.baseline, "fine-tuned model to compare against");
      sub->add_option("--generated", args.generated, "also score generated clips of this view (la|sa)");
    }
  }
  auto* defaults = app.add_subcommand("print-defaults", "print the configuration schema with defaults");
  auto* verify = app.add_subcommand("verify", "re-hash a stage directory against its manifest");
  verify->add_option("dir", verify_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::config);
  }

  try {
    if (defaults->parsed()) {
      std::cout << Config::defaults().dump(2) << "\n";
      return 0;
    }
    if (verify->parsed()) {
      pl::verify_manifest(verify_dir);
      std::cout << "ok " << verify_dir << "\n";
      return 0;
    }
    const auto command = app.get_subcommands().front()->get_name();
    pl::Options opts;
    opts.config = resolve(command, args);
    opts.out = args.out.empty() ? pl::default_out() : std::filesystem::path(args.out);
    opts.force = args.force;
    const auto r = pl::run(command, opts);
    std::cout << r.dir.string() << "\n" << r.manifest.at("summary").dump(2) << "\n";
    return 0;
  } catch (const ecgcmr::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::failure);
  }
}
