#include "ecgcmr/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "ecgcmr/cohort.hpp"
#include "ecgcmr/dataset.hpp"

namespace ecgcmr {

using nlohmann::json;

namespace {

json build_defaults() {
  const cohort::GeneratorConfig gen;
  json d;
  d["seed"] = 0;
  d["runtime"] = {{"threads", 1}};
  d["cohort"] = {{"n", 300},
                 {"generator", dataset::to_json(gen)},
                 {"split", {{"train", 0.7}, {"val", 0.1}, {"test", 0.2}}}};
  d["preprocess"] = {
      {"ecg",
       {{"seasonal_period", 0},
        {"wavelet", "db6"},
        {"wavelet_levels", 5},
        {"threshold_rule", "universal"},
        {"fixed_threshold", 0.0},
        {"savgol_window", 11},
        {"savgol_polyorder", 3}}},
      {"cmr", {{"sa_crop", 40}, {"la_crop", 48}}},
      {"modality", "all"}};
  d["augment"] = {
      {"ecg", {{"crop_scale_min", 0.5}, {"crop_scale_max", 1.0}, {"time_flip_prob", 0.5}, {"sign_flip_prob", 0.5}}},
      {"cmr",
       {{"max_rotation_deg", 30.0},
        {"hflip_prob", 0.5},
        {"vflip_prob", 0.5},
        {"scale_min", 0.8},
        {"scale_max", 1.0},
        {"aspect_min", 0.9},
        {"aspect_max", 1.1}}}};
  d["input"] = {{"sa_size", 32}, {"la_size", 48}};
  d["ssl"] = {{"patch_size", 4},      {"window_size", 4},     {"depths", {2, 2}},      {"heads", {2, 4}},
              {"dims", {32, 64}},     {"mlp_ratio", 2.0},     {"mask_ratio", 0.75},    {"proj_dim", 128},
              {"tau", 0.1},           {"lambda", 1.0},        {"decoder_hidden", 256}, {"share_encoders", false},
              {"epochs", 30},         {"batch_size", 16},     {"lr", 1e-3},            {"warmup_fraction", 0.1},
              {"weight_decay", 0.05}, {"augment", true}};
  d["align"] = {{"patch_width", 50}, {"dim", 128},       {"depth", 4},          {"heads", 4},
                {"mlp_ratio", 2.0},  {"proj_dim", 128},  {"tau", 0.07},         {"epochs", 20},
                {"batch_size", 32},  {"lr", 1e-3},       {"warmup_fraction", 0.1}, {"weight_decay", 0.05},
                {"augment", true}};
  d["autoencoder"] = {{"downsample", 4}, {"latent_channels", 4}, {"width", 32},       {"epochs", 10},
                      {"batch_size", 16}, {"lr", 1e-3},          {"target_mse", 0.01}};
  d["diffusion"] = {{"view", "sa"},  {"steps", 100},     {"beta_start", 1e-4}, {"beta_end", 0.02},
                    {"width", 32},  {"heads", 4},       {"global_condition", true},
                    {"epochs", 30}, {"batch_size", 8},  {"lr", 3e-4}};
  d["generate"] = {{"view", "sa"}, {"steps", 20}, {"eta", 0.0}, {"split", "test"}, {"ids", json::array()},
                   {"limit", 0},   {"png", false}};
  d["finetune"] = {{"task", "binary"},
                   {"phenotypes", json::array()},
                   {"covariates", {"sex", "age", "mean_heart_rate"}},
                   {"fraction", 1.0},
                   {"balance", "none"},
                   {"init", "pretrained"},
                   {"name", ""},
                   {"epochs", 30},
                   {"warmup_epochs", 3.0},
                   {"batch_size", 16},
                   {"lr", 3e-4},
                   {"weight_decay", 0.05},
                   {"patience", 20},
                   {"film_hidden", 32},
                   {"augment", true}};
  d["predict"] = {{"task", ""}, {"split", "test"}};
  d["evaluate"] = {{"task", ""}, {"baseline", ""}, {"split", "test"}, {"bootstrap", 1000},
                   {"threshold", 0.5}, {"generated", ""}};
  d["gradcam"] = {{"task", ""}, {"ids", json::array()}, {"limit", 8}, {"target_class", 1}, {"png", false}};
  d["label_efficiency"] = {{"fractions", {0.1, 0.25, 0.5, 1.0}},
                           {"seeds", {0, 1, 2, 3, 4}},
                           {"inits", {"pretrained", "scratch"}},
                           {"metric_split", "val"}};
  return d;
}

std::string kind_of(const json& j) {
  if (j.is_boolean()) return "boolean";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  if (j.is_object()) return "object";
  return "null";
}

void check_value(const json& def, const json& value, const std::string& key) {
  if (def.is_number() && value.is_number()) {
    if ((def.is_number_integer() || def.is_number_unsigned()) && value.is_number_float()) {
      const double v = value.get<double>();
      if (std::floor(v) != v) throw ConfigError("config key '" + key + "' expects an integer");
    }
    return;
  }
  if (kind_of(def) != kind_of(value)) {
    throw ConfigError("config key '" + key + "' expects " + kind_of(def) + ", got " + kind_of(value));
  }
  if (def.is_array() && !def.empty()) {
    for (const auto& v : value) check_value(def.front(), v, key + "[]");
  }
}

void merge_into(json& target, const json& overlay, const json& schema, const std::string& prefix,
                const std::string& origin) {
  if (!overlay.is_object()) throw ConfigError(origin + ": configuration must be an object");
  for (const auto& [k, v] : overlay.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (!schema.contains(k)) throw ConfigError(origin + ": unknown config key '" + key + "'");
    const auto& def = schema.at(k);
    if (def.is_object()) {
      if (!v.is_object()) throw ConfigError(origin + ": config key '" + key + "' expects an object");
      merge_into(target[k], v, def, key, origin);
    } else {
      check_value(def, v, key);
      if ((def.is_number_integer() || def.is_number_unsigned()) && v.is_number_float()) {
        target[k] = static_cast<std::int64_t>(v.get<double>());
      } else {
        target[k] = v;
      }
    }
  }
}

const json* lookup(const json& doc, const std::string& key) {
  const json* node = &doc;
  std::stringstream ss(key);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (!node->is_object() || !node->contains(part)) return nullptr;
    node = &node->at(part);
  }
  return node;
}

}  // namespace

Config::Config() : doc_(defaults()) {}

const json& Config::defaults() {
  static const json d = build_defaults();
  return d;
}

void Config::merge(const json& overlay, const std::string& origin) { merge_into(doc_, overlay, defaults(), "", origin); }

void Config::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  merge(j, path.string());
}

void Config::set(const std::string& key, const json& value) {
  if (lookup(defaults(), key) == nullptr) throw ConfigError("unknown config key '" + key + "'");
  json overlay = value;
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) overlay = json{{*it, overlay}};
  merge(overlay, "--set " + key);
}

void Config::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("expected key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  const json* def = lookup(defaults(), key);
  if (def != nullptr && def->is_string() && !value.is_string()) value = raw;
  set(key, value);
}

const json& Config::at(const std::string& key) const {
  const json* node = lookup(doc_, key);
  if (node == nullptr) throw ConfigError("unknown config key '" + key + "'");
  return *node;
}

}  // namespace ecgcmr
