#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgcmr/cohort.hpp"

namespace ecgcmr::dataset {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kShapesFile = "shapes.json";
inline constexpr const char* kSamplesFile = "samples.json";

/// A cohort as stored on disk: manifest, free-form provenance block, samples.
struct Cohort {
  cohort::CohortManifest manifest;
  json info;  // "stage", "generator", "preprocess", ...
  std::vector<cohort::PairedSample> samples;

  std::vector<const cohort::PairedSample*> select(cohort::Split split) const;
};

json to_json(const cohort::GeneratorConfig& cfg);
cohort::GeneratorConfig generator_from_json(const json& j);
json manifest_to_json(const cohort::CohortManifest& m);
cohort::CohortManifest manifest_from_json(const json& j);

/// Write a cohort directory. Files land in `<dir>.partial` first and the
/// directory is renamed into place, so a failed write leaves nothing behind.
/// Throws if `dir` already exists.
void write_cohort(const fs::path& dir, const Cohort& cohort);

json read_manifest_json(const fs::path& dir);
Cohort load_cohort(const fs::path& dir);

/// Per-sample file name, e.g. "s000012_ecg.f32".
std::string sample_file(int id, const std::string& field);

void write_f32(const fs::path& path, std::span<const float> values);
std::vector<float> read_f32(const fs::path& path, std::size_t expected);
void write_u8(const fs::path& path, std::span<const std::uint8_t> values);
std::vector<std::uint8_t> read_u8(const fs::path& path, std::size_t expected);

/// Write a single clip (float32 + shapes sidecar entry) into a directory,
/// used for generated outputs.
void write_clip(const fs::path& dir, const std::string& name, const CmrClip& clip);
CmrClip read_clip(const fs::path& dir, const std::string& name, View view);

}  // namespace ecgcmr::dataset
