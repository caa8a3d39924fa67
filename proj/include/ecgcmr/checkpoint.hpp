#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ecgcmr {

/// Versioned parameter container:
///   "ECKP" | u32 version | u64 header length | JSON header | float32 blob | SHA-256 of everything before it
/// The header lists every array's name, shape and element offset into the blob.
struct NamedArray {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  std::size_t numel() const;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string kind;  // "ssl", "align", "autoencoder", "diffusion", "finetune"
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
};

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Hash over names, shapes and values of the arrays whose name starts with `prefix`.
std::string arrays_hash(const Checkpoint& ckpt, const std::string& prefix = "");

}  // namespace ecgcmr
