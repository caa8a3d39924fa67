#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

namespace ecgcmr {

using Digest = std::array<std::uint8_t, 32>;

/// Incremental SHA-256.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::span<const std::uint8_t> bytes);
  void update(const std::string& s);
  Digest finish();

 private:
  void* ctx_;
};

Digest sha256(std::span<const std::uint8_t> bytes);
std::string to_hex(const Digest& d);

std::string sha256_file(const std::filesystem::path& path);

/// Hash over the sorted relative file names and contents of a directory tree,
/// skipping names listed in `exclude` (e.g. run manifests).
std::string sha256_tree(const std::filesystem::path& dir, std::span<const std::string> exclude = {});

/// Write through a sibling temp file and rename into place.
void atomic_write(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void atomic_write(const std::filesystem::path& path, const std::string& text);

}  // namespace ecgcmr
