#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "ecgcmr/error.hpp"

namespace ecgcmr {

/// Layered configuration: built-in defaults, then files, then `key=value`
/// overrides. Every key must already exist in the defaults and keep its type.
class Config {
 public:
  Config();

  static const nlohmann::json& defaults();

  void merge(const nlohmann::json& overlay, const std::string& origin = "overlay");
  void merge_file(const std::filesystem::path& path);
  /// Dotted key, e.g. "ssl.epochs=5". The value is parsed as JSON when
  /// possible and taken as a bare string otherwise.
  void set(const std::string& assignment);
  void set(const std::string& key, const nlohmann::json& value);

  const nlohmann::json& at(const std::string& key) const;
  template <typename T>
  T get(const std::string& key) const {
    try {
      return at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }

  const nlohmann::json& doc() const { return doc_; }

 private:
  nlohmann::json doc_;
};

}  // namespace ecgcmr
