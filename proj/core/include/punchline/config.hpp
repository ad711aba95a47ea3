#pragma once

// Run configuration: model, training and decoding settings in one
// key = value document. Lines starting with '#' are comments. A "preset"
// key, when present, must come first and selects the base values.
//
//   preset = desk
//   d_model = 64
//   learning_rate = 0.001

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "punchline/model.hpp"
#include "punchline/training.hpp"

namespace punchline {

inline constexpr const char* kConfigEnvVar = "PUNCHLINE_CONFIG";

struct RunConfig {
  std::string preset = "desk";
  ModelConfig model;
  TrainConfig train;
  int beam = 5;
  int decode_max_len = 64;
  bool length_normalize = true;
  int max_triples = 10;
  int workers = 1;
  double dedup_threshold = 0.93;

  // "desk" or "paper"; throws ConfigError otherwise.
  static RunConfig from_preset(std::string_view name);

  // Throws ConfigError on an unknown key or a malformed value.
  void set(std::string_view key, std::string_view value);

  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);

  std::string to_text() const;
  nlohmann::ordered_json to_json() const;

  static std::vector<std::string> keys();
  void validate() const;
};

// The --config path if given, else $PUNCHLINE_CONFIG, else empty.
std::filesystem::path resolve_config_path(const std::filesystem::path& flag);

}  // namespace punchline
