#pragma once

// Binary checkpoint container:
//
//   "PLCK" | u32 version | u64 manifest bytes | manifest (JSON)
//   u64 tensor count | per tensor: u32 name bytes, name, u64 rows, u64 cols,
//   rows * cols little-endian doubles (row-major)
//   u64 FNV-1a hash of everything before it
//
// The manifest carries the model config, the parameter partition, the
// tokenizer, the step counter and the trainer state (RNG, data order).

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "punchline/model.hpp"
#include "punchline/tensor.hpp"
#include "punchline/tokenizer.hpp"

namespace punchline {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  bool with_knowledge = false;
  std::string stage;
  Tokenizer tokenizer;
  std::map<std::string, Matrix> params;
  std::map<std::string, Matrix> adam_m;
  std::map<std::string, Matrix> adam_v;
  std::int64_t step = 0;
  nlohmann::json trainer_state = nlohmann::json::object();
  nlohmann::json run_config = nlohmann::json::object();
};

// Throws CheckpointError on I/O failure.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
// Throws CheckpointError on a missing, truncated or corrupt file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Parameter values only; optimizer and trainer state stay empty.
Checkpoint snapshot(const PunchlineModel& model, const Tokenizer& tokenizer, std::string stage);

// Copies every tensor of `values` into the matching parameter. Throws
// CheckpointError when a parameter is missing or has the wrong shape.
void load_params(PunchlineModel& model, const std::map<std::string, Matrix>& values);

// A model with the checkpoint's config and parameter values.
PunchlineModel restore_model(const Checkpoint& checkpoint);

}  // namespace punchline
