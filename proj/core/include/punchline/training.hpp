#pragma once

// Two-step training: pretrain a plain Transformer, transplant its
// parameters into the fused model, fine-tune everything.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "punchline/checkpoint.hpp"
#include "punchline/corpus.hpp"
#include "punchline/model.hpp"
#include "punchline/tokenizer.hpp"

namespace punchline {

struct TrainConfig {
  int batch_size = 16;
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int max_epochs = 100;
  int max_steps = 0;     // 0: bounded by epochs only
  int patience = 5;      // evaluations without improvement; 0 disables
  int eval_every = 0;    // steps; 0: once per epoch
  double clip_norm = 1.0;  // global gradient norm; <= 0 disables
  std::uint64_t seed = 1;
  bool freeze_knowledge = false;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

class Adam {
 public:
  explicit Adam(const TrainConfig& config) : config_(config) {}

  // Updates every parameter whose name passes `trainable` (all when
  // empty), using the gradients currently stored on the parameters.
  void step(ParamStore& params, const std::function<bool(const std::string&)>& trainable = {});

  std::int64_t steps() const { return t_; }
  double last_grad_norm() const { return last_norm_; }
  bool last_clipped() const { return last_clipped_; }

  const std::map<std::string, Matrix>& first_moments() const { return m_; }
  const std::map<std::string, Matrix>& second_moments() const { return v_; }
  void restore(std::int64_t steps, std::map<std::string, Matrix> m, std::map<std::string, Matrix> v);

 private:
  TrainConfig config_;
  std::int64_t t_ = 0;
  std::map<std::string, Matrix> m_;
  std::map<std::string, Matrix> v_;
  double last_norm_ = 0.0;
  bool last_clipped_ = false;
};

struct MetricRow {
  std::int64_t step = 0;
  std::string split;
  double loss = 0.0;
  double ppl = 0.0;
};

void to_json(nlohmann::json& j, const MetricRow& row);

struct TrainResult {
  std::int64_t steps = 0;
  std::int64_t best_step = 0;
  double best_loss = 0.0;
  bool early_stopped = false;
  std::vector<MetricRow> history;
};

// Tokenizes records for the model, skipping (with a warning) those that
// exceed the length limit.
std::vector<EncodedExample> encode_records(std::span<const corpus::JokeRecord> records, const Tokenizer& tokenizer,
                                           int max_len);

// BPE over set-ups, punchlines and triple labels.
Tokenizer train_tokenizer(std::span<const corpus::JokeRecord> records, int vocab_size);

class Trainer {
 public:
  Trainer(PunchlineModel& model, TrainConfig config, std::vector<EncodedExample> train,
          std::vector<EncodedExample> valid = {});

  // One optimizer step on the next mini-batch; returns its token-mean loss.
  // Throws DivergenceError on a non-finite loss.
  double step();

  // Token-mean loss without dropout.
  double evaluate(std::span<const EncodedExample> examples) const;

  // Steps until max_steps, max_epochs or early stopping. Leaves the model
  // holding the best parameters seen. `on_metric` sees every logged row;
  // `on_best` runs after each improvement.
  TrainResult run(const std::function<void(const MetricRow&)>& on_metric = {},
                  const std::function<void()>& on_best = {});

  std::int64_t steps() const { return adam_.steps(); }
  int epoch() const { return epoch_; }
  const Adam& optimizer() const { return adam_; }

  // Optimizer moments, step counter, RNG and data order.
  void save_state(Checkpoint& checkpoint) const;
  void load_state(const Checkpoint& checkpoint);

 private:
  bool trainable(const std::string& name) const;
  void new_epoch();

  PunchlineModel& model_;
  TrainConfig config_;
  std::vector<EncodedExample> train_;
  std::vector<EncodedExample> valid_;
  Adam adam_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  int epoch_ = 0;
};

// Fused model whose pretrainable parameters are copied from `pretrained`
// and whose knowledge-only parameters are freshly initialized from `seed`.
// Throws ConfigMismatch when the checkpoint's dimensions differ from
// `config`.
PunchlineModel transplant(const Checkpoint& pretrained, const ModelConfig& config, std::uint64_t seed);
PunchlineModel transplant(const Checkpoint& pretrained, std::uint64_t seed);

struct StageOutput {
  Checkpoint best;
  TrainResult result;
};

struct StageOptions {
  TrainConfig train;
  std::optional<std::filesystem::path> out_dir;  // writes <stage>.best, <stage>.last, <stage>.metrics.jsonl
  nlohmann::json run_config = nlohmann::json::object();
};

StageOutput pretrain(std::span<const corpus::JokeRecord> train, std::span<const corpus::JokeRecord> valid,
                     const Tokenizer& tokenizer, const ModelConfig& config, const StageOptions& options);

StageOutput finetune(PunchlineModel model, std::span<const corpus::JokeRecord> train,
                     std::span<const corpus::JokeRecord> valid, const Tokenizer& tokenizer,
                     const StageOptions& options);

}  // namespace punchline
