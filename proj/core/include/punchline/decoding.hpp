#pragma once

// Beam-search punchline generation.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "punchline/checkpoint.hpp"
#include "punchline/corpus.hpp"
#include "punchline/model.hpp"

namespace punchline {

// Anything that maps a prefix (starting with BOS) to a next-token
// distribution.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual std::vector<double> next(std::span<const int> prefix) const = 0;
};

// decode_step of a model for one encoded set-up and graph.
class ModelScorer : public StepScorer {
 public:
  ModelScorer(const PunchlineModel& model, const EncodedExample& example);
  std::vector<double> next(std::span<const int> prefix) const override;

 private:
  const PunchlineModel& model_;
  Var memory_;
  std::optional<Var> knowledge_;
};

struct BeamHypothesis {
  std::vector<int> tokens;  // starts with BOS
  double logprob = 0.0;
  bool finished = false;

  // Generated tokens (BOS excluded).
  std::size_t length() const { return tokens.empty() ? 0 : tokens.size() - 1; }
  double normalized() const { return length() == 0 ? logprob : logprob / static_cast<double>(length()); }
};

struct BeamOptions {
  int beam = 5;
  int max_len = 64;  // generated tokens, EOS included
  bool length_normalize = true;
  int eos = 2;
  int bos = 1;
};

// Finished hypotheses are carried along unextended; at each step the top
// `beam` hypotheses by total log-probability survive. Stops when all are
// finished or max_len is reached. The best by normalized (or raw) score is
// returned; finished ones win over unfinished ones.
BeamHypothesis beam_search(const StepScorer& scorer, const BeamOptions& options);

// Argmax decoding.
BeamHypothesis greedy(const StepScorer& scorer, const BeamOptions& options);

// Sum of log-probabilities of the tokens after BOS under `scorer`.
double score_sequence(const StepScorer& scorer, std::span<const int> tokens);

// Generated punchline text for a record.
std::string generate(const PunchlineModel& model, const Tokenizer& tokenizer, const corpus::JokeRecord& record,
                     const BeamOptions& options);

// One punchline per input record, in order. Writes `output` and a
// provenance sidecar `<output>.meta.json`.
void generate_file(const std::filesystem::path& input, const Checkpoint& checkpoint,
                   const std::filesystem::path& output, const BeamOptions& options,
                   const nlohmann::json& provenance = nlohmann::json::object());

}  // namespace punchline
