#include "punchline/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "punchline/errors.hpp"
#include "punchline/log.hpp"

namespace punchline {

ModelScorer::ModelScorer(const PunchlineModel& model, const EncodedExample& example) : model_(model) {
  ag::NoGradGuard no_grad;
  memory_ = model.encode_setup(example.source, ForwardContext{});
  knowledge_ = model.encode_graph(example, ForwardContext{});
}

std::vector<double> ModelScorer::next(std::span<const int> prefix) const {
  return model_.decode_step(prefix, memory_, knowledge_);
}

namespace {

double safe_log(double p) { return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity(); }

bool better_final(const BeamHypothesis& a, const BeamHypothesis& b, bool normalize) {
  if (a.finished != b.finished) return a.finished;
  return normalize ? a.normalized() > b.normalized() : a.logprob > b.logprob;
}

}  // namespace

BeamHypothesis beam_search(const StepScorer& scorer, const BeamOptions& options) {
  if (options.beam < 1) throw std::invalid_argument("beam must be at least 1");
  if (options.max_len < 1) throw std::invalid_argument("max_len must be at least 1");
  std::vector<BeamHypothesis> beam{{{options.bos}, 0.0, false}};
  for (int step = 0; step < options.max_len; ++step) {
    if (std::all_of(beam.begin(), beam.end(), [](const auto& h) { return h.finished; })) break;
    // Candidates keep their origin order so ties break deterministically.
    struct Candidate {
      double logprob;
      std::size_t parent;
      int token;  // -1: carried finished hypothesis
    };
    std::vector<Candidate> candidates;
    for (std::size_t i = 0; i < beam.size(); ++i) {
      const auto& h = beam[i];
      if (h.finished) {
        candidates.push_back({h.logprob, i, -1});
        continue;
      }
      const auto probs = scorer.next(h.tokens);
      for (std::size_t t = 0; t < probs.size(); ++t) {
        if (probs[t] <= 0.0) continue;
        candidates.push_back({h.logprob + safe_log(probs[t]), i, static_cast<int>(t)});
      }
    }
    const auto keep = std::min(candidates.size(), static_cast<std::size_t>(options.beam));
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) { return a.logprob > b.logprob; });
    std::vector<BeamHypothesis> next;
    next.reserve(keep);
    for (std::size_t c = 0; c < keep; ++c) {
      const auto& cand = candidates[c];
      BeamHypothesis h = beam[cand.parent];
      if (cand.token >= 0) {
        h.tokens.push_back(cand.token);
        h.logprob = cand.logprob;
        h.finished = cand.token == options.eos;
      }
      next.push_back(std::move(h));
    }
    beam = std::move(next);
  }
  return *std::min_element(beam.begin(), beam.end(), [&](const auto& a, const auto& b) {
    return better_final(a, b, options.length_normalize);
  });
}

BeamHypothesis greedy(const StepScorer& scorer, const BeamOptions& options) {
  BeamHypothesis h{{options.bos}, 0.0, false};
  for (int step = 0; step < options.max_len && !h.finished; ++step) {
    const auto probs = scorer.next(h.tokens);
    const auto best = std::max_element(probs.begin(), probs.end()) - probs.begin();
    h.tokens.push_back(static_cast<int>(best));
    h.logprob += safe_log(probs[static_cast<std::size_t>(best)]);
    h.finished = best == options.eos;
  }
  return h;
}

double score_sequence(const StepScorer& scorer, std::span<const int> tokens) {
  double total = 0.0;
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    const auto probs = scorer.next(tokens.first(i));
    total += safe_log(probs.at(static_cast<std::size_t>(tokens[i])));
  }
  return total;
}

std::string generate(const PunchlineModel& model, const Tokenizer& tokenizer, const corpus::JokeRecord& record,
                     const BeamOptions& options) {
  const EncodedExample ex = encode_example(record, tokenizer, model.config().max_len);
  const ModelScorer scorer(model, ex);
  BeamOptions opts = options;
  opts.bos = Tokenizer::kBos;
  opts.eos = Tokenizer::kEos;
  const auto best = beam_search(scorer, opts);
  return tokenizer.decode(best.tokens);
}

void generate_file(const std::filesystem::path& input, const Checkpoint& checkpoint,
                   const std::filesystem::path& output, const BeamOptions& options, const nlohmann::json& provenance) {
  const auto records = corpus::read_jsonl(input);
  const PunchlineModel model = restore_model(checkpoint);
  std::vector<std::string> lines;
  lines.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    std::string text = generate(model, checkpoint.tokenizer, records[i], options);
    // Keep one hypothesis per line.
    std::replace(text.begin(), text.end(), '\n', ' ');
    std::replace(text.begin(), text.end(), '\r', ' ');
    lines.push_back(std::move(text));
    log::debug("generated", {{"index", i}, {"text", lines.back()}});
  }
  if (output.has_parent_path()) std::filesystem::create_directories(output.parent_path());
  std::ofstream out(output, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + output.string());
  for (const auto& line : lines) out << line << '\n';

  nlohmann::ordered_json meta;
  meta["input"] = input.string();
  meta["records"] = records.size();
  meta["beam"] = options.beam;
  meta["max_len"] = options.max_len;
  meta["length_normalize"] = options.length_normalize;
  meta["checkpoint_stage"] = checkpoint.stage;
  meta["checkpoint_step"] = checkpoint.step;
  meta["model"] = nlohmann::json(checkpoint.config);
  meta["run_config"] = provenance.empty() ? checkpoint.run_config : provenance;
  std::ofstream side(output.string() + ".meta.json", std::ios::trunc);
  side << meta.dump(2) << '\n';
}

}  // namespace punchline
