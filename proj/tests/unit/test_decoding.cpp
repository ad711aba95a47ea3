#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>

#include "punchline/decoding.hpp"
#include "punchline/random.hpp"
#include "punchline/training.hpp"

using namespace punchline;
namespace fs = std::filesystem;

namespace {

constexpr int kBos = 1, kEos = 2, kA = 3, kB = 4;

class TableScorer : public StepScorer {
 public:
  std::map<std::vector<int>, std::vector<double>> table;
  std::vector<double> fallback;
  std::vector<double> next(std::span<const int> prefix) const override {
    auto it = table.find(std::vector<int>(prefix.begin(), prefix.end()));
    return it == table.end() ? fallback : it->second;
  }
};

// Greedy takes A (0.6) and then meets a flat continuation; B is worse at
// first but almost surely ends right after.
TableScorer trap() {
  TableScorer s;
  s.fallback = {1e-6, 1e-6, 1.0 - 4e-6, 1e-6, 1e-6};
  s.table[{kBos}] = {1e-6, 1e-6, 1e-6, 0.6, 0.4 - 3e-6};
  s.table[{kBos, kA}] = {1e-6, 1e-6, 0.35, 0.33, 0.32 - 2e-6};
  s.table[{kBos, kB}] = {1e-6, 1e-6, 0.95 - 3e-6, 0.025, 0.025};
  return s;
}

// Pseudo-random distribution per prefix.
class HashScorer : public StepScorer {
 public:
  HashScorer(int vocab, std::uint64_t seed) : vocab_(vocab), seed_(seed) {}
  std::vector<double> next(std::span<const int> prefix) const override {
    std::uint64_t h = seed_;
    for (int t : prefix) h = h * 1000003u + static_cast<std::uint64_t>(t) + 1;
    std::mt19937_64 rng(h);
    std::vector<double> p(vocab_);
    double z = 0;
    for (double& x : p) z += (x = std::exp(3.0 * uniform01(rng)));
    for (double& x : p) x /= z;
    return p;
  }

 private:
  int vocab_;
  std::uint64_t seed_;
};

// Best complete sequence by brute force, using the same preference as the
// search: finished before unfinished, then normalized score.
BeamHypothesis exhaustive(const StepScorer& s, int vocab, int max_len) {
  BeamHypothesis best;
  bool have = false;
  std::function<void(std::vector<int>, double)> walk = [&](std::vector<int> prefix, double lp) {
    const auto p = s.next(prefix);
    for (int t = 0; t < vocab; ++t) {
      auto seq = prefix;
      seq.push_back(t);
      const double total = lp + std::log(p[t]);
      const bool done = t == kEos;
      if (done || static_cast<int>(seq.size()) - 1 == max_len) {
        BeamHypothesis h{seq, total, done};
        const bool better = !have || (h.finished && !best.finished) ||
                            (h.finished == best.finished && h.normalized() > best.normalized());
        if (better) best = h, have = true;
      } else {
        walk(seq, total);
      }
    }
  };
  walk({kBos}, 0.0);
  return best;
}

}  // namespace

TEST(BeamSearch, EscapesTheGreedyTrap) {
  const auto s = trap();
  BeamOptions o;
  o.max_len = 3;
  o.beam = 2;
  const auto beam = beam_search(s, o);
  const auto oracle = exhaustive(s, 5, 3);
  EXPECT_EQ(beam.tokens, oracle.tokens);
  EXPECT_EQ(beam.tokens, (std::vector<int>{kBos, kB, kEos}));
  const auto g = greedy(s, o);
  EXPECT_EQ(g.tokens, (std::vector<int>{kBos, kA, kEos}));
  EXPECT_NE(g.tokens, oracle.tokens);
}

TEST(BeamSearch, BeamOneIsGreedy) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const HashScorer s(7, seed);
    BeamOptions o;
    o.beam = 1;
    o.max_len = 12;
    const auto a = beam_search(s, o), b = greedy(s, o);
    EXPECT_EQ(a.tokens, b.tokens) << seed;
    EXPECT_NEAR(a.logprob, b.logprob, 1e-12);
  }
}

TEST(BeamSearch, WideBeamMatchesExhaustiveOnSmallSpaces) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const HashScorer s(5, seed);
    BeamOptions o;
    o.beam = 200;
    o.max_len = 3;
    const auto got = beam_search(s, o);
    const auto want = exhaustive(s, 5, 3);
    EXPECT_EQ(got.finished, want.finished) << seed;
    EXPECT_NEAR(got.normalized(), want.normalized(), 1e-12) << seed;
  }
}

TEST(BeamSearch, ReportedScoreMatchesRescoring) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const HashScorer s(9, seed);
    BeamOptions o;
    o.max_len = 10;
    const auto h = beam_search(s, o);
    EXPECT_NEAR(score_sequence(s, h.tokens), h.logprob, 1e-9);
    EXPECT_LE(static_cast<int>(h.length()), o.max_len);
    EXPECT_EQ(h.tokens.front(), kBos);
    if (h.finished) EXPECT_EQ(h.tokens.back(), kEos);
  }
}

TEST(BeamSearch, RawScoreOptionUsesTotalLogprob) {
  const auto s = trap();
  BeamOptions o;
  o.max_len = 3;
  o.beam = 3;
  o.length_normalize = false;
  const auto h = beam_search(s, o);
  EXPECT_EQ(h.tokens, (std::vector<int>{kBos, kB, kEos}));
}

TEST(ModelScorer, BeamAgreesWithModelScores) {
  ModelConfig c;
  c.d_model = 8;
  c.n_blocks = 1;
  c.n_heads = 2;
  c.d_ff = 16;
  c.gat_layers = 1;
  c.gat_heads = 2;
  c.vocab_size = 260;
  c.max_len = 64;
  c.dropout = 0.0;
  const PunchlineModel m(c, true, 3);
  const Tokenizer tok;
  const auto ex = encode_example({"A dog walks in.", "Woof.", {{"dog", "instance of", "pet"}}}, tok, 64);
  const ModelScorer scorer(m, ex);
  BeamOptions o;
  o.max_len = 6;
  o.beam = 3;
  const auto h = beam_search(scorer, o);
  EXPECT_NEAR(score_sequence(scorer, h.tokens), h.logprob, 1e-5);
  o.beam = 1;
  EXPECT_EQ(beam_search(scorer, o).tokens, greedy(scorer, o).tokens);
}

TEST(GenerateFile, OneLinePerRecordAndSidecar) {
  const auto dir = fs::temp_directory_path() / "punchline_decoding";
  fs::remove_all(dir);
  fs::create_directories(dir);
  ModelConfig c;
  c.d_model = 8;
  c.n_blocks = 1;
  c.n_heads = 2;
  c.d_ff = 16;
  c.gat_layers = 1;
  c.gat_heads = 2;
  c.vocab_size = 260;
  c.max_len = 64;
  const PunchlineModel m(c, true, 4);
  const Checkpoint ck = snapshot(m, Tokenizer{}, "finetune");
  BeamOptions o;
  o.beam = 2;
  o.max_len = 5;

  const std::vector<corpus::JokeRecord> none;
  corpus::write_jsonl(dir / "empty.jsonl", none);
  generate_file(dir / "empty.jsonl", ck, dir / "empty.txt", o);
  EXPECT_EQ(fs::file_size(dir / "empty.txt"), 0u);

  const std::vector<corpus::JokeRecord> three{
      {"One.", "x.", {}}, {"Two dogs.", "y.", {{"dog", "instance of", "pet"}}}, {"Three.", "z.", {}}};
  corpus::write_jsonl(dir / "in.jsonl", three);
  generate_file(dir / "in.jsonl", ck, dir / "out" / "hyp.txt", o);
  std::ifstream in(dir / "out" / "hyp.txt");
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  EXPECT_EQ(lines, 3);
  std::ifstream meta_in(dir / "out" / "hyp.txt.meta.json");
  const auto meta = nlohmann::json::parse(meta_in);
  EXPECT_EQ(meta.at("records"), 3);
  EXPECT_EQ(meta.at("beam"), 2);
  EXPECT_EQ(meta.at("checkpoint_stage"), "finetune");
}
