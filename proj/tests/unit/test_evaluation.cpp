#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "punchline/corpus.hpp"
#include "punchline/errors.hpp"
#include "punchline/evaluation.hpp"

using namespace punchline;
using namespace punchline::evaluation;
namespace fs = std::filesystem;

namespace {

double fraction(const std::string& s) {
  const auto slash = s.find('/');
  if (slash == std::string::npos) return std::stod(s);
  return std::stod(s.substr(0, slash)) / std::stod(s.substr(slash + 1));
}

void expect_score(const Score& got, const nlohmann::json& want, const std::string& where) {
  EXPECT_EQ(got.overlap, want.at("overlap").get<std::size_t>()) << where;
  EXPECT_EQ(got.hyp_count, want.at("hyp").get<std::size_t>()) << where;
  EXPECT_EQ(got.ref_count, want.at("ref").get<std::size_t>()) << where;
  EXPECT_NEAR(got.precision, fraction(want.at("p")), 1e-12) << where;
  EXPECT_NEAR(got.recall, fraction(want.at("r")), 1e-12) << where;
  EXPECT_NEAR(got.f1, fraction(want.at("f")), 1e-12) << where;
}

fs::path temp_dir() {
  const auto dir = fs::temp_directory_path() / "punchline_evaluation";
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

}  // namespace

TEST(Tokenize, LowercaseAlphanumericRuns) {
  EXPECT_EQ(tokenize("Why did the CHICKEN cross?! It's 2 late."),
            (std::vector<std::string>{"why", "did", "the", "chicken", "cross", "it", "s", "2", "late"}));
  EXPECT_TRUE(tokenize("?!  ...").empty());
  EXPECT_EQ(tokenize("running"), (std::vector<std::string>{"running"}));
}

TEST(Rouge, MatchesWorkedSheet) {
  std::ifstream in(std::string(PUNCHLINE_FIXTURES) + "/rouge_sheet.json");
  const auto sheet = nlohmann::json::parse(in);
  ASSERT_GE(sheet.size(), 20u);
  for (const auto& row : sheet) {
    const std::string hyp = row.at("hyp"), ref = row.at("ref");
    const auto s = score_line(hyp, ref);
    expect_score(s.rouge1, row.at("rouge1"), "R1 '" + hyp + "' vs '" + ref + "'");
    expect_score(s.rouge2, row.at("rouge2"), "R2 '" + hyp + "' vs '" + ref + "'");
    expect_score(s.rougeL, row.at("rougeL"), "RL '" + hyp + "' vs '" + ref + "'");
  }
}

TEST(Rouge, ClippedCountsAndLcs) {
  const std::vector<std::string> h{"dog", "dog", "dog"}, r{"dog"};
  const auto s = rouge_n(h, r, 1);
  EXPECT_EQ(s.overlap, 1u);
  EXPECT_NEAR(s.precision, 1.0 / 3.0, 1e-15);
  const std::vector<std::string> a{"a", "c", "b"}, b{"a", "b", "c"};
  EXPECT_EQ(lcs_length(a, b), 2u);
  EXPECT_THROW(rouge_n(h, r, 0), std::invalid_argument);
}

TEST(Rouge, CorpusMeansScaledTo100) {
  const std::vector<std::string> same{"the cat sat", "a dog ran", "why not"};
  const auto r = evaluate_lines(same, same);
  EXPECT_DOUBLE_EQ(r.rouge1.f1, 100.0);
  EXPECT_DOUBLE_EQ(r.rouge2.f1, 100.0);
  EXPECT_DOUBLE_EQ(r.rougeL.recall, 100.0);
  EXPECT_EQ(r.lines, 3u);
  const std::vector<std::string> empty(3);
  const auto z = evaluate_lines(empty, same);
  EXPECT_DOUBLE_EQ(z.rouge1.f1, 0.0);
  EXPECT_DOUBLE_EQ(z.rougeL.precision, 0.0);
  const std::vector<std::string> half{"the cat sat", "", "why not"};
  EXPECT_NEAR(evaluate_lines(half, same).rouge1.f1, 200.0 / 3.0, 1e-12);
}

TEST(Rouge, SidesWithoutNgramsScoreZero) {
  const auto s = score_line("Woof!", "woof");
  EXPECT_DOUBLE_EQ(s.rouge1.f1, 1.0);
  EXPECT_EQ(s.rouge2.hyp_count, 0u);
  EXPECT_DOUBLE_EQ(s.rouge2.f1, 0.0);
  EXPECT_DOUBLE_EQ(s.rougeL.f1, 1.0);
}

TEST(Rouge, LcsCoversLongestSharedBigramChain) {
  std::mt19937 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> a, b;
    for (int i = 0, n = 1 + rng() % 8; i < n; ++i) a.push_back(std::string(1, char('a' + rng() % 4)));
    for (int i = 0, n = 1 + rng() % 8; i < n; ++i) b.push_back(std::string(1, char('a' + rng() % 4)));
    // Longest common contiguous run, by brute force.
    std::size_t run = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      for (std::size_t j = 0; j < b.size(); ++j) {
        std::size_t k = 0;
        while (i + k < a.size() && j + k < b.size() && a[i + k] == b[j + k]) ++k;
        run = std::max(run, k);
      }
    }
    EXPECT_GE(lcs_length(a, b), run);
    EXPECT_EQ(lcs_length(a, a), a.size());
  }
}

TEST(Rouge, FilesAndMismatch) {
  const auto dir = temp_dir();
  write(dir / "hyp.txt", "the cat\na dog ran\n");
  write(dir / "ref.txt", "the cat sat\na dog ran\n");
  write(dir / "short.txt", "the cat sat\n");
  const std::vector<corpus::JokeRecord> recs{{"Setup one.", "the cat sat", {}}, {"Setup two.", "a dog ran", {}}};
  corpus::write_jsonl(dir / "ref.jsonl", recs);
  EXPECT_EQ(read_references(dir / "ref.jsonl"), (std::vector<std::string>{"the cat sat", "a dog ran"}));
  const auto a = evaluate_corpus(dir / "hyp.txt", dir / "ref.txt");
  const auto b = evaluate_corpus(dir / "hyp.txt", dir / "ref.jsonl");
  EXPECT_EQ(to_json(a), to_json(b));
  EXPECT_NEAR(a.rouge1.f1, (80.0 + 100.0) / 2.0, 1e-12);
  EXPECT_THROW(evaluate_corpus(dir / "hyp.txt", dir / "short.txt"), LineCountMismatch);
  EXPECT_EQ(evaluate_corpus(dir / "ref.txt", dir / "ref.txt").rouge1.f1, 100.0);
}

TEST(Rouge, ReportFormats) {
  const std::vector<std::string> same{"the cat"};
  const auto r = evaluate_lines(same, same);
  const auto table = format_table(r);
  EXPECT_NE(table.find("ROUGE-1"), std::string::npos);
  EXPECT_NE(table.find("100.00"), std::string::npos);
  EXPECT_LT(table.find("ROUGE-1"), table.find("ROUGE-L"));
  const auto j = to_json(r);
  EXPECT_EQ(j.at("rouge1").at("f1"), 100.0);
  EXPECT_EQ(j.at("lines"), 1);
  EXPECT_EQ(j.begin().key(), "rouge1");
}
