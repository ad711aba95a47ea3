#pragma once

// ROUGE-1, ROUGE-2 and ROUGE-L. Scoring tokens are lowercase ASCII
// alphanumeric runs; everything else separates tokens. No stemming.

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace punchline::evaluation {

struct Score {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Raw counts behind the ratios.
  std::size_t overlap = 0;
  std::size_t hyp_count = 0;
  std::size_t ref_count = 0;
};

std::vector<std::string> tokenize(std::string_view text);

// Clipped n-gram overlap; n must be >= 1.
Score rouge_n(std::span<const std::string> hyp, std::span<const std::string> ref, int n);
// Longest common subsequence.
Score rouge_l(std::span<const std::string> hyp, std::span<const std::string> ref);
std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

struct LineScores {
  Score rouge1;
  Score rouge2;
  Score rougeL;
};

LineScores score_line(std::string_view hyp, std::string_view ref);

struct Metric {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Means over lines, scaled by 100.
struct RougeReport {
  Metric rouge1;
  Metric rouge2;
  Metric rougeL;
  std::size_t lines = 0;
  std::vector<LineScores> per_line;
};

RougeReport evaluate_lines(std::span<const std::string> hyps, std::span<const std::string> refs);

// Reference lines from a .txt file (one per line) or a .jsonl corpus file
// (the punchline field).
std::vector<std::string> read_references(const std::filesystem::path& path);
std::vector<std::string> read_lines(const std::filesystem::path& path);

// Throws LineCountMismatch.
RougeReport evaluate_corpus(const std::filesystem::path& hyps, const std::filesystem::path& refs);

// Table with one row per metric, F1 first.
std::string format_table(const RougeReport& report);
nlohmann::ordered_json to_json(const RougeReport& report);

}  // namespace punchline::evaluation
