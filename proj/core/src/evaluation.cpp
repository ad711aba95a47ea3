#include "punchline/evaluation.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "punchline/corpus.hpp"
#include "punchline/errors.hpp"
#include "punchline/text.hpp"

namespace punchline::evaluation {
namespace {

Score make_score(std::size_t overlap, std::size_t hyp_count, std::size_t ref_count) {
  Score s;
  s.overlap = overlap;
  s.hyp_count = hyp_count;
  s.ref_count = ref_count;
  if (hyp_count == 0 || ref_count == 0 || overlap == 0) return s;
  s.precision = static_cast<double>(overlap) / static_cast<double>(hyp_count);
  s.recall = static_cast<double>(overlap) / static_cast<double>(ref_count);
  s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

std::map<std::vector<std::string>, std::size_t> ngram_counts(std::span<const std::string> tokens, int n) {
  std::map<std::vector<std::string>, std::size_t> counts;
  const auto width = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + width <= tokens.size(); ++i) {
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i + width))];
  }
  return counts;
}

void accumulate(Metric& m, const Score& s) {
  m.precision += s.precision;
  m.recall += s.recall;
  m.f1 += s.f1;
}

void finish(Metric& m, std::size_t lines) {
  if (lines == 0) return;
  const double k = 100.0 / static_cast<double>(lines);
  m.precision *= k;
  m.recall *= k;
  m.f1 *= k;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) { return text::alnum_tokens(text); }

Score rouge_n(std::span<const std::string> hyp, std::span<const std::string> ref, int n) {
  if (n < 1) throw std::invalid_argument("rouge_n needs n >= 1");
  const auto h = ngram_counts(hyp, n);
  const auto r = ngram_counts(ref, n);
  std::size_t overlap = 0;
  for (const auto& [gram, count] : h) {
    const auto it = r.find(gram);
    if (it != r.end()) overlap += std::min(count, it->second);
  }
  const auto grams = [n](std::size_t len) {
    return len >= static_cast<std::size_t>(n) ? len - static_cast<std::size_t>(n) + 1 : 0;
  };
  return make_score(overlap, grams(hyp.size()), grams(ref.size()));
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

Score rouge_l(std::span<const std::string> hyp, std::span<const std::string> ref) {
  return make_score(lcs_length(hyp, ref), hyp.size(), ref.size());
}

LineScores score_line(std::string_view hyp, std::string_view ref) {
  const auto h = tokenize(hyp);
  const auto r = tokenize(ref);
  return {rouge_n(h, r, 1), rouge_n(h, r, 2), rouge_l(h, r)};
}

RougeReport evaluate_lines(std::span<const std::string> hyps, std::span<const std::string> refs) {
  if (hyps.size() != refs.size()) {
    throw LineCountMismatch(std::to_string(hyps.size()) + " hypotheses but " + std::to_string(refs.size()) +
                            " references");
  }
  RougeReport report;
  report.lines = hyps.size();
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    auto line = score_line(hyps[i], refs[i]);
    accumulate(report.rouge1, line.rouge1);
    accumulate(report.rouge2, line.rouge2);
    accumulate(report.rougeL, line.rougeL);
    report.per_line.push_back(line);
  }
  finish(report.rouge1, report.lines);
  finish(report.rouge2, report.lines);
  finish(report.rougeL, report.lines);
  return report;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

std::vector<std::string> read_references(const std::filesystem::path& path) {
  if (path.extension() != ".jsonl") return read_lines(path);
  std::vector<std::string> refs;
  for (const auto& record : corpus::read_jsonl(path)) refs.push_back(record.punchline);
  return refs;
}

RougeReport evaluate_corpus(const std::filesystem::path& hyps, const std::filesystem::path& refs) {
  return evaluate_lines(read_lines(hyps), read_references(refs));
}

std::string format_table(const RougeReport& report) {
  std::ostringstream out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-8s %9s %9s %9s\n", "Metric", "F1", "P", "R");
  out << buf;
  const auto row = [&](const char* name, const Metric& m) {
    std::snprintf(buf, sizeof buf, "%-8s %9.2f %9.2f %9.2f\n", name, m.f1, m.precision, m.recall);
    out << buf;
  };
  row("ROUGE-1", report.rouge1);
  row("ROUGE-2", report.rouge2);
  row("ROUGE-L", report.rougeL);
  out << "lines: " << report.lines << '\n';
  return out.str();
}

nlohmann::ordered_json to_json(const RougeReport& report) {
  const auto metric = [](const Metric& m) {
    nlohmann::ordered_json j;
    j["f1"] = m.f1;
    j["precision"] = m.precision;
    j["recall"] = m.recall;
    return j;
  };
  nlohmann::ordered_json j;
  j["rouge1"] = metric(report.rouge1);
  j["rouge2"] = metric(report.rouge2);
  j["rougeL"] = metric(report.rougeL);
  j["lines"] = report.lines;
  return j;
}

}  // namespace punchline::evaluation
