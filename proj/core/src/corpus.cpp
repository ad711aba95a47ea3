#include "punchline/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "punchline/errors.hpp"
#include "punchline/log.hpp"
#include "punchline/random.hpp"
#include "punchline/text.hpp"

namespace punchline::corpus {
namespace {

bool is_sentence_delimiter(char c) { return c == '.' || c == '!' || c == '?'; }
bool is_clause_delimiter(char c) { return is_sentence_delimiter(c) || c == ';' || c == ','; }
bool is_content(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u >= 0x80 || std::isalnum(u) != 0;
}

// Closing characters that may follow the final punctuation mark.
bool is_trailing(std::string_view t, std::size_t end) {
  const char c = t[end - 1];
  if (is_clause_delimiter(c) || std::isspace(static_cast<unsigned char>(c)) || c == '"' || c == '\'' ||
      c == ')') {
    return true;
  }
  // U+2019 and U+201D are E2 80 99 / E2 80 9D.
  return end >= 3 && static_cast<unsigned char>(t[end - 3]) == 0xE2 &&
         static_cast<unsigned char>(t[end - 2]) == 0x80 &&
         (static_cast<unsigned char>(c) == 0x99 || static_cast<unsigned char>(c) == 0x9D);
}

std::size_t trailing_width(std::string_view t, std::size_t end) {
  const auto c = static_cast<unsigned char>(t[end - 1]);
  return (c == 0x99 || c == 0x9D) && end >= 3 && static_cast<unsigned char>(t[end - 3]) == 0xE2 ? 3 : 1;
}

double cosine_from(double dot, double norm_a, double norm_b) {
  if (norm_a <= 0.0 || norm_b <= 0.0) return 0.0;
  return std::min(1.0, dot / std::sqrt(norm_a * norm_b));
}

}  // namespace

bool CharsetPolicy::allows(char32_t c) const {
  if (printable_ascii && c >= 0x20 && c <= 0x7E) return true;
  return extra.find(c) != std::u32string::npos;
}

std::string JokeRecord::full_text() const { return setup + " " + punchline; }

std::size_t count_sentences(std::string_view text) {
  std::size_t sentences = 0;
  bool has_content = false;
  for (char c : text) {
    if (is_sentence_delimiter(c)) {
      if (has_content) ++sentences;
      has_content = false;
    } else if (is_content(c)) {
      has_content = true;
    }
  }
  if (has_content) ++sentences;
  return sentences;
}

std::size_t count_words(std::string_view text) { return text::split_whitespace(text).size(); }

std::optional<RawJoke> filter_joke(const RawJoke& raw, const CharsetPolicy& policy) {
  const auto decoded = text::utf8_decode(raw.text);
  if (!decoded) return std::nullopt;
  for (char32_t c : *decoded) {
    if (!policy.allows(c)) return std::nullopt;
  }
  if (count_sentences(raw.text) < kMinSentences) return std::nullopt;
  if (count_words(raw.text) < kMinWords) return std::nullopt;
  return raw;
}

Segmentation segment_punchline(const RawJoke& joke) {
  const std::string_view t = text::trim(joke.text);
  std::size_t end = t.size();
  while (end > 0 && is_trailing(t, end)) end -= trailing_width(t, end);

  std::size_t split = std::string_view::npos;
  for (std::size_t i = end; i > 0; --i) {
    if (is_clause_delimiter(t[i - 1])) {
      split = i - 1;
      break;
    }
  }
  if (split == std::string_view::npos) {
    throw SegmentationError("no internal clause delimiter in: " + std::string(t));
  }
  Segmentation out{std::string(text::trim(t.substr(0, split + 1))), std::string(text::trim(t.substr(split + 1)))};
  const bool setup_has_content = std::any_of(out.setup.begin(), out.setup.end(), is_content);
  if (!setup_has_content || out.punchline.empty()) {
    throw SegmentationError("degenerate segmentation of: " + std::string(t));
  }
  return out;
}

BowVector BowVector::from_text(std::string_view text) {
  BowVector v;
  for (const auto& token : text::alnum_tokens(text)) v.add(token);
  return v;
}

void BowVector::add(const std::string& token, std::int64_t count) {
  if (count <= 0) return;
  auto& slot = counts_[token];
  const auto before = static_cast<double>(slot);
  slot += count;
  const auto after = static_cast<double>(slot);
  squared_norm_ += after * after - before * before;
}

double bow_cosine(const BowVector& a, const BowVector& b) {
  if (a.empty() || b.empty()) return 0.0;
  const auto& small = a.counts().size() <= b.counts().size() ? a.counts() : b.counts();
  const auto& large = &small == &a.counts() ? b.counts() : a.counts();
  double dot = 0.0;
  for (const auto& [token, count] : small) {
    auto it = large.find(token);
    if (it != large.end()) dot += static_cast<double>(count) * static_cast<double>(it->second);
  }
  return cosine_from(dot, a.squared_norm(), b.squared_norm());
}

std::vector<JokeRecord> deduplicate(std::span<const JokeRecord> jokes, double threshold) {
  // Inverted index over survivors: only survivors sharing a token can have
  // a non-zero cosine.
  std::unordered_map<std::string, std::vector<std::pair<std::size_t, std::int64_t>>> postings;
  std::vector<double> kept_norms;
  std::vector<JokeRecord> kept;
  std::vector<double> dots;
  for (const auto& joke : jokes) {
    const BowVector bow = BowVector::from_text(joke.full_text());
    dots.assign(kept.size(), 0.0);
    for (const auto& [token, count] : bow.counts()) {
      auto it = postings.find(token);
      if (it == postings.end()) continue;
      for (const auto& [index, kept_count] : it->second) {
        dots[index] += static_cast<double>(count) * static_cast<double>(kept_count);
      }
    }
    bool duplicate = false;
    for (std::size_t k = 0; k < kept.size() && !duplicate; ++k) {
      if (dots[k] > 0.0 && cosine_from(dots[k], bow.squared_norm(), kept_norms[k]) > threshold) duplicate = true;
    }
    if (duplicate) continue;
    for (const auto& [token, count] : bow.counts()) postings[token].emplace_back(kept.size(), count);
    kept_norms.push_back(bow.squared_norm());
    kept.push_back(joke);
  }
  return kept;
}

DatasetSplit split_dataset(std::vector<JokeRecord> records, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  shuffle(records, rng);
  const std::size_t n = records.size();
  const auto train = std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(n))));
  const auto valid =
      std::min<std::size_t>(n - train, static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n))));
  DatasetSplit split;
  auto first = std::make_move_iterator(records.begin());
  split.train.assign(first, first + static_cast<std::ptrdiff_t>(train));
  split.valid.assign(first + static_cast<std::ptrdiff_t>(train), first + static_cast<std::ptrdiff_t>(train + valid));
  split.test.assign(first + static_cast<std::ptrdiff_t>(train + valid), std::make_move_iterator(records.end()));
  return split;
}

std::vector<std::vector<std::string>> parse_csv(std::string_view content) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool row_has_data = false;
  for (std::size_t i = 0; i < content.size(); ++i) {
    const char c = content[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < content.size() && content[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        quoted = true;
        row_has_data = true;
        break;
      case ',':
        row.push_back(std::move(field));
        field.clear();
        row_has_data = true;
        break;
      case '\r':
        break;
      case '\n':
        if (row_has_data || !field.empty()) {
          row.push_back(std::move(field));
          rows.push_back(std::move(row));
        }
        field.clear();
        row.clear();
        row_has_data = false;
        break;
      default:
        field.push_back(c);
        row_has_data = true;
    }
  }
  if (quoted) throw DataError("unterminated quoted CSV field");
  if (row_has_data || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<RawJoke> read_raw_jokes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string content = buffer.str();
  const std::string name = path.filename().string();

  std::vector<RawJoke> jokes;
  if (path.extension() == ".csv") {
    const auto rows = parse_csv(content);
    if (rows.empty()) return jokes;
    std::size_t column = rows[0].size();
    for (std::size_t c = 0; c < rows[0].size(); ++c) {
      std::string header(text::trim(rows[0][c]));
      std::transform(header.begin(), header.end(), header.begin(), [](unsigned char ch) { return std::tolower(ch); });
      if (header == "joke") column = c;
    }
    if (column == rows[0].size()) throw DataError(path.string() + ": no `Joke` column");
    for (std::size_t r = 1; r < rows.size(); ++r) {
      if (column >= rows[r].size()) continue;
      const auto t = text::trim(rows[r][column]);
      if (!t.empty()) jokes.push_back({std::string(t), name + ":" + std::to_string(r)});
    }
    return jokes;
  }

  std::istringstream lines(content);
  std::string line;
  std::size_t number = 0;
  while (std::getline(lines, line)) {
    ++number;
    const auto t = text::trim(line);
    if (!t.empty()) jokes.push_back({std::string(t), name + ":" + std::to_string(number)});
  }
  return jokes;
}

void to_json(nlohmann::json& j, const JokeRecord& record) {
  nlohmann::json triples = nlohmann::json::array();
  for (const auto& t : record.triples) triples.push_back({t.subject, t.relation, t.object});
  j = nlohmann::json{{"setup", record.setup}, {"punchline", record.punchline}, {"triples", std::move(triples)}};
}

void from_json(const nlohmann::json& j, JokeRecord& record) {
  record.setup = j.at("setup").get<std::string>();
  record.punchline = j.at("punchline").get<std::string>();
  record.triples.clear();
  if (auto it = j.find("triples"); it != j.end()) {
    for (const auto& t : *it) {
      if (!t.is_array() || t.size() != 3) throw DataError("triple must be a 3-element array");
      record.triples.push_back({t[0].get<std::string>(), t[1].get<std::string>(), t[2].get<std::string>()});
    }
  }
}

std::vector<JokeRecord> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<JokeRecord> records;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (text::trim(line).empty()) continue;
    try {
      records.push_back(nlohmann::json::parse(line).get<JokeRecord>());
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return records;
}

void write_jsonl(const std::filesystem::path& path, std::span<const JokeRecord> records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& record : records) {
    nlohmann::ordered_json j;
    j["setup"] = record.setup;
    j["punchline"] = record.punchline;
    j["triples"] = nlohmann::ordered_json::array();
    for (const auto& t : record.triples) j["triples"].push_back({t.subject, t.relation, t.object});
    out << j.dump() << '\n';
  }
}

BuildReport build_corpus(std::span<const std::filesystem::path> inputs, const std::filesystem::path& output_dir,
                         const BuildOptions& options) {
  BuildReport report;
  std::vector<JokeRecord> records;
  for (const auto& input : inputs) {
    for (const auto& raw : read_raw_jokes(input)) {
      ++report.raw;
      const auto kept = filter_joke(raw, options.charset);
      if (!kept) continue;
      ++report.filtered;
      try {
        auto parts = segment_punchline(*kept);
        records.push_back({std::move(parts.setup), std::move(parts.punchline), {}});
        ++report.segmented;
      } catch (const SegmentationError& e) {
        log::warn("segmentation_failed", {{"source", raw.source_id}, {"error", e.what()}});
      }
    }
  }
  records = deduplicate(records, options.dedup_threshold);
  report.deduplicated = records.size();
  if (records.empty()) throw DataError("no jokes survived filtering");
  const DatasetSplit split = split_dataset(std::move(records), options.seed);
  report.train = split.train.size();
  report.valid = split.valid.size();
  report.test = split.test.size();

  std::filesystem::create_directories(output_dir);
  write_jsonl(output_dir / "train.jsonl", split.train);
  write_jsonl(output_dir / "valid.jsonl", split.valid);
  write_jsonl(output_dir / "test.jsonl", split.test);
  return report;
}

}  // namespace punchline::corpus
