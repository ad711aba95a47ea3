#pragma once

// Joke corpus preparation: character filtering, set-up/punchline
// segmentation, bag-of-words de-duplication and the seeded 7:2:1 split.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "punchline/triple.hpp"

namespace punchline::corpus {

struct RawJoke {
  std::string text;
  std::string source_id;
};

// Characters a joke may contain. By default: printable ASCII plus the
// typographic single and double quotes.
struct CharsetPolicy {
  bool printable_ascii = true;
  std::u32string extra = {U'‘', U'’', U'“', U'”'};

  bool allows(char32_t c) const;
};

struct JokeRecord {
  std::string setup;
  std::string punchline;
  std::vector<Triple> triples;

  // Set-up and punchline joined by one space.
  std::string full_text() const;
  friend bool operator==(const JokeRecord&, const JokeRecord&) = default;
};

inline constexpr std::size_t kMinWords = 15;
inline constexpr std::size_t kMinSentences = 2;
inline constexpr double kDefaultDedupThreshold = 0.93;

// Segments between runs of {. ! ?} that contain a letter or digit.
std::size_t count_sentences(std::string_view text);
std::size_t count_words(std::string_view text);

std::optional<RawJoke> filter_joke(const RawJoke& raw, const CharsetPolicy& policy = {});

struct Segmentation {
  std::string setup;
  std::string punchline;
};

// Splits after the last clause delimiter in {. ! ? ; ,} that is not part of
// the trailing punctuation. Throws SegmentationError if there is none.
Segmentation segment_punchline(const RawJoke& joke);

class BowVector {
 public:
  BowVector() = default;
  static BowVector from_text(std::string_view text);

  void add(const std::string& token, std::int64_t count = 1);
  const std::map<std::string, std::int64_t>& counts() const { return counts_; }
  bool empty() const { return counts_.empty(); }
  double squared_norm() const { return squared_norm_; }

 private:
  std::map<std::string, std::int64_t> counts_;
  double squared_norm_ = 0.0;
};

double bow_cosine(const BowVector& a, const BowVector& b);

// Keep-first near-duplicate removal: a record survives iff its cosine to
// every earlier survivor is <= threshold.
std::vector<JokeRecord> deduplicate(std::span<const JokeRecord> jokes,
                                    double threshold = kDefaultDedupThreshold);

struct DatasetSplit {
  std::vector<JokeRecord> train;
  std::vector<JokeRecord> valid;
  std::vector<JokeRecord> test;
};

DatasetSplit split_dataset(std::vector<JokeRecord> records, std::uint64_t seed);

// --- file formats ---------------------------------------------------------

// One joke per line, or a CSV with a `Joke` column when the path ends in
// ".csv".
std::vector<RawJoke> read_raw_jokes(const std::filesystem::path& path);
std::vector<std::vector<std::string>> parse_csv(std::string_view content);

void to_json(nlohmann::json& j, const JokeRecord& record);
void from_json(const nlohmann::json& j, JokeRecord& record);

std::vector<JokeRecord> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, std::span<const JokeRecord> records);

struct BuildOptions {
  double dedup_threshold = kDefaultDedupThreshold;
  std::uint64_t seed = 0;
  CharsetPolicy charset;
};

struct BuildReport {
  std::size_t raw = 0;
  std::size_t filtered = 0;
  std::size_t segmented = 0;
  std::size_t deduplicated = 0;
  std::size_t train = 0;
  std::size_t valid = 0;
  std::size_t test = 0;
};

// Reads every input (merged in order), filters, segments, de-duplicates,
// splits and writes train.jsonl / valid.jsonl / test.jsonl.
BuildReport build_corpus(std::span<const std::filesystem::path> inputs, const std::filesystem::path& output_dir,
                         const BuildOptions& options);

}  // namespace punchline::corpus
