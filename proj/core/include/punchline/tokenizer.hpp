#pragma once

// Byte-pair-encoding subword tokenizer shared by set-ups, punchlines and
// knowledge labels.
//
// Text is pre-split at spaces; every piece starts with the word-boundary
// marker U+2581. Base units are Unicode characters seen in training; any
// other character (and the literal U+2581) is spelled with <0xNN> byte
// tokens, so every valid input round-trips through encode/decode.

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace punchline {

class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kReverse = 3;  // "<r>", marks reverse-relation labels
  static constexpr int kFirstByte = 4;
  static constexpr int kFirstLearned = kFirstByte + 256;

  Tokenizer();

  // Learns merges until the vocabulary reaches `vocab_size` or no pair
  // occurs at least twice.
  static Tokenizer train(std::span<const std::string> texts, int vocab_size);

  std::vector<int> encode(std::string_view text) const;
  // Special tokens are skipped.
  std::string decode(std::span<const int> ids) const;

  int vocab_size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  // -1 when absent.
  int id(std::string_view token) const;
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }

  void set_byte_fallback(bool enabled) { byte_fallback_ = enabled; }

  // Plain-text formats: one token per line in id order, and a
  // "#version: 0.2" header followed by one "left right" merge per line.
  std::string vocab_text() const;
  std::string merges_text() const;
  static Tokenizer from_text(std::string_view vocab, std::string_view merges);
  void save(const std::filesystem::path& vocab_path, const std::filesystem::path& merges_path) const;
  static Tokenizer load(const std::filesystem::path& vocab_path, const std::filesystem::path& merges_path);

  friend bool operator==(const Tokenizer& a, const Tokenizer& b) {
    return a.tokens_ == b.tokens_ && a.merges_ == b.merges_;
  }

 private:
  void add_token(std::string token);
  void index_merges();

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::map<std::pair<std::string, std::string>, int> merge_rank_;
  bool byte_fallback_ = true;
};

}  // namespace punchline
