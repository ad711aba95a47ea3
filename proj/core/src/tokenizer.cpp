#include "punchline/tokenizer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "punchline/errors.hpp"

namespace punchline {
namespace {

const std::string kMarker = "\xE2\x96\x81";  // U+2581
const char* const kSpecials[] = {"<pad>", "<bos>", "<eos>", "<r>"};

struct Symbol {
  std::string text;
  bool is_byte = false;  // raw byte, never merged
};

std::string byte_token(unsigned char b) {
  char buffer[8];
  std::snprintf(buffer, sizeof(buffer), "<0x%02X>", b);
  return buffer;
}

// Length of the valid UTF-8 sequence starting at `i`, or 0.
std::size_t utf8_length(std::string_view s, std::size_t i) {
  const auto lead = static_cast<unsigned char>(s[i]);
  std::size_t n = 0;
  if (lead < 0x80) return 1;
  if ((lead & 0xE0) == 0xC0 && lead >= 0xC2) n = 2;
  else if ((lead & 0xF0) == 0xE0) n = 3;
  else if ((lead & 0xF8) == 0xF0 && lead <= 0xF4) n = 4;
  else return 0;
  if (i + n > s.size()) return 0;
  for (std::size_t k = 1; k < n; ++k) {
    if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) return 0;
  }
  if (n == 3) {
    const auto second = static_cast<unsigned char>(s[i + 1]);
    if ((lead == 0xE0 && second < 0xA0) || (lead == 0xED && second >= 0xA0)) return 0;
  }
  if (n == 4) {
    const auto second = static_cast<unsigned char>(s[i + 1]);
    if ((lead == 0xF0 && second < 0x90) || (lead == 0xF4 && second >= 0x90)) return 0;
  }
  return n;
}

bool learnable(std::string_view ch) {
  if (ch.size() == 1) {
    const auto c = static_cast<unsigned char>(ch[0]);
    return c > 0x20 && c < 0x7F;
  }
  return ch != kMarker;
}

// Splits text into space-delimited pieces, each led by the marker. A
// character is emitted as a mergeable symbol when `known` accepts it and
// as byte symbols otherwise.
template <typename Known>
std::vector<std::vector<Symbol>> pieces_of(std::string_view text, Known&& known) {
  std::vector<std::vector<Symbol>> pieces;
  if (text.empty()) return pieces;
  pieces.push_back({{kMarker, false}});
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == ' ') {
      pieces.push_back({{kMarker, false}});
      ++i;
      continue;
    }
    const std::size_t n = utf8_length(text, i);
    const std::string_view ch = text.substr(i, n == 0 ? 1 : n);
    if (n != 0 && learnable(ch) && known(ch)) {
      pieces.back().push_back({std::string(ch), false});
    } else {
      for (char b : ch) pieces.back().push_back({std::string(1, b), true});
    }
    i += ch.size();
  }
  return pieces;
}

using Pair = std::pair<std::string, std::string>;

}  // namespace

Tokenizer::Tokenizer() {
  for (const char* s : kSpecials) add_token(s);
  for (int b = 0; b < 256; ++b) add_token(byte_token(static_cast<unsigned char>(b)));
}

void Tokenizer::add_token(std::string token) {
  ids_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(std::move(token));
}

void Tokenizer::index_merges() {
  merge_rank_.clear();
  for (std::size_t r = 0; r < merges_.size(); ++r) merge_rank_.emplace(merges_[r], static_cast<int>(r));
}

int Tokenizer::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? -1 : it->second;
}

Tokenizer Tokenizer::train(std::span<const std::string> texts, int vocab_size) {
  Tokenizer tok;

  // Piece frequencies; byte symbols become barriers (empty strings).
  std::map<std::vector<std::string>, long> piece_counts;
  std::map<std::string, long> char_counts;
  for (const auto& t : texts) {
    for (auto& piece : pieces_of(t, [](std::string_view) { return true; })) {
      std::vector<std::string> symbols;
      for (auto& s : piece) {
        if (!s.is_byte) ++char_counts[s.text];
        symbols.push_back(s.is_byte ? std::string() : std::move(s.text));
      }
      ++piece_counts[symbols];
    }
  }
  std::vector<std::pair<std::string, long>> chars(char_counts.begin(), char_counts.end());
  std::stable_sort(chars.begin(), chars.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (tok.id(kMarker) < 0) tok.add_token(kMarker);
  for (const auto& [ch, _] : chars) {
    if (tok.id(ch) < 0) tok.add_token(ch);
  }

  std::vector<std::vector<std::string>> words;
  std::vector<long> freq;
  for (auto& [symbols, count] : piece_counts) {
    words.push_back(symbols);
    freq.push_back(count);
  }

  std::map<Pair, long> pair_counts;
  std::map<Pair, std::set<std::size_t>> where;
  std::set<Pair> blocked;
  const auto visit_pairs = [&](std::size_t w, long sign) {
    const auto& s = words[w];
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      if (s[i].empty() || s[i + 1].empty()) continue;
      Pair p{s[i], s[i + 1]};
      if (blocked.count(p)) continue;
      auto& c = pair_counts[p];
      c += sign * freq[w];
      if (c <= 0) pair_counts.erase(p);
      if (sign > 0) where[p].insert(w);
    }
  };
  for (std::size_t w = 0; w < words.size(); ++w) visit_pairs(w, +1);

  while (tok.vocab_size() < vocab_size && !pair_counts.empty()) {
    // Most frequent pair; ties go to the lexicographically smallest.
    auto best = pair_counts.begin();
    for (auto it = pair_counts.begin(); it != pair_counts.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    if (best->second < 2) break;
    const Pair pair = best->first;
    const std::string merged = pair.first + pair.second;
    if (tok.id(merged) >= 0) {
      // Would collide with a special or byte token.
      blocked.insert(pair);
      pair_counts.erase(pair);
      continue;
    }
    tok.merges_.push_back(pair);
    tok.add_token(merged);

    const std::set<std::size_t> affected = std::move(where[pair]);
    where.erase(pair);
    for (std::size_t w : affected) {
      visit_pairs(w, -1);
      auto& s = words[w];
      std::vector<std::string> next;
      next.reserve(s.size());
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (i + 1 < s.size() && !s[i].empty() && s[i] == pair.first && s[i + 1] == pair.second) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(std::move(s[i]));
        }
      }
      s = std::move(next);
      visit_pairs(w, +1);
    }
  }
  tok.index_merges();
  return tok;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  const auto known = [this](std::string_view ch) { return ids_.count(std::string(ch)) != 0; };
  for (auto& piece : pieces_of(text, known)) {
    // Apply the lowest-ranked merge everywhere until none applies.
    while (true) {
      int best_rank = -1;
      const Pair* best_pair = nullptr;
      for (std::size_t i = 0; i + 1 < piece.size(); ++i) {
        if (piece[i].is_byte || piece[i + 1].is_byte) continue;
        auto it = merge_rank_.find(Pair{piece[i].text, piece[i + 1].text});
        if (it != merge_rank_.end() && (best_rank < 0 || it->second < best_rank)) {
          best_rank = it->second;
          best_pair = &it->first;
        }
      }
      if (best_rank < 0) break;
      std::vector<Symbol> next;
      for (std::size_t i = 0; i < piece.size(); ++i) {
        if (i + 1 < piece.size() && !piece[i].is_byte && !piece[i + 1].is_byte &&
            piece[i].text == best_pair->first && piece[i + 1].text == best_pair->second) {
          next.push_back({piece[i].text + piece[i + 1].text, false});
          ++i;
        } else {
          next.push_back(std::move(piece[i]));
        }
      }
      piece = std::move(next);
    }
    for (const auto& s : piece) {
      if (s.is_byte) {
        if (!byte_fallback_) throw UnknownTokenError("character not covered by the vocabulary: " + s.text);
        ids.push_back(kFirstByte + static_cast<unsigned char>(s.text[0]));
      } else {
        auto it = ids_.find(s.text);
        if (it == ids_.end() && s.text == kMarker && byte_fallback_) {
          // Untrained vocabularies spell the word boundary as a space byte.
          ids.push_back(kFirstByte + ' ');
          continue;
        }
        if (it == ids_.end()) throw UnknownTokenError("symbol missing from vocabulary: " + s.text);
        ids.push_back(it->second);
      }
    }
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= vocab_size()) throw UnknownTokenError("token id out of range: " + std::to_string(id));
    if (id < kFirstByte) continue;
    if (id < kFirstLearned) {
      out.push_back(static_cast<char>(id - kFirstByte));
      continue;
    }
    const std::string& t = tokens_[static_cast<std::size_t>(id)];
    std::size_t i = 0;
    while (i < t.size()) {
      if (t.compare(i, kMarker.size(), kMarker) == 0) {
        out.push_back(' ');
        i += kMarker.size();
      } else {
        out.push_back(t[i++]);
      }
    }
  }
  if (!out.empty() && out.front() == ' ') out.erase(0, 1);
  return out;
}

std::string Tokenizer::vocab_text() const {
  std::string out;
  for (const auto& t : tokens_) out += t + "\n";
  return out;
}

std::string Tokenizer::merges_text() const {
  std::string out = "#version: 0.2\n";
  for (const auto& [a, b] : merges_) out += a + " " + b + "\n";
  return out;
}

Tokenizer Tokenizer::from_text(std::string_view vocab, std::string_view merges) {
  Tokenizer tok;
  std::istringstream vocab_in{std::string(vocab)};
  std::string line;
  std::size_t index = 0;
  while (std::getline(vocab_in, line)) {
    if (index < tok.tokens_.size()) {
      if (line != tok.tokens_[index]) throw CheckpointError("vocabulary does not start with the reserved tokens");
    } else {
      if (tok.id(line) >= 0) throw CheckpointError("duplicate vocabulary entry: " + line);
      tok.add_token(line);
    }
    ++index;
  }
  std::istringstream merges_in{std::string(merges)};
  while (std::getline(merges_in, line)) {
    if (line.empty() || line.rfind("#version", 0) == 0) continue;
    const auto space = line.find(' ');
    if (space == std::string::npos) throw CheckpointError("malformed merge line: " + line);
    Pair p{line.substr(0, space), line.substr(space + 1)};
    if (tok.id(p.first + p.second) < 0) throw CheckpointError("merge result missing from vocabulary: " + line);
    tok.merges_.push_back(std::move(p));
  }
  tok.index_merges();
  return tok;
}

void Tokenizer::save(const std::filesystem::path& vocab_path, const std::filesystem::path& merges_path) const {
  std::ofstream(vocab_path, std::ios::binary | std::ios::trunc) << vocab_text();
  std::ofstream(merges_path, std::ios::binary | std::ios::trunc) << merges_text();
}

Tokenizer Tokenizer::load(const std::filesystem::path& vocab_path, const std::filesystem::path& merges_path) {
  const auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw CheckpointError("cannot open " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  return from_text(slurp(vocab_path), slurp(merges_path));
}

}  // namespace punchline
