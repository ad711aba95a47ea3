#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. They follow the written rules directly and share no code with the
// library beyond plain data types.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "punchline/corpus.hpp"
#include "punchline/kgraph.hpp"
#include "punchline/tensor.hpp"

namespace oracle {

using punchline::Matrix;

// ---- de-duplication -------------------------------------------------------

inline std::map<std::string, long> bag_of_words(const std::string& text) {
  std::map<std::string, long> bag;
  std::string word;
  for (char c : text + " ") {
    if (std::isalnum(static_cast<unsigned char>(c)) && static_cast<unsigned char>(c) < 128) {
      word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!word.empty()) {
      ++bag[word];
      word.clear();
    }
  }
  return bag;
}

inline double cosine(const std::map<std::string, long>& a, const std::map<std::string, long>& b) {
  double dot = 0, na = 0, nb = 0;
  for (const auto& [w, c] : a) {
    na += double(c) * double(c);
    auto it = b.find(w);
    if (it != b.end()) dot += double(c) * double(it->second);
  }
  for (const auto& [w, c] : b) nb += double(c) * double(c);
  if (na == 0 || nb == 0) return 0;
  return dot / std::sqrt(na * nb);
}

// Keep-first: a record survives iff its cosine to every earlier survivor is
// at most the threshold.
inline std::vector<punchline::corpus::JokeRecord> dedup(const std::vector<punchline::corpus::JokeRecord>& in,
                                                        double threshold) {
  std::vector<punchline::corpus::JokeRecord> kept;
  for (const auto& r : in) {
    bool drop = false;
    for (const auto& k : kept) {
      if (cosine(bag_of_words(r.setup + " " + r.punchline), bag_of_words(k.setup + " " + k.punchline)) > threshold)
        drop = true;
    }
    if (!drop) kept.push_back(r);
  }
  return kept;
}

// Synthetic jokes over a small vocabulary; every fifth one is a light edit
// of an earlier joke so that near-duplicates actually occur.
inline std::vector<punchline::corpus::JokeRecord> synthetic_jokes(int n, unsigned seed) {
  static const char* words[] = {"cat", "dog", "bar", "walks", "into", "the", "a", "why", "did", "chicken",
                                "cross", "road", "doctor", "says", "my", "wife", "lawyer", "fish", "cow", "moon"};
  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> word(0, 19), len(5, 12);
  std::vector<punchline::corpus::JokeRecord> out;
  for (int i = 0; i < n; ++i) {
    punchline::corpus::JokeRecord r;
    if (i % 5 == 4 && !out.empty()) {
      r = out[std::uniform_int_distribution<std::size_t>(0, out.size() - 1)(rng)];
      if (rng() % 2) r.punchline += std::string(" ") + words[word(rng)];
      out.push_back(r);
      continue;
    }
    for (int k = len(rng); k > 0; --k) r.setup += std::string(words[word(rng)]) + (k > 1 ? " " : ".");
    for (int k = len(rng) / 2; k > 0; --k) r.punchline += std::string(words[word(rng)]) + (k > 1 ? " " : "!");
    out.push_back(r);
  }
  return out;
}

// Two jokes whose bag-of-words vectors are (0,1,5,5,7) and (1,3,4,7,5) over
// {ant, bee, cat, dog, elk}: both squared norms are 100 and the dot product
// is 93, so the cosine is 0.93 exactly.
inline std::pair<punchline::corpus::JokeRecord, punchline::corpus::JokeRecord> boundary_pair() {
  const auto words = [](std::vector<std::pair<const char*, int>> counts) {
    std::string s;
    for (const auto& [w, c] : counts) {
      for (int i = 0; i < c; ++i) s += std::string(s.empty() ? "" : " ") + w;
    }
    return s;
  };
  punchline::corpus::JokeRecord a{words({{"bee", 1}, {"cat", 5}}) + ".", words({{"dog", 5}, {"elk", 7}}) + ".", {}};
  punchline::corpus::JokeRecord b{words({{"ant", 1}, {"bee", 3}, {"cat", 4}}) + ".",
                                  words({{"dog", 7}, {"elk", 5}}) + ".", {}};
  return {a, b};
}

// ---- graph builder --------------------------------------------------------

struct LabeledGraph {
  std::multiset<std::pair<int, std::string>> nodes;  // (kind, label)
  std::multiset<std::pair<std::string, std::string>> edges;
  friend bool operator==(const LabeledGraph&, const LabeledGraph&) = default;
};

inline std::string strip(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Relations are identified by "#index" suffixes so that repeated relation
// labels stay distinct while edges are compared by label.
inline LabeledGraph brute_force_graph(const std::vector<punchline::Triple>& triples) {
  LabeledGraph g;
  std::vector<std::string> entities;
  for (const auto& t : triples) {
    for (const auto& e : {strip(t.subject), strip(t.object)}) {
      if (std::find(entities.begin(), entities.end(), e) == entities.end()) entities.push_back(e);
    }
  }
  for (const auto& e : entities) g.nodes.insert({0, e});
  for (std::size_t i = 0; i < triples.size(); ++i) {
    const std::string r = strip(triples[i].relation);
    const std::string tag = "#" + std::to_string(i);
    g.nodes.insert({1, r});
    g.nodes.insert({2, "<r>" + r});
    const std::string s = strip(triples[i].subject), o = strip(triples[i].object);
    g.edges.insert({s, r + tag});
    g.edges.insert({r + tag, o});
    g.edges.insert({o, "<r>" + r + tag});
    g.edges.insert({"<r>" + r + tag, s});
  }
  return g;
}

// Labels the library's graph the same way. Relation nodes are numbered in
// creation order, which is one relation pair per triple.
inline LabeledGraph label(const punchline::kgraph::GraphStructure& graph) {
  LabeledGraph g;
  std::vector<std::string> names(graph.nodes.size());
  int relation_index = 0, reverse_index = 0;
  for (const auto& n : graph.nodes) {
    g.nodes.insert({static_cast<int>(n.kind), n.label});
    if (n.kind == punchline::kgraph::NodeKind::kEntity) names[n.id] = n.label;
    if (n.kind == punchline::kgraph::NodeKind::kRelation) names[n.id] = n.label + "#" + std::to_string(relation_index++);
    if (n.kind == punchline::kgraph::NodeKind::kReverseRelation)
      names[n.id] = n.label + "#" + std::to_string(reverse_index++);
  }
  for (const auto& e : graph.edges) g.edges.insert({names[e.source], names[e.target]});
  return g;
}

inline std::vector<punchline::Triple> random_triples(std::mt19937& rng, int max_triples) {
  static const char* entities[] = {"Donald Trump", "Cocaine", "drug", "pain", "politics", "Apple", "Steve Jobs",
                                   "cat", "  moon ", "United States"};
  static const char* relations[] = {"instance of", "field of work", "position held", "founded by", "Description",
                                    "medical condition treated"};
  std::vector<punchline::Triple> out(std::uniform_int_distribution<int>(1, max_triples)(rng));
  for (auto& t : out) {
    t.subject = entities[rng() % 10];
    t.relation = relations[rng() % 6];
    t.object = entities[rng() % 10];
  }
  return out;
}

inline std::size_t unique_entities(const std::vector<punchline::Triple>& triples) {
  std::vector<std::string> seen;
  for (const auto& t : triples) {
    for (const auto& e : {strip(t.subject), strip(t.object)}) {
      if (std::find(seen.begin(), seen.end(), e) == seen.end()) seen.push_back(e);
    }
  }
  return seen.size();
}

// ---- graph attention --------------------------------------------------------

// Dense GAT layer: a full |V| x |V| score matrix per head with non-neighbors
// set to -inf before the softmax. Returns the layer output and fills
// `alpha[head]` with the dense attention matrices.
inline Matrix dense_gat_layer(const Matrix& h, const Matrix& wq, const Matrix& wk, const Matrix& wv, int heads,
                              const std::vector<std::vector<int>>& neighbors, double slope,
                              std::vector<Matrix>* alpha = nullptr) {
  const long n = h.rows(), d = wq.cols(), dh = d / heads;
  const Matrix q = h * wq, k = h * wk, v = h * wv;
  Matrix out = Matrix::Zero(n, d);
  if (alpha) alpha->assign(heads, Matrix::Zero(n, n));
  for (int m = 0; m < heads; ++m) {
    Matrix score = Matrix::Constant(n, n, -std::numeric_limits<double>::infinity());
    for (long i = 0; i < n; ++i) {
      for (int j : neighbors[i]) {
        double s = 0;
        for (long c = 0; c < dh; ++c) s += k(j, m * dh + c) * q(i, m * dh + c);
        score(i, j) = s;
      }
    }
    for (long i = 0; i < n; ++i) {
      const double top = score.row(i).maxCoeff();
      double z = 0;
      for (long j = 0; j < n; ++j) z += std::exp(score(i, j) - top);
      for (long j = 0; j < n; ++j) {
        const double a = std::exp(score(i, j) - top) / z;
        if (alpha) (*alpha)[m](i, j) = a;
        for (long c = 0; c < dh; ++c) out(i, m * dh + c) += a * v(j, m * dh + c);
      }
    }
  }
  for (long i = 0; i < out.size(); ++i) {
    double& x = out.data()[i];
    if (x < 0) x *= slope;
  }
  return out;
}

}  // namespace oracle
