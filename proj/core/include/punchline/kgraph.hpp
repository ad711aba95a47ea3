#pragma once

// Knowledge graph construction from a triple set: folded entity nodes, one
// relation and one reverse-relation node per triple, and the bidirectional
// LSTM initializer that turns node labels into initial features.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "punchline/nn.hpp"
#include "punchline/tensor.hpp"
#include "punchline/tokenizer.hpp"
#include "punchline/triple.hpp"

namespace punchline::kgraph {

enum class NodeKind { kEntity, kRelation, kReverseRelation };

const char* kind_name(NodeKind kind);

inline constexpr const char* kReversePrefix = "<r>";

struct Node {
  int id = 0;
  NodeKind kind = NodeKind::kEntity;
  std::string label;  // reverse-relation labels start with "<r>"

  friend bool operator==(const Node&, const Node&) = default;
};

struct Edge {
  int source = 0;
  int target = 0;

  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

// Structure only; features live with the model that produces them.
struct GraphStructure {
  std::vector<Node> nodes;
  std::vector<Edge> edges;

  std::size_t entity_count() const;
  // For each node: itself followed by every node with an edge into it,
  // ascending and without repeats.
  std::vector<std::vector<int>> in_neighborhoods() const;
};

struct KnowledgeGraph {
  GraphStructure structure;
  Var features;  // |V| x d
};

// Entities fold by exact label after trimming. Per triple the nodes
// s, r, <r>r, o are created in that order (s and o only when new) with
// edges s->r, r->o, o-><r>r, <r>r->s.
GraphStructure build_graph(std::span<const Triple> triples);

// Undirected reachability check.
bool weakly_connected(const GraphStructure& graph);

// Graphviz export; entities red, relations blue, reverse relations green.
std::string to_dot(const GraphStructure& graph);

// Token ids of a node label: the label's BPE tokens, with the reserved
// "<r>" token in front for reverse relations.
std::vector<int> label_tokens(const Node& node, const Tokenizer& tokenizer);

// Embeds label tokens, runs a forward and a backward LSTM over them and
// projects [h_fwd ; h_bwd] (2 * d/2) to d.
class NodeInitializer {
 public:
  NodeInitializer() = default;
  NodeInitializer(ParamStore& store, const std::string& prefix, Eigen::Index vocab_size, Eigen::Index d_model,
                  std::mt19937_64& rng);

  Var encode_label(std::span<const int> tokens) const;

  // Row i is the feature of node i; identical token sequences share one
  // encoding.
  Var init_node_features(std::span<const std::vector<int>> node_tokens) const;

  Eigen::Index d_model() const { return d_model_; }

 private:
  Eigen::Index vocab_size_ = 0;
  Eigen::Index d_model_ = 0;
  Var embedding_;
  Lstm forward_;
  Lstm backward_;
  Var projection_;  // 2 * d_rnn x d
};

// H0 for a node list: tokenizes every label and runs the initializer.
Var init_node_features(std::span<const Node> nodes, const NodeInitializer& initializer, const Tokenizer& tokenizer);

}  // namespace punchline::kgraph
