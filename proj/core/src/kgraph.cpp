#include "punchline/kgraph.hpp"

#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "punchline/errors.hpp"
#include "punchline/text.hpp"

namespace punchline::kgraph {

const char* kind_name(NodeKind kind) {
  switch (kind) {
    case NodeKind::kEntity: return "entity";
    case NodeKind::kRelation: return "relation";
    case NodeKind::kReverseRelation: return "reverse_relation";
  }
  return "unknown";
}

std::size_t GraphStructure::entity_count() const {
  std::size_t n = 0;
  for (const auto& node : nodes) n += node.kind == NodeKind::kEntity ? 1 : 0;
  return n;
}

std::vector<std::vector<int>> GraphStructure::in_neighborhoods() const {
  std::vector<std::set<int>> sets(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) sets[i].insert(static_cast<int>(i));
  for (const auto& e : edges) sets[static_cast<std::size_t>(e.target)].insert(e.source);
  std::vector<std::vector<int>> out(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    // Self first, then the rest ascending.
    out[i].push_back(static_cast<int>(i));
    for (int j : sets[i]) {
      if (j != static_cast<int>(i)) out[i].push_back(j);
    }
  }
  return out;
}

GraphStructure build_graph(std::span<const Triple> triples) {
  GraphStructure g;
  std::unordered_map<std::string, int> entities;
  const auto add_node = [&g](NodeKind kind, std::string label) {
    const int id = static_cast<int>(g.nodes.size());
    g.nodes.push_back({id, kind, std::move(label)});
    return id;
  };
  const auto entity = [&](const std::string& raw) {
    std::string label(text::trim(raw));
    auto it = entities.find(label);
    if (it != entities.end()) return it->second;
    const int id = add_node(NodeKind::kEntity, label);
    entities.emplace(std::move(label), id);
    return id;
  };
  for (const auto& t : triples) {
    const int s = entity(t.subject);
    const std::string relation(text::trim(t.relation));
    const int r = add_node(NodeKind::kRelation, relation);
    const int rr = add_node(NodeKind::kReverseRelation, kReversePrefix + relation);
    const int o = entity(t.object);
    g.edges.push_back({s, r});
    g.edges.push_back({r, o});
    g.edges.push_back({o, rr});
    g.edges.push_back({rr, s});
  }
  return g;
}

bool weakly_connected(const GraphStructure& graph) {
  if (graph.nodes.empty()) return true;
  std::vector<std::vector<int>> adjacency(graph.nodes.size());
  for (const auto& e : graph.edges) {
    adjacency[static_cast<std::size_t>(e.source)].push_back(e.target);
    adjacency[static_cast<std::size_t>(e.target)].push_back(e.source);
  }
  std::vector<bool> seen(graph.nodes.size(), false);
  std::vector<int> stack{0};
  seen[0] = true;
  std::size_t reached = 1;
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    for (int w : adjacency[static_cast<std::size_t>(v)]) {
      if (!seen[static_cast<std::size_t>(w)]) {
        seen[static_cast<std::size_t>(w)] = true;
        ++reached;
        stack.push_back(w);
      }
    }
  }
  return reached == graph.nodes.size();
}

std::string to_dot(const GraphStructure& graph) {
  const auto escape = [](const std::string& s) {
    std::string out;
    for (char c : s) {
      if (c == '"' || c == '\\') out.push_back('\\');
      out.push_back(c);
    }
    return out;
  };
  std::ostringstream dot;
  dot << "digraph knowledge {\n  node [shape=box];\n";
  for (const auto& node : graph.nodes) {
    const char* color = node.kind == NodeKind::kEntity     ? "red"
                        : node.kind == NodeKind::kRelation ? "blue"
                                                           : "green";
    dot << "  n" << node.id << " [label=\"" << escape(node.label) << "\", color=" << color << "];\n";
  }
  for (const auto& e : graph.edges) dot << "  n" << e.source << " -> n" << e.target << ";\n";
  dot << "}\n";
  return dot.str();
}

std::vector<int> label_tokens(const Node& node, const Tokenizer& tokenizer) {
  std::vector<int> ids;
  std::string_view label = node.label;
  if (node.kind == NodeKind::kReverseRelation) {
    ids.push_back(Tokenizer::kReverse);
    if (label.rfind(kReversePrefix, 0) == 0) label.remove_prefix(std::string_view(kReversePrefix).size());
  }
  const auto body = tokenizer.encode(label);
  ids.insert(ids.end(), body.begin(), body.end());
  if (ids.empty()) throw UnknownTokenError("node label produced no tokens: '" + node.label + "'");
  return ids;
}

NodeInitializer::NodeInitializer(ParamStore& store, const std::string& prefix, Eigen::Index vocab_size,
                                 Eigen::Index d_model, std::mt19937_64& rng)
    : vocab_size_(vocab_size), d_model_(d_model) {
  if (d_model % 2 != 0) throw std::invalid_argument("node initializer needs an even d_model");
  const Eigen::Index d_rnn = d_model / 2;
  embedding_ = store.create(prefix + ".embedding", xavier_uniform(vocab_size, d_model, rng));
  forward_ = Lstm(store, prefix + ".lstm_forward", d_model, d_rnn, rng);
  backward_ = Lstm(store, prefix + ".lstm_backward", d_model, d_rnn, rng);
  projection_ = store.create(prefix + ".projection", xavier_uniform(2 * d_rnn, d_model, rng));
}

Var NodeInitializer::encode_label(std::span<const int> tokens) const {
  if (tokens.empty()) throw UnknownTokenError("empty node label");
  for (int t : tokens) {
    if (t < 0 || t >= vocab_size_) throw UnknownTokenError("label token outside the vocabulary");
  }
  const Var embedded = ag::embedding(embedding_, tokens);
  const Var both[] = {forward_.last_hidden(embedded, false), backward_.last_hidden(embedded, true)};
  return ag::matmul(ag::concat_cols(both), projection_);
}

Var NodeInitializer::init_node_features(std::span<const std::vector<int>> node_tokens) const {
  std::map<std::vector<int>, int> unique;
  std::vector<Var> encoded;
  std::vector<int> rows;
  rows.reserve(node_tokens.size());
  for (const auto& tokens : node_tokens) {
    auto [it, inserted] = unique.emplace(tokens, static_cast<int>(encoded.size()));
    if (inserted) encoded.push_back(encode_label(tokens));
    rows.push_back(it->second);
  }
  if (encoded.empty()) throw std::invalid_argument("init_node_features: no nodes");
  return ag::gather_rows(ag::concat_rows(encoded), rows);
}

Var init_node_features(std::span<const Node> nodes, const NodeInitializer& initializer, const Tokenizer& tokenizer) {
  std::vector<std::vector<int>> tokens;
  tokens.reserve(nodes.size());
  for (const auto& node : nodes) tokens.push_back(label_tokens(node, tokenizer));
  return initializer.init_node_features(tokens);
}

}  // namespace punchline::kgraph
