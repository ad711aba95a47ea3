#include "punchline/model.hpp"

#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "punchline/errors.hpp"

namespace punchline {

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.d_model = 512;
  c.n_blocks = 4;
  c.n_heads = 8;
  c.d_ff = 2048;
  c.gat_heads = 8;
  c.vocab_size = 25000;
  return c;
}

void ModelConfig::validate() const {
  if (d_model <= 0 || n_blocks <= 0 || n_heads <= 0 || d_ff <= 0 || vocab_size <= 0 || max_len <= 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw ConfigError("n_heads must divide d_model");
  if (gat_heads <= 0 || d_model % gat_heads != 0) throw ConfigError("gat_heads must divide d_model");
  if (d_model % 2 != 0) throw ConfigError("d_model must be even");
  if (gat_layers < 0) throw ConfigError("gat_layers must not be negative");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  if (vocab_size < 260) throw ConfigError("vocab_size must cover the specials and byte tokens (260)");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"d_model", c.d_model},       {"n_blocks", c.n_blocks},     {"n_heads", c.n_heads},
                     {"d_ff", c.d_ff},             {"gat_layers", c.gat_layers}, {"gat_heads", c.gat_heads},
                     {"vocab_size", c.vocab_size}, {"max_len", c.max_len},       {"dropout", c.dropout},
                     {"gat_slope", c.gat_slope}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("d_model").get_to(c.d_model);
  j.at("n_blocks").get_to(c.n_blocks);
  j.at("n_heads").get_to(c.n_heads);
  j.at("d_ff").get_to(c.d_ff);
  j.at("gat_layers").get_to(c.gat_layers);
  j.at("gat_heads").get_to(c.gat_heads);
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("max_len").get_to(c.max_len);
  j.at("dropout").get_to(c.dropout);
  j.at("gat_slope").get_to(c.gat_slope);
}

std::vector<int> EncodedExample::decoder_input() const {
  std::vector<int> in{Tokenizer::kBos};
  if (!target.empty()) in.insert(in.end(), target.begin(), target.end() - 1);
  return in;
}

EncodedExample encode_example(const corpus::JokeRecord& record, const Tokenizer& tokenizer, int max_len) {
  EncodedExample ex;
  ex.source = tokenizer.encode(record.setup);
  ex.source.push_back(Tokenizer::kEos);
  if (static_cast<int>(ex.source.size()) > max_len) {
    throw LengthError("set-up has " + std::to_string(ex.source.size()) + " tokens, limit " + std::to_string(max_len));
  }
  ex.target = tokenizer.encode(record.punchline);
  ex.target.push_back(Tokenizer::kEos);
  if (static_cast<int>(ex.target.size()) > max_len) {
    throw LengthError("punchline has " + std::to_string(ex.target.size()) + " tokens, limit " +
                      std::to_string(max_len));
  }
  ex.graph = kgraph::build_graph(record.triples);
  for (const auto& node : ex.graph.nodes) ex.node_tokens.push_back(kgraph::label_tokens(node, tokenizer));
  ex.neighbors = ex.graph.in_neighborhoods();
  return ex;
}

Var fusion_attention(const MultiHeadAttention& attention, const Var& states, const Var& nodes,
                     const ForwardContext& ctx) {
  return attention(states, nodes, nullptr, ctx);
}

Var knowledge_gate(const Var& states, const Var& fused, const Var& gate_weight, Matrix* lambda_out) {
  const Var lambda = ag::sigmoid(ag::matmul_nt(states, gate_weight));
  if (lambda_out) *lambda_out = lambda.value();
  return ag::add(ag::mul(lambda, states), ag::mul(ag::one_minus(lambda), fused));
}

PunchlineModel::PunchlineModel(const ModelConfig& config, bool with_knowledge, std::uint64_t seed)
    : config_(config), with_knowledge_(with_knowledge) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const Eigen::Index d = config_.d_model;
  const Eigen::Index v = config_.vocab_size;
  token_embedding_ = params_.create("embedding.token", xavier_uniform(v, d, rng));
  for (int n = 0; n < config_.n_blocks; ++n) {
    const std::string p = "encoder.block" + std::to_string(n);
    encoder_.push_back({MultiHeadAttention(params_, p + ".self_attn", d, config_.n_heads, "encoder", rng),
                        LayerNorm(params_, p + ".norm1", d),
                        FeedForward(params_, p + ".ffn", d, config_.d_ff, rng), LayerNorm(params_, p + ".norm2", d)});
  }
  for (int n = 0; n < config_.n_blocks; ++n) {
    const std::string p = "decoder.block" + std::to_string(n);
    DecoderBlock block;
    block.self_attention = MultiHeadAttention(params_, p + ".self_attn", d, config_.n_heads, "self", rng);
    block.norm1 = LayerNorm(params_, p + ".norm1", d);
    block.cross_attention = MultiHeadAttention(params_, p + ".cross_attn", d, config_.n_heads, "cross", rng);
    block.norm2 = LayerNorm(params_, p + ".norm2", d);
    if (with_knowledge_) {
      block.fusion = MultiHeadAttention(params_, p + ".fusion", d, config_.n_heads, "fusion", rng);
      block.gate = params_.create(p + ".gate.weight", xavier_uniform(d, d, rng));
    }
    block.feed_forward = FeedForward(params_, p + ".ffn", d, config_.d_ff, rng);
    block.norm3 = LayerNorm(params_, p + ".norm3", d);
    decoder_.push_back(std::move(block));
  }
  output_projection_ = params_.create("output.weight", xavier_uniform(v, d, rng));
  if (with_knowledge_) {
    node_initializer_ = kgraph::NodeInitializer(params_, "knowledge.init", v, d, rng);
    for (int l = 0; l < config_.gat_layers; ++l) {
      gat_layers_.push_back(
          graph_encoder::make_gat_layer(params_, "knowledge.gat" + std::to_string(l), d, config_.gat_heads, rng));
    }
  }
  positions_ = sinusoidal_positions(config_.max_len + 1, d);
}

bool PunchlineModel::is_knowledge_only(const std::string& name) {
  return name.rfind("knowledge.", 0) == 0 || name.find(".fusion.") != std::string::npos ||
         name.find(".gate.") != std::string::npos;
}

Var PunchlineModel::embed(std::span<const int> tokens, const ForwardContext& ctx) const {
  for (int t : tokens) {
    if (t < 0 || t >= config_.vocab_size) throw UnknownTokenError("token id " + std::to_string(t) + " out of range");
  }
  const auto length = static_cast<Eigen::Index>(tokens.size());
  const Matrix pos = length <= positions_.rows() ? Matrix(positions_.topRows(length))
                                                 : sinusoidal_positions(length, config_.d_model);
  const Var x = ag::add(ag::scale(ag::embedding(token_embedding_, tokens), std::sqrt(double(config_.d_model))),
                        ag::constant(pos));
  return ctx.drop(x);
}

Var PunchlineModel::encode_setup(std::span<const int> tokens, const ForwardContext& ctx) const {
  if (tokens.empty()) throw LengthError("empty set-up");
  if (static_cast<int>(tokens.size()) > config_.max_len) {
    throw LengthError("set-up has " + std::to_string(tokens.size()) + " tokens, limit " +
                      std::to_string(config_.max_len));
  }
  Var x = embed(tokens, ctx);
  for (const auto& block : encoder_) {
    x = block.norm1(ag::add(x, ctx.drop(block.self_attention(x, x, nullptr, ctx))));
    x = block.norm2(ag::add(x, ctx.drop(block.feed_forward(x, ctx))));
  }
  return x;
}

std::optional<Var> PunchlineModel::encode_graph(const EncodedExample& example, const ForwardContext& ctx) const {
  if (!with_knowledge_ || !example.has_knowledge()) return std::nullopt;
  const Var h0 = node_initializer_.init_node_features(example.node_tokens);
  std::vector<graph_encoder::AttentionMap> maps;
  const graph_encoder::Activation act{graph_encoder::Activation::Kind::kLeakyRelu, config_.gat_slope};
  Var h = graph_encoder::encode_knowledge(h0, gat_layers_, example.neighbors, act, ctx.probe ? &maps : nullptr);
  if (ctx.probe) {
    const auto n = static_cast<Eigen::Index>(example.neighbors.size());
    for (const auto& map : maps) {
      for (const auto& head : map.weights) {
        Matrix dense = Matrix::Zero(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
          const auto& nbrs = map.neighbors[static_cast<std::size_t>(i)];
          for (std::size_t k = 0; k < nbrs.size(); ++k) dense(i, nbrs[k]) = head[static_cast<std::size_t>(i)][k];
        }
        ctx.probe->entries.push_back({"gat", std::move(dense)});
      }
    }
  }
  return h;
}

Var PunchlineModel::decode(std::span<const int> prefix, const Var& memory, const std::optional<Var>& knowledge,
                           const ForwardContext& ctx, DecoderTrace* trace) const {
  if (prefix.empty()) throw LengthError("empty decoder prefix");
  const auto t = static_cast<Eigen::Index>(prefix.size());
  const ag::Mask mask = causal_mask(t);
  const bool fuse = with_knowledge_ && knowledge.has_value() && !ctx.bypass_knowledge;
  Var y = embed(prefix, ctx);
  for (const auto& block : decoder_) {
    y = block.norm1(ag::add(y, ctx.drop(block.self_attention(y, y, &mask, ctx))));
    const Var s = block.norm2(ag::add(y, ctx.drop(block.cross_attention(y, memory, nullptr, ctx))));
    Var g = s;
    if (trace) trace->setup_states.push_back(s.value());
    if (fuse) {
      const Var a = fusion_attention(*block.fusion, s, *knowledge, ctx);
      Matrix lambda;
      g = knowledge_gate(s, a, *block.gate, &lambda);
      if (trace) {
        trace->fusion.push_back(a.value());
        trace->gates.push_back(lambda);
      }
      if (ctx.probe) ctx.probe->gates.push_back(std::move(lambda));
    }
    y = block.norm3(ag::add(g, ctx.drop(block.feed_forward(g, ctx))));
  }
  if (trace) trace->final_states = y.value();
  return ag::matmul_nt(y, output_projection_);
}

Var PunchlineModel::loss_sum(const EncodedExample& example, const ForwardContext& ctx) const {
  const Var memory = encode_setup(example.source, ctx);
  const auto knowledge = encode_graph(example, ctx);
  const auto input = example.decoder_input();
  const Var logits = decode(input, memory, knowledge, ctx);
  return ag::cross_entropy_sum(logits, example.target, Tokenizer::kPad);
}

std::vector<double> PunchlineModel::decode_step(std::span<const int> prefix, const Var& memory,
                                                const std::optional<Var>& knowledge,
                                                const ForwardContext& ctx) const {
  ag::NoGradGuard no_grad;
  const Var logits = decode(prefix, memory, knowledge, ctx);
  const auto last = logits.value().row(logits.rows() - 1);
  const double top = last.maxCoeff();
  std::vector<double> probs(static_cast<std::size_t>(last.size()));
  double total = 0.0;
  for (Eigen::Index i = 0; i < last.size(); ++i) {
    probs[static_cast<std::size_t>(i)] = std::exp(last(i) - top);
    total += probs[static_cast<std::size_t>(i)];
  }
  for (double& p : probs) p /= total;
  return probs;
}

}  // namespace punchline
