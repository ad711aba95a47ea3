#pragma once

// The fused sequence-to-sequence network. A standard Transformer encoder
// reads the set-up; each decoder block runs masked self-attention,
// cross-attention to the set-up (giving S), the knowledge fusion layer
//
//   A      = MultiHead(S, H, H)
//   lambda = sigmoid(S W_g^T)
//   G      = lambda * S + (1 - lambda) * A
//
// and a feed-forward sub-layer. The last block's states are projected by
// W_o (|V| x d) into next-token logits.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "punchline/corpus.hpp"
#include "punchline/graph_encoder.hpp"
#include "punchline/kgraph.hpp"
#include "punchline/nn.hpp"
#include "punchline/tensor.hpp"
#include "punchline/tokenizer.hpp"

namespace punchline {

struct ModelConfig {
  int d_model = 64;
  int n_blocks = 2;
  int n_heads = 4;
  int d_ff = 256;
  int gat_layers = 2;
  int gat_heads = 4;
  int vocab_size = 2000;
  int max_len = 128;
  double dropout = 0.1;
  double gat_slope = 0.2;

  static ModelConfig desk();
  static ModelConfig paper();
  // Throws ConfigError.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// A record in model input form.
struct EncodedExample {
  std::vector<int> source;  // set-up tokens followed by EOS
  std::vector<int> target;  // punchline tokens followed by EOS
  kgraph::GraphStructure graph;
  std::vector<std::vector<int>> node_tokens;
  graph_encoder::Neighborhoods neighbors;

  bool has_knowledge() const { return !graph.nodes.empty(); }
  // BOS followed by every target token but the last.
  std::vector<int> decoder_input() const;
};

// Throws LengthError when the set-up exceeds max_len tokens.
EncodedExample encode_example(const corpus::JokeRecord& record, const Tokenizer& tokenizer, int max_len);

// Per-block decoder internals captured during a forward pass.
struct DecoderTrace {
  std::vector<Matrix> setup_states;  // S^n
  std::vector<Matrix> fusion;        // A^n (empty when bypassed)
  std::vector<Matrix> gates;         // lambda^n (empty when bypassed)
  Matrix final_states;               // e_1 .. e_t
};

// A^n: multi-head attention from decoder states to encoded graph nodes.
Var fusion_attention(const MultiHeadAttention& attention, const Var& states, const Var& nodes,
                     const ForwardContext& ctx);

// lambda * S + (1 - lambda) * A with lambda = sigmoid(S W_g^T), per
// dimension. `lambda_out` receives lambda when non-null.
Var knowledge_gate(const Var& states, const Var& fused, const Var& gate_weight, Matrix* lambda_out = nullptr);

class PunchlineModel {
 public:
  // A model without knowledge is the plain Transformer used for
  // pretraining; it owns only the pretrainable partition.
  PunchlineModel(const ModelConfig& config, bool with_knowledge, std::uint64_t seed);

  PunchlineModel(const PunchlineModel&) = delete;
  PunchlineModel& operator=(const PunchlineModel&) = delete;
  PunchlineModel(PunchlineModel&&) = default;

  const ModelConfig& config() const { return config_; }
  bool with_knowledge() const { return with_knowledge_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // True for fusion attention, gate matrices, the node initializer and the
  // GAT layers.
  static bool is_knowledge_only(const std::string& name);

  Var encode_setup(std::span<const int> tokens, const ForwardContext& ctx) const;

  // H for the example's graph; nullopt when the model has no knowledge
  // side or the graph is empty.
  std::optional<Var> encode_graph(const EncodedExample& example, const ForwardContext& ctx) const;

  // Logits (prefix length x |V|) for every prefix position.
  Var decode(std::span<const int> prefix, const Var& memory, const std::optional<Var>& knowledge,
             const ForwardContext& ctx, DecoderTrace* trace = nullptr) const;

  // Summed teacher-forced cross-entropy over the target tokens.
  Var loss_sum(const EncodedExample& example, const ForwardContext& ctx) const;

  // Next-token distribution after `prefix` (which starts with BOS).
  std::vector<double> decode_step(std::span<const int> prefix, const Var& memory,
                                  const std::optional<Var>& knowledge, const ForwardContext& ctx = {}) const;

 private:
  struct EncoderBlock {
    MultiHeadAttention self_attention;
    LayerNorm norm1;
    FeedForward feed_forward;
    LayerNorm norm2;
  };
  struct DecoderBlock {
    MultiHeadAttention self_attention;
    LayerNorm norm1;
    MultiHeadAttention cross_attention;
    LayerNorm norm2;
    std::optional<MultiHeadAttention> fusion;
    std::optional<Var> gate;  // W_g, d x d
    FeedForward feed_forward;
    LayerNorm norm3;
  };

  Var embed(std::span<const int> tokens, const ForwardContext& ctx) const;

  ModelConfig config_;
  bool with_knowledge_;
  ParamStore params_;
  Var token_embedding_;
  Var output_projection_;
  std::vector<EncoderBlock> encoder_;
  std::vector<DecoderBlock> decoder_;
  kgraph::NodeInitializer node_initializer_;
  std::vector<graph_encoder::GatLayerParams> gat_layers_;
  Matrix positions_;
};

}  // namespace punchline
