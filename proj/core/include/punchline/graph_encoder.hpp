#pragma once

// Knowledge encoder: stacked multi-head graph attention over in-neighbors
// (self included). For node i and head m,
//
//   alpha_ij = softmax_{j in N(i)} ( (W_K h_j) . (W_Q h_i) )
//   h'_i     = concat_m sigma( sum_j alpha_ij W_V h_j )
//
// Scores are not scaled by the head width.

#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "punchline/kgraph.hpp"
#include "punchline/nn.hpp"
#include "punchline/tensor.hpp"

namespace punchline::graph_encoder {

using Neighborhoods = std::vector<std::vector<int>>;

// W_Q, W_K, W_V as d x d matrices; head m owns columns
// [m * d/M, (m + 1) * d/M).
struct GatLayerParams {
  Var query;
  Var key;
  Var value;
  int heads = 1;

  Eigen::Index d_model() const { return query.rows(); }
  Eigen::Index head_dim() const { return query.cols() / heads; }
};

GatLayerParams make_gat_layer(ParamStore& store, const std::string& name, Eigen::Index d_model, int heads,
                              std::mt19937_64& rng);

struct Activation {
  enum class Kind { kLeakyRelu, kIdentity };
  Kind kind = Kind::kLeakyRelu;
  double slope = 0.2;

  Var operator()(const Var& x) const;
};

// weights[m][i][k] is alpha for head m, node i and neighbor neighbors[i][k].
struct AttentionMap {
  Neighborhoods neighbors;
  std::vector<std::vector<std::vector<double>>> weights;
};

void to_json(nlohmann::json& j, const AttentionMap& map);

// Attention coefficients only (no graph recorded).
AttentionMap gat_attention(const Matrix& features, const GatLayerParams& layer, const Neighborhoods& neighbors);

// Neighbor-list attention aggregation over already projected queries,
// keys and values; returns the per-head weighted sums concatenated
// (before activation).
Var attend_neighbors(const Var& queries, const Var& keys, const Var& values, int heads,
                     const Neighborhoods& neighbors, AttentionMap* record = nullptr);

Var gat_layer(const Var& features, const GatLayerParams& layer, const Neighborhoods& neighbors,
              const Activation& activation, AttentionMap* record = nullptr);

// Applies the layers in order starting from H0; zero layers return H0.
Var encode_knowledge(const Var& initial_features, std::span<const GatLayerParams> layers,
                     const Neighborhoods& neighbors, const Activation& activation,
                     std::vector<AttentionMap>* record = nullptr);

}  // namespace punchline::graph_encoder
