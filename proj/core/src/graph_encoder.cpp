#include "punchline/graph_encoder.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace punchline::graph_encoder {
namespace {

void check_neighbors(const Neighborhoods& neighbors, Eigen::Index nodes) {
  if (static_cast<Eigen::Index>(neighbors.size()) != nodes) {
    throw std::invalid_argument("neighborhood count differs from node count");
  }
  for (const auto& list : neighbors) {
    if (list.empty()) throw std::invalid_argument("every node needs at least itself as a neighbor");
    for (int j : list) {
      if (j < 0 || j >= nodes) throw std::invalid_argument("neighbor index out of range");
    }
  }
}

}  // namespace

GatLayerParams make_gat_layer(ParamStore& store, const std::string& name, Eigen::Index d_model, int heads,
                              std::mt19937_64& rng) {
  if (heads <= 0 || d_model % heads != 0) throw std::invalid_argument("GAT heads must divide d_model");
  GatLayerParams p;
  p.query = store.create(name + ".query", xavier_uniform(d_model, d_model, rng));
  p.key = store.create(name + ".key", xavier_uniform(d_model, d_model, rng));
  p.value = store.create(name + ".value", xavier_uniform(d_model, d_model, rng));
  p.heads = heads;
  return p;
}

Var Activation::operator()(const Var& x) const {
  switch (kind) {
    case Kind::kLeakyRelu: return ag::leaky_relu(x, slope);
    case Kind::kIdentity: return x;
  }
  return x;
}

void to_json(nlohmann::json& j, const AttentionMap& map) {
  j = nlohmann::json{{"neighbors", map.neighbors}, {"weights", map.weights}};
}

Var attend_neighbors(const Var& queries, const Var& keys, const Var& values, int heads,
                     const Neighborhoods& neighbors, AttentionMap* record) {
  const Eigen::Index n = queries.rows();
  const Eigen::Index d = queries.cols();
  if (keys.rows() != n || values.rows() != n || keys.cols() != d || values.cols() != d) {
    throw std::invalid_argument("attend_neighbors: shape mismatch");
  }
  if (heads <= 0 || d % heads != 0) throw std::invalid_argument("attend_neighbors: heads must divide width");
  check_neighbors(neighbors, n);
  const Eigen::Index dh = d / heads;
  const Matrix& q = queries.value();
  const Matrix& k = keys.value();
  const Matrix& v = values.value();

  // alpha[m][i][k] over neighbors[i][k].
  std::vector<std::vector<std::vector<double>>> alpha(static_cast<std::size_t>(heads),
                                                      std::vector<std::vector<double>>(static_cast<std::size_t>(n)));
  Matrix out = Matrix::Zero(n, d);
  for (int m = 0; m < heads; ++m) {
    const Eigen::Index c0 = m * dh;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& nbrs = neighbors[static_cast<std::size_t>(i)];
      auto& a = alpha[static_cast<std::size_t>(m)][static_cast<std::size_t>(i)];
      a.resize(nbrs.size());
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t idx = 0; idx < nbrs.size(); ++idx) {
        a[idx] = k.row(nbrs[idx]).segment(c0, dh).dot(q.row(i).segment(c0, dh));
        best = std::max(best, a[idx]);
      }
      double total = 0.0;
      for (double& s : a) {
        s = std::exp(s - best);
        total += s;
      }
      for (std::size_t idx = 0; idx < nbrs.size(); ++idx) {
        a[idx] /= total;
        out.row(i).segment(c0, dh) += a[idx] * v.row(nbrs[idx]).segment(c0, dh);
      }
    }
  }
  if (record) {
    record->neighbors = neighbors;
    record->weights = alpha;
  }
  return ag::make_result(std::move(out), {queries, keys, values},
                         [alpha = std::move(alpha), neighbors, heads, dh](ag::Node& self) {
    auto& qn = *self.inputs[0];
    auto& kn = *self.inputs[1];
    auto& vn = *self.inputs[2];
    const Matrix& dout = self.grad;
    const Eigen::Index n = dout.rows();
    std::vector<double> dalpha;
    for (int m = 0; m < heads; ++m) {
      const Eigen::Index c0 = m * dh;
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto& nbrs = neighbors[static_cast<std::size_t>(i)];
        const auto& a = alpha[static_cast<std::size_t>(m)][static_cast<std::size_t>(i)];
        const auto g = dout.row(i).segment(c0, dh);
        dalpha.assign(nbrs.size(), 0.0);
        double weighted = 0.0;
        for (std::size_t idx = 0; idx < nbrs.size(); ++idx) {
          dalpha[idx] = g.dot(vn.value.row(nbrs[idx]).segment(c0, dh));
          weighted += a[idx] * dalpha[idx];
          if (vn.requires_grad) vn.grad_buffer().row(nbrs[idx]).segment(c0, dh) += a[idx] * g;
        }
        for (std::size_t idx = 0; idx < nbrs.size(); ++idx) {
          const double ds = a[idx] * (dalpha[idx] - weighted);
          if (qn.requires_grad) qn.grad_buffer().row(i).segment(c0, dh) += ds * kn.value.row(nbrs[idx]).segment(c0, dh);
          if (kn.requires_grad) kn.grad_buffer().row(nbrs[idx]).segment(c0, dh) += ds * qn.value.row(i).segment(c0, dh);
        }
      }
    }
  });
}

AttentionMap gat_attention(const Matrix& features, const GatLayerParams& layer, const Neighborhoods& neighbors) {
  ag::NoGradGuard no_grad;
  const Var h = ag::constant(features);
  AttentionMap map;
  attend_neighbors(ag::matmul(h, layer.query), ag::matmul(h, layer.key), ag::matmul(h, layer.value), layer.heads,
                   neighbors, &map);
  return map;
}

Var gat_layer(const Var& features, const GatLayerParams& layer, const Neighborhoods& neighbors,
              const Activation& activation, AttentionMap* record) {
  if (features.cols() != layer.d_model()) throw std::invalid_argument("gat_layer: feature width");
  const Var aggregated = attend_neighbors(ag::matmul(features, layer.query), ag::matmul(features, layer.key),
                                          ag::matmul(features, layer.value), layer.heads, neighbors, record);
  // The activation is elementwise, so applying it to the concatenation
  // equals concatenating the activated heads.
  return activation(aggregated);
}

Var encode_knowledge(const Var& initial_features, std::span<const GatLayerParams> layers,
                     const Neighborhoods& neighbors, const Activation& activation,
                     std::vector<AttentionMap>* record) {
  Var h = initial_features;
  for (const auto& layer : layers) {
    AttentionMap map;
    h = gat_layer(h, layer, neighbors, activation, record ? &map : nullptr);
    if (record) record->push_back(std::move(map));
  }
  return h;
}

}  // namespace punchline::graph_encoder
