#include "punchline/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace punchline {

Matrix xavier_uniform(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = (2.0 * uniform01(rng) - 1.0) * limit;
  return m;
}

Var& ParamStore::create(const std::string& name, Matrix init) {
  auto [it, inserted] = params_.emplace(name, Var(std::move(init), true));
  if (!inserted) throw std::logic_error("duplicate parameter " + name);
  return it->second;
}

Var& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

const Var& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += static_cast<std::size_t>(p.value().size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, p] : params_) p.zero_grad();
}

Var ForwardContext::drop(const Var& x) const {
  if (!training || dropout <= 0.0 || rng == nullptr) return x;
  return ag::dropout(x, dropout, *rng);
}

Linear::Linear(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, bool bias,
               std::mt19937_64& rng)
    : weight_(store.create(name + ".weight", xavier_uniform(in, out, rng))) {
  if (bias) bias_ = store.create(name + ".bias", Matrix::Zero(1, out));
}

Var Linear::operator()(const Var& x) const {
  Var y = ag::matmul(x, weight_);
  return bias_ ? ag::add_row(y, *bias_) : y;
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, Eigen::Index dim)
    : gamma_(store.create(name + ".gamma", Matrix::Ones(1, dim))),
      beta_(store.create(name + ".beta", Matrix::Zero(1, dim))) {}

Var LayerNorm::operator()(const Var& x) const { return ag::layer_norm(x, gamma_, beta_); }

MultiHeadAttention::MultiHeadAttention(ParamStore& store, const std::string& name, Eigen::Index d_model,
                                       int heads, std::string kind, std::mt19937_64& rng)
    : heads_(heads),
      d_model_(d_model),
      kind_(std::move(kind)),
      q_(store, name + ".query", d_model, d_model, true, rng),
      k_(store, name + ".key", d_model, d_model, true, rng),
      v_(store, name + ".value", d_model, d_model, true, rng),
      out_(store, name + ".output", d_model, d_model, true, rng) {
  if (heads <= 0 || d_model % heads != 0) throw std::invalid_argument("heads must divide d_model");
}

Var MultiHeadAttention::operator()(const Var& queries, const Var& memory, const ag::Mask* mask,
                                   const ForwardContext& ctx) const {
  const Var q = q_(queries);
  const Var k = k_(memory);
  const Var v = v_(memory);
  const Eigen::Index dk = d_model_ / heads_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Var> head_outputs;
  head_outputs.reserve(static_cast<std::size_t>(heads_));
  for (int h = 0; h < heads_; ++h) {
    const Var qh = ag::slice_cols(q, h * dk, dk);
    const Var kh = ag::slice_cols(k, h * dk, dk);
    const Var vh = ag::slice_cols(v, h * dk, dk);
    const Var weights = ag::softmax_rows(ag::scale(ag::matmul_nt(qh, kh), inv_sqrt), mask);
    if (ctx.probe) ctx.probe->entries.push_back({kind_, weights.value()});
    head_outputs.push_back(ag::matmul(ctx.drop(weights), vh));
  }
  return out_(ag::concat_cols(head_outputs));
}

FeedForward::FeedForward(ParamStore& store, const std::string& name, Eigen::Index d_model, Eigen::Index d_ff,
                         std::mt19937_64& rng)
    : inner_(store, name + ".inner", d_model, d_ff, true, rng),
      outer_(store, name + ".outer", d_ff, d_model, true, rng) {}

Var FeedForward::operator()(const Var& x, const ForwardContext& ctx) const {
  return outer_(ctx.drop(ag::relu(inner_(x))));
}

Lstm::Lstm(ParamStore& store, const std::string& name, Eigen::Index input, Eigen::Index hidden,
           std::mt19937_64& rng)
    : hidden_(hidden),
      input_weight_(store.create(name + ".input_weight", xavier_uniform(input, 4 * hidden, rng))),
      hidden_weight_(store.create(name + ".hidden_weight", xavier_uniform(hidden, 4 * hidden, rng))),
      bias_(store.create(name + ".bias", Matrix::Zero(1, 4 * hidden))) {}

Var Lstm::last_hidden(const Var& inputs, bool reverse) const {
  const Eigen::Index steps = inputs.rows();
  if (steps == 0) throw std::invalid_argument("Lstm: empty input sequence");
  // Input contributions for every step in one product.
  const Var projected = ag::add_row(ag::matmul(inputs, input_weight_), bias_);
  Var h = ag::constant(Matrix::Zero(1, hidden_));
  Var c = ag::constant(Matrix::Zero(1, hidden_));
  for (Eigen::Index s = 0; s < steps; ++s) {
    const Eigen::Index row = reverse ? steps - 1 - s : s;
    const Var gates = ag::add(ag::slice_rows(projected, row, 1), ag::matmul(h, hidden_weight_));
    const Var in_gate = ag::sigmoid(ag::slice_cols(gates, 0, hidden_));
    const Var forget_gate = ag::sigmoid(ag::slice_cols(gates, hidden_, hidden_));
    const Var candidate = ag::tanh(ag::slice_cols(gates, 2 * hidden_, hidden_));
    const Var out_gate = ag::sigmoid(ag::slice_cols(gates, 3 * hidden_, hidden_));
    c = ag::add(ag::mul(forget_gate, c), ag::mul(in_gate, candidate));
    h = ag::mul(out_gate, ag::tanh(c));
  }
  return h;
}

ag::Mask causal_mask(Eigen::Index length) {
  ag::Mask mask(length, length);
  for (Eigen::Index r = 0; r < length; ++r) {
    for (Eigen::Index c = 0; c < length; ++c) mask(r, c) = c <= r;
  }
  return mask;
}

Matrix sinusoidal_positions(Eigen::Index length, Eigen::Index d_model) {
  Matrix pe(length, d_model);
  for (Eigen::Index pos = 0; pos < length; ++pos) {
    for (Eigen::Index i = 0; i < d_model; ++i) {
      const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
      pe(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

}  // namespace punchline
