#pragma once

// Parameter storage and the standard Transformer building blocks shared by
// the set-up encoder, the decoder and the knowledge side.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "punchline/random.hpp"
#include "punchline/tensor.hpp"

namespace punchline {

// Uniform(-limit, limit) with limit = sqrt(6 / (fan_in + fan_out)).
Matrix xavier_uniform(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng);

// Named, ordered collection of trainable tensors.
class ParamStore {
 public:
  Var& create(const std::string& name, Matrix init);
  Var& at(const std::string& name);
  const Var& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Var> params_;
};

// Attention rows captured during a forward pass, for inspection.
struct AttentionProbe {
  struct Entry {
    std::string kind;  // "self", "cross", "fusion", "encoder", "gat"
    Matrix weights;    // one row per query, one column per key
  };
  std::vector<Entry> entries;
  std::vector<Matrix> gates;  // lambda per decoder block
};

struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;
  AttentionProbe* probe = nullptr;
  // Forces every knowledge gate open (lambda = 1), skipping fusion.
  bool bypass_knowledge = false;

  Var drop(const Var& x) const;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, bool bias,
         std::mt19937_64& rng);
  Var operator()(const Var& x) const;

 private:
  Var weight_;  // in x out
  std::optional<Var> bias_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, Eigen::Index dim);
  Var operator()(const Var& x) const;

 private:
  Var gamma_;
  Var beta_;
};

// Scaled dot-product multi-head attention with input and output
// projections.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& name, Eigen::Index d_model, int heads,
                     std::string kind, std::mt19937_64& rng);

  // queries: t x d, memory: s x d; mask (t x s) marks allowed positions.
  Var operator()(const Var& queries, const Var& memory, const ag::Mask* mask,
                 const ForwardContext& ctx) const;

 private:
  int heads_ = 1;
  Eigen::Index d_model_ = 0;
  std::string kind_;
  Linear q_, k_, v_, out_;
};

class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParamStore& store, const std::string& name, Eigen::Index d_model, Eigen::Index d_ff,
              std::mt19937_64& rng);
  Var operator()(const Var& x, const ForwardContext& ctx) const;

 private:
  Linear inner_, outer_;
};

// Single-direction LSTM with gate order (input, forget, cell, output).
class Lstm {
 public:
  Lstm() = default;
  Lstm(ParamStore& store, const std::string& name, Eigen::Index input, Eigen::Index hidden,
       std::mt19937_64& rng);
  // Runs over the rows of `inputs` in order (or reversed) and returns the
  // last hidden state as a 1 x hidden row.
  Var last_hidden(const Var& inputs, bool reverse) const;
  Eigen::Index hidden() const { return hidden_; }

 private:
  Eigen::Index hidden_ = 0;
  Var input_weight_;   // input x 4h
  Var hidden_weight_;  // h x 4h
  Var bias_;           // 1 x 4h
};

// t x t lower-triangular mask.
ag::Mask causal_mask(Eigen::Index length);
Matrix sinusoidal_positions(Eigen::Index length, Eigen::Index d_model);

}  // namespace punchline
