#include "punchline/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "punchline/checkpoint.hpp"
#include "punchline/graph_encoder.hpp"
#include "punchline/kgraph.hpp"
#include "punchline/model.hpp"
#include "punchline/nn.hpp"
#include "punchline/random.hpp"
#include "punchline/tokenizer.hpp"
#include "punchline/training.hpp"

namespace punchline::gradcheck {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * (2.0 * uniform01(rng) - 1.0);
  return m;
}

std::vector<std::vector<int>> random_neighborhoods(int nodes, std::mt19937_64& rng) {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(nodes));
  for (int i = 0; i < nodes; ++i) {
    out[static_cast<std::size_t>(i)].push_back(i);
    for (int j = 0; j < nodes; ++j) {
      if (j != i && uniform01(rng) < 0.4) out[static_cast<std::size_t>(i)].push_back(j);
    }
  }
  return out;
}

ModelConfig small_desk_config() {
  ModelConfig c = ModelConfig::desk();
  c.vocab_size = 300;
  c.dropout = 0.0;
  return c;
}

// A random set-up, punchline and two-triple graph over the vocabulary.
EncodedExample random_example(int vocab, std::mt19937_64& rng) {
  const auto token = [&] { return Tokenizer::kFirstByte + static_cast<int>(uniform_index(rng, vocab - 4)); };
  EncodedExample ex;
  const auto src_len = 3 + uniform_index(rng, 6);
  for (std::size_t i = 0; i < src_len; ++i) ex.source.push_back(token());
  ex.source.push_back(Tokenizer::kEos);
  const auto tgt_len = 2 + uniform_index(rng, 5);
  for (std::size_t i = 0; i < tgt_len; ++i) ex.target.push_back(token());
  ex.target.push_back(Tokenizer::kEos);
  const std::vector<Triple> triples = {{"alpha", "knows", "beta"}, {"alpha", "likes", "gamma"}};
  ex.graph = kgraph::build_graph(triples);
  for (const auto& node : ex.graph.nodes) {
    std::vector<int> ids;
    if (node.kind == kgraph::NodeKind::kReverseRelation) ids.push_back(Tokenizer::kReverse);
    const auto len = 1 + uniform_index(rng, 3);
    for (std::size_t i = 0; i < len; ++i) ids.push_back(token());
    ex.node_tokens.push_back(std::move(ids));
  }
  ex.neighbors = ex.graph.in_neighborhoods();
  return ex;
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

Result check(const std::string& name, const std::function<Var()>& loss, const std::vector<NamedVar>& inputs,
             const Options& options) {
  const auto start = Clock::now();
  Result result;
  result.name = name;
  result.threshold = options.tolerance;

  for (const auto& input : inputs) {
    Var v = input.second;
    v.zero_grad();
  }
  ag::backward(loss());
  std::vector<Matrix> analytic;
  for (const auto& [_, v] : inputs) {
    analytic.push_back(v.grad().size() == v.value().size() ? v.grad() : Matrix::Zero(v.rows(), v.cols()));
  }

  std::mt19937_64 rng(options.seed);
  ag::NoGradGuard no_grad;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    Var v = inputs[t].second;
    std::vector<Eigen::Index> entries(static_cast<std::size_t>(v.value().size()));
    std::iota(entries.begin(), entries.end(), Eigen::Index{0});
    if (options.max_entries > 0 && entries.size() > options.max_entries) {
      shuffle(entries, rng);
      entries.resize(options.max_entries);
      std::sort(entries.begin(), entries.end());
    }
    for (Eigen::Index idx : entries) {
      double& x = v.mutable_value().data()[idx];
      const double original = x;
      x = original + options.step;
      const double up = loss().item();
      x = original - options.step;
      const double down = loss().item();
      x = original;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[t].data()[idx];
      const double err = relative_error(a, numeric, options.floor);
      ++result.checked;
      if (err >= result.max_error) {
        result.max_error = err;
        std::ostringstream where;
        where << inputs[t].first << "[" << idx << "] analytic=" << a << " numeric=" << numeric;
        result.worst = where.str();
      }
    }
  }
  result.passed = result.max_error < options.tolerance;
  result.seconds = seconds_since(start);
  return result;
}

Result gat_suite(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamStore store;
  const int d = 8;
  std::vector<graph_encoder::GatLayerParams> layers;
  layers.push_back(graph_encoder::make_gat_layer(store, "gat0", d, 2, rng));
  layers.push_back(graph_encoder::make_gat_layer(store, "gat1", d, 2, rng));
  const Var h0(random_matrix(6, d, rng), true);
  const Var weights = ag::constant(random_matrix(6, d, rng));
  const auto neighbors = random_neighborhoods(6, rng);
  const graph_encoder::Activation act;
  std::vector<NamedVar> inputs{{"h0", h0}};
  for (const auto& [name, p] : store) inputs.emplace_back(name, p);
  return check(
      "gat_two_layer",
      [&] { return ag::sum(ag::mul(graph_encoder::encode_knowledge(h0, layers, neighbors, act), weights)); }, inputs,
      {});
}

Result fusion_gate_suite(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamStore store;
  const int d = 8;
  const MultiHeadAttention fusion(store, "fusion", d, 2, "fusion", rng);
  const Var gate = store.create("gate.weight", xavier_uniform(d, d, rng));
  const Var states(random_matrix(3, d, rng), true);
  const Var nodes(random_matrix(5, d, rng), true);
  const Var weights = ag::constant(random_matrix(3, d, rng));
  std::vector<NamedVar> inputs{{"states", states}, {"nodes", nodes}};
  for (const auto& [name, p] : store) inputs.emplace_back(name, p);
  return check(
      "fusion_and_gate",
      [&] {
        const Var a = fusion_attention(fusion, states, nodes, ForwardContext{});
        return ag::sum(ag::mul(knowledge_gate(states, a, gate), weights));
      },
      inputs, {});
}

Result full_model_suite(std::uint64_t seed, std::size_t entries_per_tensor) {
  std::mt19937_64 rng(seed);
  const ModelConfig config = small_desk_config();
  const PunchlineModel model(config, true, seed);
  const EncodedExample ex = random_example(config.vocab_size, rng);
  std::vector<NamedVar> inputs;
  for (const auto& [name, p] : model.params()) inputs.emplace_back(name, p);
  Options options;
  options.max_entries = entries_per_tensor;
  options.seed = seed;
  // The summed loss is O(10), so difference round-off is about 1e-9; below
  // a gradient of 1e-4 the comparison is effectively absolute.
  options.floor = 1e-4;
  return check("full_model_loss", [&] { return model.loss_sum(ex, ForwardContext{}); }, inputs, options);
}

Result attention_rows_suite(std::uint64_t seed) {
  const auto start = Clock::now();
  std::mt19937_64 rng(seed);
  const ModelConfig config = small_desk_config();
  const PunchlineModel model(config, true, seed);
  Result result;
  result.name = "attention_rows";
  result.threshold = 1e-6;
  for (int trial = 0; trial < 5; ++trial) {
    const EncodedExample ex = random_example(config.vocab_size, rng);
    AttentionProbe probe;
    ForwardContext ctx;
    ctx.probe = &probe;
    ag::NoGradGuard no_grad;
    const Var memory = model.encode_setup(ex.source, ctx);
    const auto knowledge = model.encode_graph(ex, ctx);
    model.decode(ex.decoder_input(), memory, knowledge, ctx);
    for (const auto& entry : probe.entries) {
      for (Eigen::Index r = 0; r < entry.weights.rows(); ++r) {
        const double err = std::abs(entry.weights.row(r).sum() - 1.0);
        ++result.checked;
        if (err >= result.max_error) {
          result.max_error = err;
          result.worst = entry.kind + " row " + std::to_string(r);
        }
      }
    }
  }
  result.passed = result.checked > 0 && result.max_error < result.threshold;
  result.seconds = seconds_since(start);
  return result;
}

Result collapse_suite(std::uint64_t seed) {
  const auto start = Clock::now();
  std::mt19937_64 rng(seed);
  const ModelConfig config = small_desk_config();
  const PunchlineModel plain(config, false, seed);
  const Checkpoint ck = snapshot(plain, Tokenizer(), "pretrain");
  const PunchlineModel fused = transplant(ck, seed + 1);
  Result result;
  result.name = "gate_collapse";
  result.threshold = 1e-6;
  ForwardContext bypass;
  bypass.bypass_knowledge = true;
  for (int trial = 0; trial < 10; ++trial) {
    const EncodedExample ex = random_example(config.vocab_size, rng);
    ag::NoGradGuard no_grad;
    const Var m1 = plain.encode_setup(ex.source, {});
    const Var m2 = fused.encode_setup(ex.source, {});
    const auto knowledge = fused.encode_graph(ex, {});
    const auto prefix = ex.decoder_input();
    const auto p1 = plain.decode_step(prefix, m1, std::nullopt);
    const auto p2 = fused.decode_step(prefix, m2, knowledge, bypass);
    for (std::size_t i = 0; i < p1.size(); ++i) {
      const double err = std::abs(p1[i] - p2[i]);
      ++result.checked;
      if (err > result.max_error) {
        result.max_error = err;
        result.worst = "trial " + std::to_string(trial) + " token " + std::to_string(i);
      }
    }
  }
  result.passed = result.max_error < result.threshold;
  result.seconds = seconds_since(start);
  return result;
}

std::vector<Result> run_selftest(std::uint64_t seed) {
  return {gat_suite(seed), fusion_gate_suite(seed), full_model_suite(seed), attention_rows_suite(seed),
          collapse_suite(seed)};
}

}  // namespace punchline::gradcheck
