#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "punchline/corpus.hpp"
#include "punchline/errors.hpp"
#include "punchline/gradcheck.hpp"
#include "punchline/model.hpp"
#include "punchline/random.hpp"
#include "punchline/tokenizer.hpp"
#include "punchline/training.hpp"

using namespace punchline;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.d_model = 8;
  c.n_blocks = 2;
  c.n_heads = 2;
  c.d_ff = 16;
  c.gat_layers = 2;
  c.gat_heads = 2;
  c.vocab_size = 300;
  c.max_len = 64;
  c.dropout = 0.0;
  return c;
}

Matrix random_matrix(long rows, long cols, std::mt19937_64& rng) {
  Matrix m(rows, cols);
  for (long i = 0; i < m.size(); ++i) m.data()[i] = 2.0 * uniform01(rng) - 1.0;
  return m;
}

const Matrix& P(const PunchlineModel& m, const std::string& name) { return m.params().at(name).value(); }

// Straight-line multi-head attention over plain matrices.
Matrix attention_oracle(const PunchlineModel& m, const std::string& p, const Matrix& x, const Matrix& mem, int heads,
                        bool causal) {
  const Matrix q = (x * P(m, p + ".query.weight")).rowwise() + P(m, p + ".query.bias").row(0);
  const Matrix k = (mem * P(m, p + ".key.weight")).rowwise() + P(m, p + ".key.bias").row(0);
  const Matrix v = (mem * P(m, p + ".value.weight")).rowwise() + P(m, p + ".value.bias").row(0);
  const long d = x.cols(), dk = d / heads;
  Matrix concat = Matrix::Zero(x.rows(), d);
  for (int h = 0; h < heads; ++h) {
    for (long i = 0; i < x.rows(); ++i) {
      std::vector<double> s(mem.rows(), -INFINITY);
      double top = -INFINITY;
      for (long j = 0; j < mem.rows(); ++j) {
        if (causal && j > i) continue;
        s[j] = 0;
        for (long c = 0; c < dk; ++c) s[j] += q(i, h * dk + c) * k(j, h * dk + c);
        s[j] /= std::sqrt(double(dk));
        top = std::max(top, s[j]);
      }
      double z = 0;
      for (double& e : s) z += (e = std::exp(e - top));
      for (long j = 0; j < mem.rows(); ++j) {
        for (long c = 0; c < dk; ++c) concat(i, h * dk + c) += s[j] / z * v(j, h * dk + c);
      }
    }
  }
  return (concat * P(m, p + ".output.weight")).rowwise() + P(m, p + ".output.bias").row(0);
}

Matrix layer_norm_oracle(const PunchlineModel& m, const std::string& p, const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (long r = 0; r < x.rows(); ++r) {
    double mean = 0, var = 0;
    for (long c = 0; c < x.cols(); ++c) mean += x(r, c) / double(x.cols());
    for (long c = 0; c < x.cols(); ++c) var += (x(r, c) - mean) * (x(r, c) - mean) / double(x.cols());
    for (long c = 0; c < x.cols(); ++c) {
      out(r, c) = (x(r, c) - mean) / std::sqrt(var + 1e-5) * P(m, p + ".gamma")(0, c) + P(m, p + ".beta")(0, c);
    }
  }
  return out;
}

Matrix ffn_oracle(const PunchlineModel& m, const std::string& p, const Matrix& x) {
  Matrix h = (x * P(m, p + ".inner.weight")).rowwise() + P(m, p + ".inner.bias").row(0);
  h = h.cwiseMax(0.0);
  return (h * P(m, p + ".outer.weight")).rowwise() + P(m, p + ".outer.bias").row(0);
}

Matrix embed_oracle(const PunchlineModel& m, const std::vector<int>& ids) {
  const long d = m.config().d_model;
  Matrix x(ids.size(), d);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    for (long i = 0; i < d; ++i) {
      const double angle = double(t) / std::pow(10000.0, double(2 * (i / 2)) / double(d));
      x(t, i) = P(m, "embedding.token")(ids[t], i) * std::sqrt(double(d)) + (i % 2 ? std::cos(angle) : std::sin(angle));
    }
  }
  return x;
}

EncodedExample example_with_graph(const Tokenizer& tok) {
  corpus::JokeRecord r{"Cocaine makes people happy.", "For ten minutes.",
                       {{"Cocaine", "instance of", "drug"}, {"Cocaine", "medical condition treated", "pain"}}};
  return encode_example(r, tok, 64);
}

}  // namespace

TEST(ModelConfig, PresetsAndValidation) {
  const auto paper = ModelConfig::paper();
  EXPECT_EQ(paper.d_model, 512);
  EXPECT_EQ(paper.n_blocks, 4);
  EXPECT_EQ(paper.n_heads, 8);
  EXPECT_EQ(paper.d_ff, 2048);
  EXPECT_EQ(paper.vocab_size, 25000);
  EXPECT_EQ(paper.gat_layers, 2);
  const auto desk = ModelConfig::desk();
  EXPECT_EQ(desk.d_model, 64);
  EXPECT_EQ(desk.n_blocks, 2);
  auto bad = desk;
  bad.n_heads = 3;
  EXPECT_THROW(bad.validate(), ConfigError);
  nlohmann::json j = paper;
  EXPECT_EQ(j.get<ModelConfig>(), paper);
}

TEST(Tokenizer, RoundTripAndSpecials) {
  std::vector<std::string> texts{"Why did the chicken cross the road?", "To get to the other side.",
                                 "The chicken crossed the road again and again."};
  const auto tok = Tokenizer::train(texts, 320);
  EXPECT_GT(tok.vocab_size(), Tokenizer::kFirstLearned);
  EXPECT_EQ(tok.token(Tokenizer::kReverse), "<r>");
  for (const std::string s : {"Why did the chicken cross the road?", "unseen words, with caf\xC3\xA9 and {braces}",
                              "a  double space", "x"}) {
    EXPECT_EQ(tok.decode(tok.encode(s)), s);
  }
  EXPECT_LT(tok.encode("the chicken").size(), std::string("the chicken").size());
  const auto again = Tokenizer::from_text(tok.vocab_text(), tok.merges_text());
  EXPECT_EQ(again, tok);
  EXPECT_EQ(again.encode("the road"), tok.encode("the road"));
  const Tokenizer plain;
  EXPECT_EQ(plain.decode(plain.encode("plain bytes")), "plain bytes");
}

TEST(EncodeExample, ShapesAndLimits) {
  const Tokenizer tok;
  const auto ex = encode_example({"ab.", "cd.", {}}, tok, 16);
  EXPECT_EQ(ex.source.back(), Tokenizer::kEos);
  EXPECT_EQ(ex.target.back(), Tokenizer::kEos);
  EXPECT_EQ(ex.decoder_input().front(), Tokenizer::kBos);
  EXPECT_EQ(ex.decoder_input().size(), ex.target.size());
  EXPECT_FALSE(ex.has_knowledge());
  EXPECT_THROW(encode_example({std::string(40, 'x'), "cd.", {}}, tok, 16), LengthError);
}

TEST(EncodeSetup, MatchesLoopOracleAtD8) {
  const PunchlineModel m(tiny_config(), false, 3);
  const std::vector<int> ids{70, 80, 90, 71, 2};
  Matrix x = embed_oracle(m, ids);
  for (int b = 0; b < 2; ++b) {
    const std::string p = "encoder.block" + std::to_string(b);
    x = layer_norm_oracle(m, p + ".norm1", x + attention_oracle(m, p + ".self_attn", x, x, 2, false));
    x = layer_norm_oracle(m, p + ".norm2", x + ffn_oracle(m, p + ".ffn", x));
  }
  const Matrix got = m.encode_setup(ids, {}).value();
  EXPECT_LT((got - x).cwiseAbs().maxCoeff(), 1e-10);
  const Matrix one = m.encode_setup(std::vector<int>{70}, {}).value();
  EXPECT_EQ(one.rows(), 1);
  EXPECT_TRUE(one.allFinite());
  EXPECT_EQ(m.encode_setup(ids, {}).value(), got);
  EXPECT_THROW(m.encode_setup(std::vector<int>(65, 70), {}), LengthError);
}

TEST(Decode, PlainDecoderMatchesLoopOracle) {
  const PunchlineModel m(tiny_config(), false, 4);
  const std::vector<int> src{70, 81, 2}, prefix{1, 90, 91, 92};
  const Matrix mem = m.encode_setup(src, {}).value();
  Matrix y = embed_oracle(m, prefix);
  for (int b = 0; b < 2; ++b) {
    const std::string p = "decoder.block" + std::to_string(b);
    y = layer_norm_oracle(m, p + ".norm1", y + attention_oracle(m, p + ".self_attn", y, y, 2, true));
    y = layer_norm_oracle(m, p + ".norm2", y + attention_oracle(m, p + ".cross_attn", y, mem, 2, false));
    y = layer_norm_oracle(m, p + ".norm3", y + ffn_oracle(m, p + ".ffn", y));
  }
  const Matrix logits = y * P(m, "output.weight").transpose();
  const Matrix got = m.decode(prefix, Var(mem), std::nullopt, {}).value();
  EXPECT_LT((got - logits).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Fusion, SingletonNodeGivesValueProjection) {
  std::mt19937_64 rng(5);
  ParamStore store;
  const MultiHeadAttention mha(store, "f", 8, 2, "fusion", rng);
  const Matrix h = random_matrix(1, 8, rng);
  const Matrix s = random_matrix(3, 8, rng);
  const Matrix a = fusion_attention(mha, Var(s), Var(h), {}).value();
  const Matrix v = (h * store.at("f.value.weight").value()) + store.at("f.value.bias").value();
  const Matrix expected = v * store.at("f.output.weight").value() + store.at("f.output.bias").value();
  for (long r = 0; r < 3; ++r) EXPECT_LT((a.row(r) - expected.row(0)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Fusion, MatchesDenseAttentionOracle) {
  const PunchlineModel m(tiny_config(), true, 6);
  std::mt19937_64 rng(6);
  const Matrix s = random_matrix(3, 8, rng), h = random_matrix(5, 8, rng);
  ParamStore store;
  std::mt19937_64 same(6);
  const MultiHeadAttention mha(store, "decoder.block0.fusion", 8, 2, "fusion", same);
  for (auto& [name, p] : store) p.mutable_value() = P(m, name);
  const Matrix got = fusion_attention(mha, Var(s), Var(h), {}).value();
  EXPECT_LT((got - attention_oracle(m, "decoder.block0.fusion", s, h, 2, false)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Gate, SaturatedGateReturnsStates) {
  std::mt19937_64 rng(7);
  const Matrix s = Matrix::Ones(3, 8);
  const Matrix a = random_matrix(3, 8, rng);
  const Matrix w = 50.0 * Matrix::Identity(8, 8);
  const Matrix out = knowledge_gate(Var(s), Var(a), Var(w)).value();
  EXPECT_LT((out - s).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Gate, ZeroWeightAverages) {
  std::mt19937_64 rng(8);
  const Matrix s = random_matrix(3, 8, rng), a = random_matrix(3, 8, rng);
  Matrix lambda;
  const Matrix out = knowledge_gate(Var(s), Var(a), Var(Matrix::Zero(8, 8)), &lambda).value();
  EXPECT_TRUE((lambda.array() == 0.5).all());
  EXPECT_LT((out - (s + a) / 2).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Gate, EqualInputsPassThrough) {
  std::mt19937_64 rng(9);
  const Matrix s = random_matrix(3, 8, rng);
  const Matrix out = knowledge_gate(Var(s), Var(s), Var(random_matrix(8, 8, rng))).value();
  EXPECT_LT((out - s).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Gate, PerDimensionShape) {
  std::mt19937_64 rng(10);
  const Matrix s = random_matrix(2, 8, rng);
  Matrix w = Matrix::Zero(8, 8);
  w(3, 3) = 1.0;  // only dimension 3 depends on the state
  Matrix lambda;
  knowledge_gate(Var(s), Var(s), Var(w), &lambda);
  EXPECT_EQ(lambda.rows(), 2);
  EXPECT_EQ(lambda.cols(), 8);
  EXPECT_DOUBLE_EQ(lambda(0, 3), 1.0 / (1.0 + std::exp(-s(0, 3))));
  EXPECT_DOUBLE_EQ(lambda(0, 0), 0.5);
}

TEST(DecodeStep, ProperDistribution) {
  const Tokenizer tok;
  const PunchlineModel m(tiny_config(), true, 11);
  const auto ex = example_with_graph(tok);
  const Var mem = m.encode_setup(ex.source, {});
  const auto probs = m.decode_step(ex.decoder_input(), mem, m.encode_graph(ex, {}));
  EXPECT_EQ(probs.size(), 300u);
  EXPECT_NEAR(std::accumulate(probs.begin(), probs.end(), 0.0), 1.0, 1e-6);
}

TEST(DecodeStep, Causality) {
  const Tokenizer tok;
  const PunchlineModel m(tiny_config(), true, 12);
  const auto ex = example_with_graph(tok);
  const Var mem = m.encode_setup(ex.source, {});
  const auto k = m.encode_graph(ex, {});
  std::vector<int> prefix{1, 70, 71, 72, 73, 74};
  const Matrix before = m.decode(prefix, mem, k, {}).value();
  prefix[4] = 99;
  const Matrix after = m.decode(prefix, mem, k, {}).value();
  EXPECT_EQ(before.topRows(4), after.topRows(4));
  EXPECT_NE(before.row(4), after.row(4));
}

TEST(DecodeStep, BypassIgnoresKnowledge) {
  const Tokenizer tok;
  const PunchlineModel m(tiny_config(), true, 13);
  const auto ex = example_with_graph(tok);
  auto other = ex;
  other.node_tokens[0] = {80, 81};
  const Var mem = m.encode_setup(ex.source, {});
  ForwardContext bypass;
  bypass.bypass_knowledge = true;
  const auto p1 = m.decode_step(ex.decoder_input(), mem, m.encode_graph(ex, {}), bypass);
  const auto p2 = m.decode_step(ex.decoder_input(), mem, m.encode_graph(other, {}), bypass);
  const auto p3 = m.decode_step(ex.decoder_input(), mem, std::nullopt);
  EXPECT_EQ(p1, p2);
  EXPECT_EQ(p1, p3);
  EXPECT_NE(p1, m.decode_step(ex.decoder_input(), mem, m.encode_graph(ex, {})));
}

TEST(DecodeStep, GatesStrictlyInsideUnitInterval) {
  const Tokenizer tok;
  const PunchlineModel m(tiny_config(), true, 14);
  const auto ex = example_with_graph(tok);
  DecoderTrace trace;
  m.decode(ex.decoder_input(), m.encode_setup(ex.source, {}), m.encode_graph(ex, {}), {}, &trace);
  ASSERT_EQ(trace.gates.size(), 2u);
  ASSERT_EQ(trace.setup_states.size(), 2u);
  for (const auto& g : trace.gates) {
    EXPECT_GT(g.minCoeff(), 0.0);
    EXPECT_LT(g.maxCoeff(), 1.0);
  }
  EXPECT_TRUE(trace.final_states.allFinite());
}

TEST(EncodeGraph, EmptyGraphSkipsKnowledge) {
  const Tokenizer tok;
  const PunchlineModel fused(tiny_config(), true, 15);
  const PunchlineModel plain(tiny_config(), false, 15);
  const auto empty = encode_example({"Nothing here.", "Right.", {}}, tok, 64);
  EXPECT_FALSE(fused.encode_graph(empty, {}).has_value());
  EXPECT_FALSE(plain.encode_graph(example_with_graph(tok), {}).has_value());
  const auto h = fused.encode_graph(example_with_graph(tok), {});
  ASSERT_TRUE(h);
  EXPECT_EQ(h->rows(), 7);
  EXPECT_EQ(h->cols(), 8);
}

TEST(Partition, KnowledgeOnlyNames) {
  const PunchlineModel fused(tiny_config(), true, 16);
  const PunchlineModel plain(tiny_config(), false, 16);
  for (const auto& [name, _] : plain.params()) {
    EXPECT_FALSE(PunchlineModel::is_knowledge_only(name)) << name;
    EXPECT_TRUE(fused.params().contains(name)) << name;
  }
  std::size_t knowledge = 0;
  for (const auto& [name, _] : fused.params()) {
    if (!plain.params().contains(name)) {
      EXPECT_TRUE(PunchlineModel::is_knowledge_only(name)) << name;
      ++knowledge;
    }
  }
  EXPECT_TRUE(fused.params().contains("decoder.block1.gate.weight"));
  EXPECT_TRUE(fused.params().contains("knowledge.gat1.query"));
  EXPECT_GT(knowledge, 0u);
}

TEST(Gradients, FusionAndGate) {
  for (std::uint64_t seed : {1u, 2u}) {
    const auto r = gradcheck::fusion_gate_suite(seed);
    EXPECT_TRUE(r.passed) << r.worst << " error " << r.max_error;
  }
}

TEST(Gradients, FullModelLoss) {
  const auto r = gradcheck::full_model_suite(3, 2);
  EXPECT_TRUE(r.passed) << r.worst << " error " << r.max_error;
}

TEST(Attention, RowsSumToOne) {
  const auto r = gradcheck::attention_rows_suite(4);
  EXPECT_TRUE(r.passed) << r.worst << " error " << r.max_error;
  EXPECT_GT(r.checked, 0u);
}
