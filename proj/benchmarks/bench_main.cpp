#include <benchmark/benchmark.h>

#include "punchline/corpus.hpp"
#include "punchline/evaluation.hpp"
#include "punchline/graph_encoder.hpp"
#include "punchline/kgraph.hpp"
#include "punchline/model.hpp"
#include "punchline/random.hpp"

using namespace punchline;

namespace {

Matrix random_matrix(long rows, long cols, std::mt19937_64& rng) {
  Matrix m(rows, cols);
  for (long i = 0; i < m.size(); ++i) m.data()[i] = 2.0 * uniform01(rng) - 1.0;
  return m;
}

std::vector<Triple> chain_triples(int n) {
  std::vector<Triple> out;
  for (int i = 0; i < n; ++i) out.push_back({"e" + std::to_string(i), "r" + std::to_string(i % 3), "e" + std::to_string(i + 1)});
  return out;
}

corpus::JokeRecord sample_record() {
  return {"I told my doctor that I broke my arm in two places.", "He told me to stop going to those places.",
          {{"doctor", "occupation", "physician"}, {"arm", "part of", "human body"}, {"doctor", "field", "medicine"}}};
}

}  // namespace

static void BM_BuildGraph(benchmark::State& state) {
  const auto triples = chain_triples(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(kgraph::build_graph(triples));
}
BENCHMARK(BM_BuildGraph)->Arg(10)->Arg(100);

static void BM_GatLayer(benchmark::State& state) {
  std::mt19937_64 rng(1);
  ParamStore store;
  const auto layer = graph_encoder::make_gat_layer(store, "g", 64, 4, rng);
  const auto graph = kgraph::build_graph(chain_triples(static_cast<int>(state.range(0))));
  const auto neighbors = graph.in_neighborhoods();
  const Var h(random_matrix(static_cast<long>(graph.nodes.size()), 64, rng));
  ag::NoGradGuard no_grad;
  for (auto _ : state) {
    benchmark::DoNotOptimize(graph_encoder::gat_layer(h, layer, neighbors, graph_encoder::Activation{}).value().data());
  }
}
BENCHMARK(BM_GatLayer)->Arg(10)->Arg(40);

static void BM_DecodeStep(benchmark::State& state) {
  ModelConfig c = ModelConfig::desk();
  c.vocab_size = Tokenizer{}.vocab_size();
  const PunchlineModel model(c, state.range(0) != 0, 1);
  const Tokenizer tok;
  const auto ex = encode_example(sample_record(), tok, 256);
  ag::NoGradGuard no_grad;
  const Var memory = model.encode_setup(ex.source, {});
  const auto knowledge = model.encode_graph(ex, {});
  auto prefix = ex.decoder_input();
  prefix.resize(16);
  for (auto _ : state) benchmark::DoNotOptimize(model.decode_step(prefix, memory, knowledge));
}
BENCHMARK(BM_DecodeStep)->Arg(0)->Arg(1)->ArgNames({"fused"});

static void BM_TrainingLossBackward(benchmark::State& state) {
  ModelConfig c = ModelConfig::desk();
  c.vocab_size = Tokenizer{}.vocab_size();
  PunchlineModel model(c, true, 1);
  const auto ex = encode_example(sample_record(), Tokenizer{}, 256);
  for (auto _ : state) {
    model.params().zero_grad();
    ag::backward(model.loss_sum(ex, {}));
  }
}
BENCHMARK(BM_TrainingLossBackward);

static void BM_RougeLine(benchmark::State& state) {
  const std::string hyp = "he told me to stop going to those places because they hurt";
  const std::string ref = "He told me to stop going to those places.";
  for (auto _ : state) benchmark::DoNotOptimize(evaluation::score_line(hyp, ref));
}
BENCHMARK(BM_RougeLine);

static void BM_Deduplicate(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::vector<corpus::JokeRecord> jokes;
  const char* words[] = {"cat", "dog", "beer", "bar", "doctor", "wife", "money", "time", "road", "why"};
  for (int i = 0; i < state.range(0); ++i) {
    std::string s;
    for (int w = 0; w < 12; ++w) s += std::string(words[uniform_index(rng, 10)]) + " ";
    jokes.push_back({s, "ok.", {}});
  }
  for (auto _ : state) benchmark::DoNotOptimize(corpus::deduplicate(jokes));
}
BENCHMARK(BM_Deduplicate)->Arg(200)->Arg(1000);
BENCHMARK_MAIN();
