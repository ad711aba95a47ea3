#pragma once

// Central finite-difference checks of the hand-written backward passes,
// plus the property suites run by `punchline selftest`.

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "punchline/tensor.hpp"

namespace punchline::gradcheck {

struct Options {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Per tensor; 0 checks every entry.
  std::size_t max_entries = 0;
  // Denominator floor for the relative error.
  double floor = 1e-6;
  std::uint64_t seed = 0;
};

struct Result {
  std::string name;
  double max_error = 0.0;  // relative error for gradients, absolute otherwise
  double threshold = 0.0;
  std::size_t checked = 0;
  std::string worst;  // where max_error occurred
  double seconds = 0.0;
  bool passed = false;
};

// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor = 1e-6);

using NamedVar = std::pair<std::string, Var>;

// `loss` must rebuild a 1 x 1 loss from the current values of `inputs`.
Result check(const std::string& name, const std::function<Var()>& loss, const std::vector<NamedVar>& inputs,
             const Options& options = {});

// Two-layer GAT on a six-node graph.
Result gat_suite(std::uint64_t seed);
// Fusion attention followed by the knowledge gate.
Result fusion_gate_suite(std::uint64_t seed);
// Desk-scale fused model loss, sampled entries of every tensor.
Result full_model_suite(std::uint64_t seed, std::size_t entries_per_tensor = 3);
// Every attention row sums to one.
Result attention_rows_suite(std::uint64_t seed);
// lambda forced to 1 reproduces the plain Transformer.
Result collapse_suite(std::uint64_t seed);

std::vector<Result> run_selftest(std::uint64_t seed);

}  // namespace punchline::gradcheck
