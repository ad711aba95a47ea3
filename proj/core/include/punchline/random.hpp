#pragma once

// Portable draws on top of std::mt19937_64. The standard distributions are
// implementation-defined, so artifacts would differ across toolchains.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace punchline {

double uniform01(std::mt19937_64& rng);

// Uniform integer in [0, n) without modulo bias.
std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n);

// Fisher-Yates.
template <typename T>
void shuffle(std::vector<T>& items, std::mt19937_64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(items[i - 1], items[j]);
  }
}

std::string save_rng(const std::mt19937_64& rng);
std::mt19937_64 load_rng(const std::string& state);

}  // namespace punchline
