#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"

namespace clirun {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

inline Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "punchline");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Result r;
  r.code = punchline::cli::dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small model settings shared by both training stages.
inline std::vector<std::string> tiny_model(int steps) {
  std::vector<std::string> out;
  for (const char* kv : {"d_model=16", "n_blocks=1", "n_heads=2", "d_ff=32", "gat_layers=1", "gat_heads=2",
                         "vocab_size=400", "batch_size=8", "eval_every=5", "patience=0"}) {
    out.push_back("--set");
    out.push_back(kv);
  }
  out.push_back("--set");
  out.push_back("max_steps=" + std::to_string(steps));
  return out;
}

// corpus build, knowledge annotate, pretrain, finetune, generate and
// evaluate in `dir`. Returns the first failing step, or an empty string.
inline std::string pipeline(const std::filesystem::path& fixtures, const std::filesystem::path& dir, int steps) {
  namespace fs = std::filesystem;
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string d = dir.string();
  const auto step = [&](const std::string& name, std::vector<std::string> args) -> std::string {
    args.push_back("--log-level");
    args.push_back("off");
    const auto r = run(args);
    return r.code == 0 ? std::string() : name + " exited " + std::to_string(r.code) + ": " + r.err;
  };
  std::string failed;
  const auto check = [&](std::string s) {
    if (failed.empty() && !s.empty()) failed = std::move(s);
    return failed.empty();
  };
  if (!check(step("corpus build",
                  {"corpus", "build", "--input", (fixtures / "jokes.csv").string(), "--output-dir", d + "/corpus"})))
    return failed;
  for (const char* split : {"train", "valid", "test"}) {
    if (!check(step("annotate", {"knowledge", "annotate", "--input", d + "/corpus/" + split + ".jsonl", "--output",
                                 d + "/kg/" + split + ".jsonl", "--fixtures", (fixtures / "knowledge.json").string()})))
      return failed;
  }
  auto pre = std::vector<std::string>{"train", "pretrain", "--data", d + "/corpus", "--out", d + "/ckpt"};
  for (auto& a : tiny_model(steps)) pre.push_back(a);
  if (!check(step("pretrain", pre))) return failed;
  auto fine = std::vector<std::string>{"train", "finetune", "--init", d + "/ckpt/pretrain.best", "--data", d + "/kg",
                                       "--out", d + "/ckpt"};
  for (auto& a : tiny_model(steps)) fine.push_back(a);
  if (!check(step("finetune", fine))) return failed;
  if (!check(step("generate", {"generate", "--ckpt", d + "/ckpt/finetune.best", "--input", d + "/kg/test.jsonl",
                               "--output", d + "/hyp.txt", "--beam", "2", "--max-len", "8"})))
    return failed;
  check(step("evaluate", {"evaluate", "--hyps", d + "/hyp.txt", "--refs", d + "/kg/test.jsonl", "--json", "--output",
                          d + "/rouge.json"}));
  return failed;
}

}  // namespace clirun
