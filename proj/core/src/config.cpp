#include "punchline/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "punchline/errors.hpp"
#include "punchline/text.hpp"

namespace punchline {
namespace {

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end) {
    throw ConfigError("bad value for '" + std::string(key) + "': '" + std::string(value) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("bad boolean for '" + std::string(key) + "': '" + std::string(value) + "'");
}

struct Field {
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const RunConfig&)> get;
};

// Shortest text that reads back to the same double.
std::string fmt_double(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <typename T>
Field field(std::function<T&(RunConfig&)> ref) {
  Field f;
  f.set = [ref](RunConfig& c, std::string_view k, std::string_view v) { ref(c) = parse_number<T>(k, v); };
  f.get = [ref](const RunConfig& c) {
    const T value = ref(const_cast<RunConfig&>(c));
    if constexpr (std::is_floating_point_v<T>) {
      return fmt_double(value);
    } else {
      return std::to_string(value);
    }
  };
  return f;
}

Field flag(std::function<bool&(RunConfig&)> ref) {
  Field f;
  f.set = [ref](RunConfig& c, std::string_view k, std::string_view v) { ref(c) = parse_bool(k, v); };
  f.get = [ref](const RunConfig& c) { return std::string(ref(const_cast<RunConfig&>(c)) ? "true" : "false"); };
  return f;
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"d_model", field<int>([](RunConfig& c) -> int& { return c.model.d_model; })},
      {"n_blocks", field<int>([](RunConfig& c) -> int& { return c.model.n_blocks; })},
      {"n_heads", field<int>([](RunConfig& c) -> int& { return c.model.n_heads; })},
      {"d_ff", field<int>([](RunConfig& c) -> int& { return c.model.d_ff; })},
      {"gat_layers", field<int>([](RunConfig& c) -> int& { return c.model.gat_layers; })},
      {"gat_heads", field<int>([](RunConfig& c) -> int& { return c.model.gat_heads; })},
      {"vocab_size", field<int>([](RunConfig& c) -> int& { return c.model.vocab_size; })},
      {"max_len", field<int>([](RunConfig& c) -> int& { return c.model.max_len; })},
      {"dropout", field<double>([](RunConfig& c) -> double& { return c.model.dropout; })},
      {"gat_slope", field<double>([](RunConfig& c) -> double& { return c.model.gat_slope; })},
      {"batch_size", field<int>([](RunConfig& c) -> int& { return c.train.batch_size; })},
      {"learning_rate", field<double>([](RunConfig& c) -> double& { return c.train.learning_rate; })},
      {"beta1", field<double>([](RunConfig& c) -> double& { return c.train.beta1; })},
      {"beta2", field<double>([](RunConfig& c) -> double& { return c.train.beta2; })},
      {"epsilon", field<double>([](RunConfig& c) -> double& { return c.train.epsilon; })},
      {"max_epochs", field<int>([](RunConfig& c) -> int& { return c.train.max_epochs; })},
      {"max_steps", field<int>([](RunConfig& c) -> int& { return c.train.max_steps; })},
      {"patience", field<int>([](RunConfig& c) -> int& { return c.train.patience; })},
      {"eval_every", field<int>([](RunConfig& c) -> int& { return c.train.eval_every; })},
      {"clip_norm", field<double>([](RunConfig& c) -> double& { return c.train.clip_norm; })},
      {"seed", field<std::uint64_t>([](RunConfig& c) -> std::uint64_t& { return c.train.seed; })},
      {"freeze_knowledge", flag([](RunConfig& c) -> bool& { return c.train.freeze_knowledge; })},
      {"beam", field<int>([](RunConfig& c) -> int& { return c.beam; })},
      {"decode_max_len", field<int>([](RunConfig& c) -> int& { return c.decode_max_len; })},
      {"length_normalize", flag([](RunConfig& c) -> bool& { return c.length_normalize; })},
      {"max_triples", field<int>([](RunConfig& c) -> int& { return c.max_triples; })},
      {"workers", field<int>([](RunConfig& c) -> int& { return c.workers; })},
      {"dedup_threshold", field<double>([](RunConfig& c) -> double& { return c.dedup_threshold; })},
  };
  return table;
}

}  // namespace

RunConfig RunConfig::from_preset(std::string_view name) {
  RunConfig c;
  if (name == "desk") {
    c.model = ModelConfig::desk();
  } else if (name == "paper") {
    c.model = ModelConfig::paper();
  } else {
    throw ConfigError("unknown preset '" + std::string(name) + "' (expected desk or paper)");
  }
  c.preset = std::string(name);
  return c;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  if (key == "preset") {
    if (value != preset) {
      throw ConfigError("preset must be the first setting (got '" + std::string(value) + "' after '" + preset + "')");
    }
    return;
  }
  for (const auto& [name, f] : fields()) {
    if (name == key) {
      f.set(*this, key, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

RunConfig RunConfig::parse(std::string_view content) {
  RunConfig c;
  bool first = true;
  std::size_t line_no = 0;
  std::istringstream in{std::string(content)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = text::trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const auto key = text::trim(body.substr(0, eq));
    const auto value = text::trim(body.substr(eq + 1));
    if (key == "preset" && first) {
      c = from_preset(value);
    } else {
      try {
        c.set(key, value);
      } catch (const ConfigError& e) {
        throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    first = false;
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::to_text() const {
  std::string out = "preset = " + preset + "\n";
  for (const auto& [name, f] : fields()) out += name + " = " + f.get(*this) + "\n";
  return out;
}

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  j["preset"] = preset;
  // Every value is a number or a boolean, which read back as JSON.
  for (const auto& [name, f] : fields()) j[name] = nlohmann::ordered_json::parse(f.get(*this));
  return j;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out{"preset"};
  for (const auto& [name, f] : fields()) out.push_back(name);
  return out;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (beam < 1) throw ConfigError("beam must be at least 1");
  if (decode_max_len < 1) throw ConfigError("decode_max_len must be at least 1");
  if (max_triples < 1) throw ConfigError("max_triples must be at least 1");
  if (workers < 1) throw ConfigError("workers must be at least 1");
  if (dedup_threshold < 0.0 || dedup_threshold > 1.0) throw ConfigError("dedup_threshold must lie in [0, 1]");
}

std::filesystem::path resolve_config_path(const std::filesystem::path& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kConfigEnvVar); env != nullptr && *env != '\0') return env;
  return {};
}

}  // namespace punchline
