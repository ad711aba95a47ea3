#include "punchline/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "punchline/errors.hpp"

namespace punchline {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'P', 'L', 'C', 'K'};

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buffer_.append(p, n);
  }
  template <typename T>
  void pod(T value) {
    bytes(&value, sizeof value);
  }
  void string32(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void matrix(const std::string& name, const Matrix& m) {
    string32(name);
    pod(static_cast<std::uint64_t>(m.rows()));
    pod(static_cast<std::uint64_t>(m.cols()));
    bytes(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
  }
  std::string& buffer() { return buffer_; }

 private:
  std::string buffer_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  void bytes(void* out, std::size_t n) {
    if (n > data_.size() - pos_) throw CheckpointError("checkpoint is truncated");
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T pod() {
    T value;
    bytes(&value, sizeof value);
    return value;
  }
  std::string string(std::size_t n) {
    if (n > data_.size() - pos_) throw CheckpointError("checkpoint is truncated");
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::pair<std::string, Matrix> matrix() {
    std::string name = string(pod<std::uint32_t>());
    const auto rows = pod<std::uint64_t>();
    const auto cols = pod<std::uint64_t>();
    if (rows != 0 && cols > (data_.size() - pos_) / sizeof(double) / rows) {
      throw CheckpointError("checkpoint tensor '" + name + "' is truncated");
    }
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    bytes(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
    return {std::move(name), std::move(m)};
  }
  std::size_t position() const { return pos_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  nlohmann::json partition = {{"pretrainable", nlohmann::json::array()}, {"knowledge_only", nlohmann::json::array()}};
  for (const auto& [name, value] : ck.params) {
    partition[PunchlineModel::is_knowledge_only(name) ? "knowledge_only" : "pretrainable"].push_back(name);
  }
  const nlohmann::json manifest = {
      {"format", "punchline-checkpoint"},
      {"config", ck.config},
      {"with_knowledge", ck.with_knowledge},
      {"stage", ck.stage},
      {"partition", partition},
      {"tokenizer", {{"vocab", ck.tokenizer.vocab_text()}, {"merges", ck.tokenizer.merges_text()}}},
      {"step", ck.step},
      {"trainer_state", ck.trainer_state},
      {"run_config", ck.run_config},
  };
  Writer w;
  w.bytes(kMagic, 4);
  w.pod(kCheckpointVersion);
  const std::string text = manifest.dump();
  w.pod(static_cast<std::uint64_t>(text.size()));
  w.bytes(text.data(), text.size());
  w.pod(static_cast<std::uint64_t>(ck.params.size() + ck.adam_m.size() + ck.adam_v.size()));
  for (const auto& [name, value] : ck.params) w.matrix("param." + name, value);
  for (const auto& [name, value] : ck.adam_m) w.matrix("adam.m." + name, value);
  for (const auto& [name, value] : ck.adam_v) w.matrix("adam.v." + name, value);
  w.pod(fnv1a(w.buffer()));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) throw CheckpointError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string data = ss.str();
  if (data.size() < 4 + 4 + 8 + 8 + 8 || std::memcmp(data.data(), kMagic, 4) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint");
  }
  const std::string_view body(data.data(), data.size() - 8);
  std::uint64_t stored_hash;
  std::memcpy(&stored_hash, data.data() + body.size(), 8);
  if (stored_hash != fnv1a(body)) throw CheckpointError(path.string() + " is corrupt (hash mismatch)");

  Reader r(body);
  r.string(4);
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  try {
    const auto manifest = nlohmann::json::parse(r.string(r.pod<std::uint64_t>()));
    ck.config = manifest.at("config").get<ModelConfig>();
    ck.with_knowledge = manifest.at("with_knowledge").get<bool>();
    ck.stage = manifest.at("stage").get<std::string>();
    ck.tokenizer = Tokenizer::from_text(manifest.at("tokenizer").at("vocab").get<std::string>(),
                                        manifest.at("tokenizer").at("merges").get<std::string>());
    ck.step = manifest.at("step").get<std::int64_t>();
    ck.trainer_state = manifest.at("trainer_state");
    ck.run_config = manifest.at("run_config");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint manifest: ") + e.what());
  }
  const auto count = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    auto [name, value] = r.matrix();
    const auto take = [&](std::string_view prefix, std::map<std::string, Matrix>& into) {
      if (name.rfind(prefix, 0) != 0) return false;
      into.emplace(name.substr(prefix.size()), std::move(value));
      return true;
    };
    if (!take("param.", ck.params) && !take("adam.m.", ck.adam_m) && !take("adam.v.", ck.adam_v)) {
      throw CheckpointError("unknown tensor '" + name + "' in checkpoint");
    }
  }
  if (r.position() != body.size()) throw CheckpointError("trailing bytes in checkpoint");
  return ck;
}

Checkpoint snapshot(const PunchlineModel& model, const Tokenizer& tokenizer, std::string stage) {
  Checkpoint ck;
  ck.config = model.config();
  ck.with_knowledge = model.with_knowledge();
  ck.stage = std::move(stage);
  ck.tokenizer = tokenizer;
  for (const auto& [name, var] : model.params()) ck.params.emplace(name, var.value());
  return ck;
}

void load_params(PunchlineModel& model, const std::map<std::string, Matrix>& values) {
  for (auto& [name, var] : model.params()) {
    const auto it = values.find(name);
    if (it == values.end()) throw CheckpointError("checkpoint lacks parameter '" + name + "'");
    if (it->second.rows() != var.rows() || it->second.cols() != var.cols()) {
      throw CheckpointError("shape mismatch for parameter '" + name + "'");
    }
    var.mutable_value() = it->second;
  }
}

PunchlineModel restore_model(const Checkpoint& checkpoint) {
  PunchlineModel model(checkpoint.config, checkpoint.with_knowledge, 0);
  if (model.params().size() != checkpoint.params.size()) {
    throw CheckpointError("checkpoint parameter count differs from the model");
  }
  load_params(model, checkpoint.params);
  return model;
}

}  // namespace punchline
