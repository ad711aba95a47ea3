#include "punchline/training.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "punchline/errors.hpp"
#include "punchline/log.hpp"
#include "punchline/random.hpp"

namespace punchline {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must not be negative");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("Adam betas must lie in [0, 1)");
  if (epsilon <= 0.0) throw ConfigError("epsilon must be positive");
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (max_steps < 0 || patience < 0 || eval_every < 0) throw ConfigError("step counts must not be negative");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
                     {"beta1", c.beta1},           {"beta2", c.beta2},
                     {"epsilon", c.epsilon},       {"max_epochs", c.max_epochs},
                     {"max_steps", c.max_steps},   {"patience", c.patience},
                     {"eval_every", c.eval_every}, {"clip_norm", c.clip_norm},
                     {"seed", c.seed},             {"freeze_knowledge", c.freeze_knowledge}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  j.at("batch_size").get_to(c.batch_size);
  j.at("learning_rate").get_to(c.learning_rate);
  j.at("beta1").get_to(c.beta1);
  j.at("beta2").get_to(c.beta2);
  j.at("epsilon").get_to(c.epsilon);
  j.at("max_epochs").get_to(c.max_epochs);
  j.at("max_steps").get_to(c.max_steps);
  j.at("patience").get_to(c.patience);
  j.at("eval_every").get_to(c.eval_every);
  j.at("clip_norm").get_to(c.clip_norm);
  j.at("seed").get_to(c.seed);
  j.at("freeze_knowledge").get_to(c.freeze_knowledge);
}

void to_json(nlohmann::json& j, const MetricRow& row) {
  j = nlohmann::json{{"step", row.step}, {"split", row.split}, {"loss", row.loss}, {"ppl", row.ppl}};
}

void Adam::step(ParamStore& params, const std::function<bool(const std::string&)>& trainable) {
  const auto use = [&](const std::string& name, const Var& p) {
    return p.grad().size() == p.value().size() && (!trainable || trainable(name));
  };
  double sq = 0.0;
  for (const auto& [name, p] : params) {
    if (use(name, p)) sq += p.grad().squaredNorm();
  }
  last_norm_ = std::sqrt(sq);
  double factor = 1.0;
  last_clipped_ = config_.clip_norm > 0.0 && last_norm_ > config_.clip_norm;
  if (last_clipped_) factor = config_.clip_norm / last_norm_;

  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (auto& [name, p] : params) {
    if (!use(name, p)) continue;
    auto [mit, m_new] = m_.try_emplace(name, Matrix::Zero(p.rows(), p.cols()));
    auto [vit, v_new] = v_.try_emplace(name, Matrix::Zero(p.rows(), p.cols()));
    Matrix& m = mit->second;
    Matrix& v = vit->second;
    const Matrix g = p.grad() * factor;
    m = config_.beta1 * m + (1.0 - config_.beta1) * g;
    v = config_.beta2 * v + (1.0 - config_.beta2) * g.cwiseProduct(g);
    p.mutable_value().array() -=
        config_.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + config_.epsilon);
  }
  if (last_clipped_) log::info("grad_clip", {{"step", t_}, {"norm", last_norm_}, {"max_norm", config_.clip_norm}});
}

void Adam::restore(std::int64_t steps, std::map<std::string, Matrix> m, std::map<std::string, Matrix> v) {
  t_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

std::vector<EncodedExample> encode_records(std::span<const corpus::JokeRecord> records, const Tokenizer& tokenizer,
                                           int max_len) {
  std::vector<EncodedExample> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    try {
      out.push_back(encode_example(records[i], tokenizer, max_len));
    } catch (const LengthError& e) {
      log::warn("record_skipped", {{"index", i}, {"reason", e.what()}});
    }
  }
  return out;
}

Tokenizer train_tokenizer(std::span<const corpus::JokeRecord> records, int vocab_size) {
  std::vector<std::string> texts;
  for (const auto& r : records) {
    texts.push_back(r.setup);
    texts.push_back(r.punchline);
    for (const auto& t : r.triples) {
      texts.push_back(t.subject);
      texts.push_back(t.relation);
      texts.push_back(t.object);
    }
  }
  return Tokenizer::train(texts, vocab_size);
}

Trainer::Trainer(PunchlineModel& model, TrainConfig config, std::vector<EncodedExample> train,
                 std::vector<EncodedExample> valid)
    : model_(model),
      config_(config),
      train_(std::move(train)),
      valid_(std::move(valid)),
      adam_(config_),
      rng_(config_.seed) {
  config_.validate();
  if (train_.empty()) throw DataError("no training examples");
}

bool Trainer::trainable(const std::string& name) const {
  return !(config_.freeze_knowledge && PunchlineModel::is_knowledge_only(name));
}

void Trainer::new_epoch() {
  order_.resize(train_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  shuffle(order_, rng_);
  cursor_ = 0;
  ++epoch_;
}

double Trainer::step() {
  if (order_.empty() || cursor_ >= order_.size()) new_epoch();
  const std::size_t end = std::min(order_.size(), cursor_ + static_cast<std::size_t>(config_.batch_size));
  std::size_t tokens = 0;
  for (std::size_t i = cursor_; i < end; ++i) {
    for (int t : train_[order_[i]].target) tokens += t != Tokenizer::kPad ? 1 : 0;
  }
  if (tokens == 0) throw DataError("batch without target tokens");

  model_.params().zero_grad();
  const ForwardContext ctx{true, model_.config().dropout, &rng_, nullptr, false};
  double total = 0.0;
  for (std::size_t i = cursor_; i < end; ++i) {
    const Var loss = model_.loss_sum(train_[order_[i]], ctx);
    if (!std::isfinite(loss.item())) {
      throw DivergenceError("non-finite loss at step " + std::to_string(adam_.steps() + 1));
    }
    total += loss.item();
    ag::backward(ag::scale(loss, 1.0 / static_cast<double>(tokens)));
  }
  cursor_ = end;
  adam_.step(model_.params(), [this](const std::string& name) { return trainable(name); });
  return total / static_cast<double>(tokens);
}

double Trainer::evaluate(std::span<const EncodedExample> examples) const {
  ag::NoGradGuard no_grad;
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& ex : examples) {
    total += model_.loss_sum(ex, ForwardContext{}).item();
    for (int t : ex.target) tokens += t != Tokenizer::kPad ? 1 : 0;
  }
  if (tokens == 0) return 0.0;
  const double loss = total / static_cast<double>(tokens);
  if (!std::isfinite(loss)) throw DivergenceError("non-finite evaluation loss");
  return loss;
}

TrainResult Trainer::run(const std::function<void(const MetricRow&)>& on_metric, const std::function<void()>& on_best) {
  const auto batch = static_cast<std::size_t>(config_.batch_size);
  const auto per_epoch = static_cast<std::int64_t>((train_.size() + batch - 1) / batch);
  const std::int64_t every = config_.eval_every > 0 ? config_.eval_every : per_epoch;

  TrainResult result;
  result.best_loss = std::numeric_limits<double>::infinity();
  std::map<std::string, Matrix> best;
  int since_best = 0;
  double window = 0.0;
  std::int64_t window_steps = 0;

  const auto emit = [&](const MetricRow& row) {
    result.history.push_back(row);
    log::info("metrics", row);
    if (on_metric) on_metric(row);
  };
  const auto finished = [&] {
    if (config_.max_steps > 0 && adam_.steps() >= config_.max_steps) return true;
    return epoch_ >= config_.max_epochs && cursor_ >= order_.size();
  };

  while (!finished()) {
    window += step();
    ++window_steps;
    if (adam_.steps() % every != 0 && !finished()) continue;

    const double train_loss = window / static_cast<double>(window_steps);
    window = 0.0;
    window_steps = 0;
    emit({adam_.steps(), "train", train_loss, std::exp(train_loss)});
    double selected = train_loss;
    if (!valid_.empty()) {
      selected = evaluate(valid_);
      emit({adam_.steps(), "valid", selected, std::exp(selected)});
    }
    if (selected < result.best_loss) {
      result.best_loss = selected;
      result.best_step = adam_.steps();
      since_best = 0;
      best.clear();
      for (const auto& [name, p] : model_.params()) best.emplace(name, p.value());
      if (on_best) on_best();
    } else if (config_.patience > 0 && ++since_best >= config_.patience) {
      result.early_stopped = true;
      log::info("early_stop", {{"step", adam_.steps()}, {"best_step", result.best_step}});
      break;
    }
  }
  result.steps = adam_.steps();
  if (!best.empty()) {
    for (auto& [name, p] : model_.params()) p.mutable_value() = best.at(name);
  }
  return result;
}

void Trainer::save_state(Checkpoint& ck) const {
  ck.step = adam_.steps();
  ck.adam_m = adam_.first_moments();
  ck.adam_v = adam_.second_moments();
  ck.trainer_state = {{"rng", save_rng(rng_)},
                      {"order", order_},
                      {"cursor", cursor_},
                      {"epoch", epoch_},
                      {"train_config", config_}};
}

void Trainer::load_state(const Checkpoint& ck) {
  try {
    const auto& s = ck.trainer_state;
    rng_ = load_rng(s.at("rng").get<std::string>());
    order_ = s.at("order").get<std::vector<std::size_t>>();
    cursor_ = s.at("cursor").get<std::size_t>();
    epoch_ = s.at("epoch").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint lacks trainer state: ") + e.what());
  }
  for (std::size_t i : order_) {
    if (i >= train_.size()) throw CheckpointError("checkpoint data order does not fit the training set");
  }
  adam_.restore(ck.step, ck.adam_m, ck.adam_v);
}

PunchlineModel transplant(const Checkpoint& pretrained, const ModelConfig& config, std::uint64_t seed) {
  const ModelConfig& src = pretrained.config;
  if (src.d_model != config.d_model || src.n_blocks != config.n_blocks || src.n_heads != config.n_heads ||
      src.d_ff != config.d_ff || src.vocab_size != config.vocab_size) {
    throw ConfigMismatch("pretrained checkpoint dimensions differ from the fused model config");
  }
  PunchlineModel fused(config, true, seed);
  std::size_t copied = 0;
  for (auto& [name, p] : fused.params()) {
    if (PunchlineModel::is_knowledge_only(name)) continue;
    const auto it = pretrained.params.find(name);
    if (it == pretrained.params.end()) throw ConfigMismatch("pretrained checkpoint lacks '" + name + "'");
    if (it->second.rows() != p.rows() || it->second.cols() != p.cols()) {
      throw ConfigMismatch("shape mismatch for '" + name + "'");
    }
    p.mutable_value() = it->second;
    ++copied;
  }
  log::info("transplant", {{"copied", copied}, {"fresh", fused.params().size() - copied}, {"seed", seed}});
  return fused;
}

PunchlineModel transplant(const Checkpoint& pretrained, std::uint64_t seed) {
  return transplant(pretrained, pretrained.config, seed);
}

namespace {

StageOutput run_stage(PunchlineModel& model, const std::string& stage, std::span<const corpus::JokeRecord> train,
                      std::span<const corpus::JokeRecord> valid, const Tokenizer& tokenizer,
                      const StageOptions& options) {
  Trainer trainer(model, options.train, encode_records(train, tokenizer, model.config().max_len),
                  encode_records(valid, tokenizer, model.config().max_len));
  std::ofstream metrics;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    metrics.open(*options.out_dir / (stage + ".metrics.jsonl"), std::ios::trunc);
  }
  nlohmann::json provenance = options.run_config;
  provenance["train"] = options.train;
  StageOutput out;
  const auto capture = [&] {
    Checkpoint ck = snapshot(model, tokenizer, stage);
    trainer.save_state(ck);
    ck.run_config = provenance;
    return ck;
  };
  out.result = trainer.run(
      [&](const MetricRow& row) {
        if (metrics.is_open()) metrics << nlohmann::json(row).dump() << '\n' << std::flush;
      },
      [&] {
        out.best = capture();
        if (options.out_dir) save_checkpoint(*options.out_dir / (stage + ".best"), out.best);
      });
  if (options.out_dir) {
    // The model now holds the best parameters; record the final optimizer
    // state alongside them.
    save_checkpoint(*options.out_dir / (stage + ".last"), capture());
  }
  return out;
}

}  // namespace

StageOutput pretrain(std::span<const corpus::JokeRecord> train, std::span<const corpus::JokeRecord> valid,
                     const Tokenizer& tokenizer, const ModelConfig& config, const StageOptions& options) {
  ModelConfig c = config;
  c.vocab_size = tokenizer.vocab_size();
  PunchlineModel model(c, false, options.train.seed);
  log::info("pretrain_start", {{"params", model.params().scalar_count()}, {"train", train.size()},
                               {"valid", valid.size()}, {"config", c}});
  return run_stage(model, "pretrain", train, valid, tokenizer, options);
}

StageOutput finetune(PunchlineModel model, std::span<const corpus::JokeRecord> train,
                     std::span<const corpus::JokeRecord> valid, const Tokenizer& tokenizer,
                     const StageOptions& options) {
  if (!model.with_knowledge()) throw ConfigMismatch("finetune needs the fused model");
  log::info("finetune_start", {{"params", model.params().scalar_count()}, {"train", train.size()},
                               {"valid", valid.size()}, {"frozen_knowledge", options.train.freeze_knowledge}});
  return run_stage(model, "finetune", train, valid, tokenizer, options);
}

}  // namespace punchline
