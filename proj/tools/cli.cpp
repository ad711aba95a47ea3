#include "cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include "punchline/checkpoint.hpp"
#include "punchline/config.hpp"
#include "punchline/corpus.hpp"
#include "punchline/decoding.hpp"
#include "punchline/errors.hpp"
#include "punchline/evaluation.hpp"
#include "punchline/gradcheck.hpp"
#include "punchline/kgraph.hpp"
#include "punchline/knowledge.hpp"
#include "punchline/log.hpp"
#include "punchline/model.hpp"
#include "punchline/text.hpp"
#include "punchline/training.hpp"

namespace fs = std::filesystem;

namespace punchline::cli {
namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string log_level = "info";
  std::optional<int> workers;
};

RunConfig load_run_config(const Common& common, const std::string& preset) {
  RunConfig cfg = RunConfig::from_preset(preset);
  const fs::path path = resolve_config_path(common.config_path);
  if (!path.empty()) {
    cfg = RunConfig::load(path);
    if (!preset.empty() && preset != "desk" && preset != cfg.preset) {
      throw UsageError("--preset " + preset + " conflicts with the config file's preset " + cfg.preset);
    }
  }
  for (const auto& kv : common.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    cfg.set(text::trim(std::string_view(kv).substr(0, eq)), text::trim(std::string_view(kv).substr(eq + 1)));
  }
  if (common.seed) cfg.train.seed = *common.seed;
  if (common.workers) cfg.workers = *common.workers;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* app, Common& common, bool with_config) {
  if (with_config) {
    app->add_option("--config", common.config_path,
                    std::string("Run config file (key = value); falls back to $") + kConfigEnvVar);
    app->add_option("--set", common.overrides, "Override a config key, e.g. --set learning_rate=0.0005");
  }
  app->add_option("--seed", common.seed, "Seed for every random choice");
  app->add_option("--workers", common.workers, "Worker threads where parallel work is safe");
}

log::Level parse_level(const std::string& name) {
  static const std::map<std::string, log::Level> levels = {{"debug", log::Level::kDebug},
                                                          {"info", log::Level::kInfo},
                                                          {"warn", log::Level::kWarn},
                                                          {"error", log::Level::kError},
                                                          {"off", log::Level::kOff}};
  return levels.at(name);
}

void ensure_distinct(const fs::path& input, const fs::path& output) {
  if (fs::exists(output) && fs::equivalent(input, output)) {
    throw UsageError("output " + output.string() + " would overwrite the input");
  }
}

std::vector<corpus::JokeRecord> read_optional(const fs::path& path) {
  if (!fs::exists(path)) return {};
  return corpus::read_jsonl(path);
}

nlohmann::json provenance(const RunConfig& cfg, const std::string& stage, const fs::path& data) {
  nlohmann::json j = nlohmann::json::parse(cfg.to_json().dump());
  j["stage"] = stage;
  j["data"] = data.generic_string();
  return j;
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Knowledge-fused punchline generation: corpus, knowledge, training, decoding and evaluation."};
  app.name("punchline");
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  // Lets the global options appear after a subcommand.
  app.fallthrough();
  Common common;
  app.add_option("--log-level", common.log_level, "debug, info, warn, error or off")
      ->check(CLI::IsMember({"debug", "info", "warn", "error", "off"}));

  // corpus build
  auto* corpus_cmd = app.add_subcommand("corpus", "Joke corpus preparation");
  corpus_cmd->require_subcommand(1);
  auto* build = corpus_cmd->add_subcommand("build", "Filter, segment, de-duplicate and split raw jokes");
  std::vector<std::string> build_inputs;
  std::string build_out;
  double dedup = corpus::kDefaultDedupThreshold;
  std::uint64_t build_seed = 0;
  build->add_option("--input", build_inputs, "Raw joke files (.csv with a Joke column, or one joke per line)")
      ->required()
      ->check(CLI::ExistingFile);
  build->add_option("--output-dir,--out", build_out, "Output directory for train/valid/test.jsonl")->required();
  build->add_option("--dedup-threshold", dedup, "Bag-of-words cosine above which a later joke is dropped")
      ->check(CLI::Range(0.0, 1.0));
  build->add_option("--seed", build_seed, "Split shuffle seed");

  // knowledge annotate
  auto* knowledge_cmd = app.add_subcommand("knowledge", "Knowledge retrieval");
  knowledge_cmd->require_subcommand(1);
  auto* annotate = knowledge_cmd->add_subcommand("annotate", "Attach knowledge triples to every record");
  std::string ann_input, ann_output, fixture, linker_url, sparql_url;
  std::map<std::string, std::string> linker_params;
  int max_triples = knowledge::kDefaultMaxPerEntity;
  int ann_workers = 1;
  annotate->add_option("--input", ann_input, "Corpus .jsonl")->required()->check(CLI::ExistingFile);
  annotate->add_option("--output", ann_output, "Annotated .jsonl")->required();
  auto* fixture_opt = annotate->add_option("--fixtures,--fixture", fixture, "Offline linker + triple fixture (JSON)")
                          ->check(CLI::ExistingFile);
  auto* linker_opt = annotate->add_option("--linker-url", linker_url, "Entity linker endpoint");
  annotate->add_option("--linker-param", linker_params, "Extra linker query parameter (key value)");
  auto* sparql_opt = annotate->add_option("--sparql-url", sparql_url, "SPARQL endpoint");
  annotate->add_option("--max-per-entity,--max-triples", max_triples, "Triples per linked entity")->check(CLI::PositiveNumber);
  annotate->add_option("--workers", ann_workers, "Concurrent annotation workers")->check(CLI::PositiveNumber);
  bool live = false;
  auto* live_opt = annotate->add_flag("--live", live,
                                      "Use the public TagMe and Wikidata endpoints (pass gcube-token via --linker-param)");
  fixture_opt->excludes(linker_opt)->excludes(sparql_opt)->excludes(live_opt);
  live_opt->excludes(linker_opt)->excludes(sparql_opt);
  linker_opt->needs(sparql_opt);
  sparql_opt->needs(linker_opt);

  // kgraph dump
  auto* kgraph_cmd = app.add_subcommand("kgraph", "Knowledge graph inspection");
  kgraph_cmd->require_subcommand(1);
  auto* dump = kgraph_cmd->add_subcommand("dump", "Write one record's graph (DOT or JSON), optionally with attention");
  std::string dump_input, dump_output, dump_format = "dot", dump_ckpt;
  std::size_t dump_index = 0;
  dump->add_option("--input", dump_input, "Annotated .jsonl")->required()->check(CLI::ExistingFile);
  dump->add_option("--record,--index", dump_index, "Record index (0-based)");
  dump->add_option("--format", dump_format, "dot or json")->check(CLI::IsMember({"dot", "json"}));
  dump->add_option("--ckpt", dump_ckpt, "Fused checkpoint; adds graph and fusion attention to JSON output")
      ->check(CLI::ExistingFile);
  dump->add_option("--output", dump_output, "Output file (default stdout)");

  // train
  auto* train_cmd = app.add_subcommand("train", "Two-step training");
  train_cmd->require_subcommand(1);
  auto* pretrain_cmd = train_cmd->add_subcommand("pretrain", "Train the plain Transformer on (set-up, punchline)");
  std::string pre_data, pre_out, pre_preset = "desk";
  pretrain_cmd->add_option("--data", pre_data, "Directory with train.jsonl (valid.jsonl optional)")
      ->required()
      ->check(CLI::ExistingDirectory);
  pretrain_cmd->add_option("--out", pre_out, "Checkpoint directory")->required();
  pretrain_cmd->add_option("--preset", pre_preset, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  add_common(pretrain_cmd, common, true);

  auto* finetune_cmd = train_cmd->add_subcommand("finetune", "Transplant into the fused model and fine-tune it");
  std::string ft_init, ft_data, ft_out, ft_preset = "desk";
  bool freeze = false;
  finetune_cmd->add_option("--init", ft_init, "Pretrained checkpoint (e.g. ckpt/pretrain.best)")
      ->required()
      ->check(CLI::ExistingFile);
  finetune_cmd->add_option("--data", ft_data, "Directory with annotated train.jsonl (valid.jsonl optional)")
      ->required()
      ->check(CLI::ExistingDirectory);
  finetune_cmd->add_option("--out", ft_out, "Checkpoint directory")->required();
  finetune_cmd->add_option("--preset", ft_preset, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  finetune_cmd->add_flag("--freeze-knowledge", freeze, "Keep knowledge-only parameters at their initial values");
  add_common(finetune_cmd, common, true);

  // generate
  auto* generate_cmd = app.add_subcommand("generate", "Beam-search punchlines for a corpus file");
  std::string gen_ckpt, gen_input, gen_output;
  int beam = 5, gen_max_len = 64;
  bool raw_score = false;
  generate_cmd->add_option("--ckpt", gen_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  generate_cmd->add_option("--input", gen_input, "Annotated .jsonl")->required()->check(CLI::ExistingFile);
  generate_cmd->add_option("--output", gen_output, "Hypotheses, one per line")->required();
  generate_cmd->add_option("--beam", beam, "Beam size")->check(CLI::PositiveNumber);
  generate_cmd->add_option("--max-len", gen_max_len, "Maximum generated tokens")->check(CLI::PositiveNumber);
  generate_cmd->add_flag("--raw-score", raw_score, "Rank final hypotheses by total log-probability");

  // evaluate
  auto* evaluate_cmd = app.add_subcommand("evaluate", "ROUGE-1/2/L of hypotheses against references");
  std::string ev_hyps, ev_refs, ev_output;
  bool as_json = false, as_table = false;
  evaluate_cmd->add_option("--hyps", ev_hyps, "Hypotheses file")->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--refs", ev_refs, "References (.txt lines or .jsonl punchlines)")
      ->required()
      ->check(CLI::ExistingFile);
  auto* json_flag = evaluate_cmd->add_flag("--json", as_json, "JSON report");
  auto* table_flag = evaluate_cmd->add_flag("--table", as_table, "Table report (default)");
  json_flag->excludes(table_flag);
  evaluate_cmd->add_option("--output", ev_output, "Also write the report to this file");

  // selftest
  auto* selftest_cmd = app.add_subcommand("selftest", "Gradient checks and model property suites");
  std::uint64_t st_seed = 7;
  selftest_cmd->add_option("--seed", st_seed, "Seed for the randomized cases");

  if (argc > 1 && argv[1][0] != '-') {
    const std::string name = argv[1];
    const auto subs = app.get_subcommands([](const CLI::App*) { return true; });
    if (std::none_of(subs.begin(), subs.end(), [&](const CLI::App* s) { return s->get_name() == name; })) {
      err << "error: unknown subcommand '" << name << "'\n" << app.help();
      return 1;
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 1;
  }

  log::set_sink(&err);
  log::set_level(parse_level(common.log_level));

  try {
    if (build->parsed()) {
      std::vector<fs::path> inputs(build_inputs.begin(), build_inputs.end());
      for (const auto& in : inputs) {
        if (fs::exists(build_out) && fs::is_directory(build_out) && fs::equivalent(in.parent_path(), build_out) &&
            (in.filename() == "train.jsonl" || in.filename() == "valid.jsonl" || in.filename() == "test.jsonl")) {
          throw UsageError("input " + in.string() + " would be overwritten");
        }
      }
      corpus::BuildOptions options;
      options.dedup_threshold = dedup;
      options.seed = build_seed;
      const auto report = corpus::build_corpus(inputs, build_out, options);
      out << "raw " << report.raw << ", filtered " << report.filtered << ", segmented " << report.segmented
          << ", deduplicated " << report.deduplicated << " -> train " << report.train << ", valid " << report.valid
          << ", test " << report.test << '\n';
      return 0;
    }

    if (annotate->parsed()) {
      ensure_distinct(ann_input, ann_output);
      std::unique_ptr<knowledge::LinkerProvider> linker;
      std::unique_ptr<knowledge::TripleProvider> triples;
      if (!fixture.empty()) {
        auto shared = std::make_shared<const knowledge::Fixture>(knowledge::Fixture::load(fixture));
        linker = std::make_unique<knowledge::FixtureLinker>(shared);
        triples = std::make_unique<knowledge::FixtureTripleProvider>(shared);
      } else if (live || !linker_url.empty()) {
        if (live) {
          linker_url = "https://tagme.d4science.org/tagme/tag";
          sparql_url = "https://query.wikidata.org/sparql";
        }
        linker = std::make_unique<knowledge::HttpLinker>(linker_url, linker_params);
        triples = std::make_unique<knowledge::SparqlTripleProvider>(sparql_url);
      } else {
        throw UsageError("knowledge annotate needs --fixtures, --live, or --linker-url with --sparql-url");
      }
      auto records = corpus::read_jsonl(ann_input);
      records = knowledge::annotate_dataset(std::move(records), *linker, *triples, {max_triples, ann_workers});
      corpus::write_jsonl(ann_output, records);
      std::size_t with = 0, total = 0;
      for (const auto& r : records) {
        with += r.triples.empty() ? 0 : 1;
        total += r.triples.size();
      }
      out << "annotated " << records.size() << " records, " << with << " with knowledge, " << total
          << " triples\n";
      return 0;
    }

    if (dump->parsed()) {
      const auto records = corpus::read_jsonl(dump_input);
      if (dump_index >= records.size()) {
        throw UsageError("--index " + std::to_string(dump_index) + " out of range (" +
                         std::to_string(records.size()) + " records)");
      }
      const auto& record = records[dump_index];
      const auto graph = kgraph::build_graph(record.triples);
      std::string text;
      if (dump_format == "dot" && dump_ckpt.empty()) {
        text = kgraph::to_dot(graph);
      } else {
        nlohmann::ordered_json j;
        j["setup"] = record.setup;
        j["connected"] = kgraph::weakly_connected(graph);
        for (const auto& node : graph.nodes) {
          j["nodes"].push_back({{"id", node.id}, {"kind", kgraph::kind_name(node.kind)}, {"label", node.label}});
        }
        for (const auto& e : graph.edges) j["edges"].push_back({e.source, e.target});
        if (!dump_ckpt.empty()) {
          const auto ck = load_checkpoint(dump_ckpt);
          const auto model = restore_model(ck);
          const auto ex = encode_example(record, ck.tokenizer, model.config().max_len);
          AttentionProbe probe;
          ForwardContext ctx;
          ctx.probe = &probe;
          ag::NoGradGuard no_grad;
          const Var memory = model.encode_setup(ex.source, ctx);
          const auto h = model.encode_graph(ex, ctx);
          model.decode(ex.decoder_input(), memory, h, ctx);
          for (const auto& entry : probe.entries) {
            if (entry.kind != "gat" && entry.kind != "fusion") continue;
            std::vector<std::vector<double>> rows;
            for (Eigen::Index r = 0; r < entry.weights.rows(); ++r) {
              rows.emplace_back(entry.weights.row(r).data(), entry.weights.row(r).data() + entry.weights.cols());
            }
            j["attention"][entry.kind].push_back(rows);
          }
          for (const auto& g : probe.gates) j["gate_mean"].push_back(g.mean());
        }
        text = j.dump(2) + "\n";
      }
      if (dump_output.empty()) {
        out << text;
      } else {
        std::ofstream(dump_output) << text;
      }
      return 0;
    }

    if (pretrain_cmd->parsed()) {
      const auto cfg = load_run_config(common, pre_preset);
      const fs::path data(pre_data);
      const auto train = corpus::read_jsonl(data / "train.jsonl");
      const auto valid = read_optional(data / "valid.jsonl");
      const Tokenizer tokenizer = train_tokenizer(train, cfg.model.vocab_size);
      fs::create_directories(pre_out);
      tokenizer.save(fs::path(pre_out) / "tokenizer.vocab", fs::path(pre_out) / "tokenizer.merges");
      StageOptions options;
      options.train = cfg.train;
      options.out_dir = fs::path(pre_out);
      options.run_config = provenance(cfg, "pretrain", data);
      const auto stage = pretrain(train, valid, tokenizer, cfg.model, options);
      out << "pretrain: " << stage.result.steps << " steps, best loss " << stage.result.best_loss << " at step "
          << stage.result.best_step << " -> " << (fs::path(pre_out) / "pretrain.best").string() << '\n';
      return 0;
    }

    if (finetune_cmd->parsed()) {
      auto cfg = load_run_config(common, ft_preset);
      if (freeze) cfg.train.freeze_knowledge = true;
      const fs::path data(ft_data);
      const auto train = corpus::read_jsonl(data / "train.jsonl");
      const auto valid = read_optional(data / "valid.jsonl");
      const auto init = load_checkpoint(ft_init);
      std::optional<PunchlineModel> model;
      if (init.with_knowledge) {
        model.emplace(restore_model(init));
      } else {
        ModelConfig fused = init.config;
        fused.gat_layers = cfg.model.gat_layers;
        fused.gat_heads = cfg.model.gat_heads;
        fused.gat_slope = cfg.model.gat_slope;
        fused.dropout = cfg.model.dropout;
        model.emplace(transplant(init, fused, cfg.train.seed));
      }
      StageOptions options;
      options.train = cfg.train;
      options.out_dir = fs::path(ft_out);
      options.run_config = provenance(cfg, "finetune", data);
      options.run_config["init"] = ft_init;
      const auto stage = finetune(std::move(*model), train, valid, init.tokenizer, options);
      out << "finetune: " << stage.result.steps << " steps, best loss " << stage.result.best_loss << " at step "
          << stage.result.best_step << " -> " << (fs::path(ft_out) / "finetune.best").string() << '\n';
      return 0;
    }

    if (generate_cmd->parsed()) {
      ensure_distinct(gen_input, gen_output);
      const auto ck = load_checkpoint(gen_ckpt);
      BeamOptions options;
      options.beam = beam;
      options.max_len = gen_max_len;
      options.length_normalize = !raw_score;
      nlohmann::json meta = ck.run_config;
      meta["checkpoint"] = fs::path(gen_ckpt).filename().string();
      generate_file(gen_input, ck, gen_output, options, meta);
      out << "wrote " << gen_output << '\n';
      return 0;
    }

    if (evaluate_cmd->parsed()) {
      const auto report = evaluation::evaluate_corpus(ev_hyps, ev_refs);
      const std::string text = as_json ? evaluation::to_json(report).dump(2) + "\n" : evaluation::format_table(report);
      out << text;
      if (!ev_output.empty()) {
        std::ofstream file(ev_output, std::ios::binary | std::ios::trunc);
        if (!file) throw Error("cannot write " + ev_output);
        file << text;
      }
      return 0;
    }

    if (selftest_cmd->parsed()) {
      bool all = true;
      for (const auto& r : gradcheck::run_selftest(st_seed)) {
        all = all && r.passed;
        char line[256];
        std::snprintf(line, sizeof line, "%-18s %-4s max_error=%.3e threshold=%.0e checked=%zu %.2fs\n",
                      r.name.c_str(), r.passed ? "PASS" : "FAIL", r.max_error, r.threshold, r.checked, r.seconds);
        out << line;
        if (!r.passed) out << "  worst: " << r.worst << '\n';
      }
      return all ? 0 : 2;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    log::error("failed", {{"what", e.what()}});
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

int dispatch(int argc, const char* const* argv) { return dispatch(argc, argv, std::cout, std::cerr); }

}  // namespace punchline::cli
