#pragma once

// Background knowledge acquisition: entity linking of set-up sentences and
// subject-position triple retrieval, each behind a provider interface with
// an offline fixture implementation and an HTTP implementation.

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "punchline/corpus.hpp"
#include "punchline/triple.hpp"

namespace punchline::knowledge {

inline constexpr double kMinLinkConfidence = 0.1;
inline constexpr int kDefaultMaxPerEntity = 10;

struct EntityMention {
  std::string surface;
  std::string concept_id;
  double confidence = 0.0;

  friend bool operator==(const EntityMention&, const EntityMention&) = default;
};

class LinkerProvider {
 public:
  virtual ~LinkerProvider() = default;
  // Raw provider output, before the confidence filter.
  virtual std::vector<EntityMention> annotate(std::string_view text) = 0;
};

class TripleProvider {
 public:
  virtual ~TripleProvider() = default;
  // Subject-position triples for a concept, at most `limit` of them.
  virtual std::vector<Triple> triples_for(const EntityMention& mention, int limit) = 0;
};

// Fixture document:
//   {"mentions": {"<set-up text>": [{"spot": s, "title": t, "rho": r}, ...]},
//    "triples":  {"<concept id>": [[s, r, o], ...]}}
class Fixture {
 public:
  static Fixture load(const std::filesystem::path& path);
  static Fixture parse(const nlohmann::json& document);

  const std::map<std::string, std::vector<EntityMention>>& mentions() const { return mentions_; }
  const std::map<std::string, std::vector<Triple>>& triples() const { return triples_; }

 private:
  std::map<std::string, std::vector<EntityMention>> mentions_;
  std::map<std::string, std::vector<Triple>> triples_;
};

class FixtureLinker : public LinkerProvider {
 public:
  explicit FixtureLinker(std::shared_ptr<const Fixture> fixture) : fixture_(std::move(fixture)) {}
  std::vector<EntityMention> annotate(std::string_view text) override;

 private:
  std::shared_ptr<const Fixture> fixture_;
};

class FixtureTripleProvider : public TripleProvider {
 public:
  explicit FixtureTripleProvider(std::shared_ptr<const Fixture> fixture) : fixture_(std::move(fixture)) {}
  std::vector<Triple> triples_for(const EntityMention& mention, int limit) override;

 private:
  std::shared_ptr<const Fixture> fixture_;
};

struct HttpOptions {
  std::chrono::milliseconds timeout{10'000};
  int retries = 3;
  std::chrono::milliseconds backoff{500};  // doubled after every failed attempt
  std::string user_agent = "punchline-knowledge/0.1";
};

// GET <url>?text=...[&<extra query>]; response is a JSON array of
// {spot, title, rho} or an object with such an array under "annotations".
class HttpLinker : public LinkerProvider {
 public:
  HttpLinker(std::string url, std::map<std::string, std::string> extra_query = {}, HttpOptions options = {});
  std::vector<EntityMention> annotate(std::string_view text) override;

 private:
  std::string url_;
  std::map<std::string, std::string> extra_query_;
  HttpOptions options_;
};

// SPARQL-over-HTTP POST; result bindings carry `relLabel` and `objLabel`.
class SparqlTripleProvider : public TripleProvider {
 public:
  explicit SparqlTripleProvider(std::string endpoint, HttpOptions options = {});
  std::vector<Triple> triples_for(const EntityMention& mention, int limit) override;

  // English-label query for the Wikidata item behind an English Wikipedia
  // title; includes the item description as relation "Description".
  static std::string build_query(std::string_view wikipedia_title, int limit);

 private:
  std::string endpoint_;
  HttpOptions options_;
};

// Parses a linker response body. Throws MalformedResponse.
std::vector<EntityMention> parse_linker_response(std::string_view body);
// Parses SPARQL JSON results into triples with the given subject label.
// Throws MalformedResponse.
std::vector<Triple> parse_sparql_response(std::string_view body, const std::string& subject_label);

// Human-readable label of a concept id ("Steve_Jobs" -> "Steve Jobs").
std::string concept_label(std::string_view concept_id);

// Mentions with confidence strictly above 0.1, in order of first
// appearance in the set-up.
std::vector<EntityMention> link_entities(std::string_view setup, LinkerProvider& provider);

// Up to max_per_entity complete triples for the mention.
std::vector<Triple> fetch_triples(const EntityMention& mention, TripleProvider& provider, int max_per_entity);

struct AnnotateOptions {
  int max_per_entity = kDefaultMaxPerEntity;
  int workers = 4;
};

// Fills every record's triple list. Provider failures are logged and leave
// the record with whatever was gathered. Output order equals input order.
std::vector<corpus::JokeRecord> annotate_dataset(std::vector<corpus::JokeRecord> records, LinkerProvider& linker,
                                                 TripleProvider& triples, const AnnotateOptions& options = {});

}  // namespace punchline::knowledge
