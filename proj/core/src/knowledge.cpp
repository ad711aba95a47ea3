#include "punchline/knowledge.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <set>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "punchline/errors.hpp"
#include "punchline/log.hpp"
#include "punchline/text.hpp"

namespace punchline::knowledge {
namespace {

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Url split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  const auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  const auto path_start = url.find('/', host_start);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::string trimmed(const std::string& s) { return std::string(text::trim(s)); }

// Runs `attempt` up to 1 + retries times with exponential backoff. The
// callable returns an httplib::Result.
template <typename Failure, typename Attempt>
std::string with_retries(const HttpOptions& options, const std::string& what, Attempt&& attempt) {
  auto delay = options.backoff;
  std::string last_error;
  for (int tries = 0; tries <= options.retries; ++tries) {
    if (tries > 0) {
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
    httplib::Result result = attempt();
    if (!result) {
      last_error = httplib::to_string(result.error());
      continue;
    }
    if (result->status == 200) return result->body;
    last_error = "HTTP " + std::to_string(result->status);
    if (result->status < 500 && result->status != 429) break;
  }
  throw Failure(what + ": " + last_error);
}

void configure(httplib::Client& client, const HttpOptions& options) {
  client.set_connection_timeout(options.timeout);
  client.set_read_timeout(options.timeout);
  client.set_write_timeout(options.timeout);
  client.set_follow_location(true);
}

std::string sparql_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '\\' || c == '"') out.push_back('\\');
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out.push_back(c);
  }
  return out;
}

}  // namespace

Fixture Fixture::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open fixture " + path.string());
  try {
    return parse(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

Fixture Fixture::parse(const nlohmann::json& document) {
  Fixture fixture;
  if (auto it = document.find("mentions"); it != document.end()) {
    for (const auto& [setup, list] : it->items()) {
      fixture.mentions_[trimmed(setup)] = parse_linker_response(list.dump());
    }
  }
  if (auto it = document.find("triples"); it != document.end()) {
    for (const auto& [concept_id, list] : it->items()) {
      auto& out = fixture.triples_[concept_id];
      for (const auto& t : list) {
        if (!t.is_array() || t.size() != 3) throw DataError("fixture triple must be [s, r, o]");
        out.push_back({t[0].get<std::string>(), t[1].get<std::string>(), t[2].get<std::string>()});
      }
    }
  }
  return fixture;
}

std::vector<EntityMention> FixtureLinker::annotate(std::string_view text) {
  auto it = fixture_->mentions().find(std::string(text::trim(text)));
  if (it == fixture_->mentions().end()) return {};
  return it->second;
}

std::vector<Triple> FixtureTripleProvider::triples_for(const EntityMention& mention, int limit) {
  auto it = fixture_->triples().find(mention.concept_id);
  if (it == fixture_->triples().end()) return {};
  std::vector<Triple> out = it->second;
  if (limit >= 0 && out.size() > static_cast<std::size_t>(limit)) out.resize(static_cast<std::size_t>(limit));
  return out;
}

std::vector<EntityMention> parse_linker_response(std::string_view body) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw MalformedResponse(std::string("linker response is not JSON: ") + e.what());
  }
  const nlohmann::json* list = &doc;
  if (doc.is_object()) {
    auto it = doc.find("annotations");
    if (it == doc.end()) throw MalformedResponse("linker response has no `annotations` array");
    list = &*it;
  }
  if (!list->is_array()) throw MalformedResponse("linker annotations must be an array");
  std::vector<EntityMention> mentions;
  for (const auto& item : *list) {
    if (!item.is_object() || !item.contains("spot") || !item["spot"].is_string() || !item.contains("rho") ||
        !item["rho"].is_number()) {
      throw MalformedResponse("linker annotation needs string `spot` and numeric `rho`");
    }
    // Spots the linker could not resolve carry no title.
    if (!item.contains("title") || !item["title"].is_string()) continue;
    mentions.push_back({item["spot"].get<std::string>(), item["title"].get<std::string>(),
                        item["rho"].get<double>()});
  }
  return mentions;
}

std::vector<Triple> parse_sparql_response(std::string_view body, const std::string& subject_label) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw MalformedResponse(std::string("SPARQL response is not JSON: ") + e.what());
  }
  const auto results = doc.find("results");
  if (results == doc.end() || !results->is_object() || !results->contains("bindings") ||
      !(*results)["bindings"].is_array()) {
    throw MalformedResponse("SPARQL response lacks results.bindings");
  }
  std::vector<Triple> triples;
  for (const auto& binding : (*results)["bindings"]) {
    const auto value = [&](const char* var) -> std::string {
      if (!binding.contains(var) || !binding[var].is_object() || !binding[var].contains("value")) {
        throw MalformedResponse(std::string("SPARQL binding lacks ") + var);
      }
      return binding[var]["value"].get<std::string>();
    };
    triples.push_back({subject_label, value("relLabel"), value("objLabel")});
  }
  return triples;
}

std::string concept_label(std::string_view concept_id) {
  std::string label(concept_id);
  std::replace(label.begin(), label.end(), '_', ' ');
  return std::string(text::trim(label));
}

HttpLinker::HttpLinker(std::string url, std::map<std::string, std::string> extra_query, HttpOptions options)
    : url_(std::move(url)), extra_query_(std::move(extra_query)), options_(std::move(options)) {}

std::vector<EntityMention> HttpLinker::annotate(std::string_view text) {
  const Url url = split_url(url_);
  httplib::Params params{{"text", std::string(text)}};
  for (const auto& [k, v] : extra_query_) params.emplace(k, v);
  const httplib::Headers headers{{"User-Agent", options_.user_agent}, {"Accept", "application/json"}};
  const std::string body = with_retries<LinkerUnavailable>(options_, "entity linker " + url_, [&] {
    httplib::Client client(url.origin);
    configure(client, options_);
    return client.Get(url.path, params, headers);
  });
  return parse_linker_response(body);
}

SparqlTripleProvider::SparqlTripleProvider(std::string endpoint, HttpOptions options)
    : endpoint_(std::move(endpoint)), options_(std::move(options)) {}

std::string SparqlTripleProvider::build_query(std::string_view wikipedia_title, int limit) {
  std::string q;
  q += "SELECT ?relLabel ?objLabel WHERE {\n";
  q += "  ?article schema:about ?item ;\n";
  q += "           schema:isPartOf <https://en.wikipedia.org/> ;\n";
  q += "           schema:name \"" + sparql_escape(concept_label(wikipedia_title)) + "\"@en .\n";
  q += "  {\n";
  q += "    ?item ?claim ?obj .\n";
  q += "    ?rel wikibase:directClaim ?claim .\n";
  q += "    ?rel rdfs:label ?relLabel . FILTER(LANG(?relLabel) = \"en\")\n";
  q += "    ?obj rdfs:label ?objLabel . FILTER(LANG(?objLabel) = \"en\")\n";
  q += "  } UNION {\n";
  q += "    ?item schema:description ?objLabel . FILTER(LANG(?objLabel) = \"en\")\n";
  q += "    BIND(\"Description\" AS ?relLabel)\n";
  q += "  }\n";
  q += "}\nLIMIT " + std::to_string(limit) + "\n";
  return q;
}

std::vector<Triple> SparqlTripleProvider::triples_for(const EntityMention& mention, int limit) {
  const Url url = split_url(endpoint_);
  const httplib::Headers headers{{"User-Agent", options_.user_agent},
                                 {"Accept", "application/sparql-results+json"}};
  const httplib::Params form{{"query", build_query(mention.concept_id, limit)}, {"format", "json"}};
  const std::string body = with_retries<EndpointUnavailable>(options_, "SPARQL endpoint " + endpoint_, [&] {
    httplib::Client client(url.origin);
    configure(client, options_);
    return client.Post(url.path, headers, form);
  });
  return parse_sparql_response(body, concept_label(mention.concept_id));
}

std::vector<EntityMention> link_entities(std::string_view setup, LinkerProvider& provider) {
  std::vector<EntityMention> mentions;
  for (auto& m : provider.annotate(setup)) {
    if (m.confidence > kMinLinkConfidence && !m.concept_id.empty()) mentions.push_back(std::move(m));
  }
  std::stable_sort(mentions.begin(), mentions.end(), [&](const EntityMention& a, const EntityMention& b) {
    return setup.find(a.surface) < setup.find(b.surface);
  });
  return mentions;
}

std::vector<Triple> fetch_triples(const EntityMention& mention, TripleProvider& provider, int max_per_entity) {
  if (max_per_entity < 1) throw std::invalid_argument("max_per_entity must be >= 1");
  std::vector<Triple> out;
  for (auto& t : provider.triples_for(mention, max_per_entity)) {
    Triple clean{trimmed(t.subject), trimmed(t.relation), trimmed(t.object)};
    if (!clean.complete()) continue;
    out.push_back(std::move(clean));
    if (out.size() == static_cast<std::size_t>(max_per_entity)) break;
  }
  return out;
}

namespace {

corpus::JokeRecord annotate_one(corpus::JokeRecord record, LinkerProvider& linker, TripleProvider& provider,
                                int max_per_entity) {
  std::vector<EntityMention> mentions;
  try {
    mentions = link_entities(record.setup, linker);
  } catch (const Error& e) {
    log::warn("link_failed", {{"setup", record.setup}, {"error", e.what()}});
    return record;
  }
  std::set<Triple> seen(record.triples.begin(), record.triples.end());
  for (const auto& mention : mentions) {
    try {
      for (auto& t : fetch_triples(mention, provider, max_per_entity)) {
        if (seen.insert(t).second) record.triples.push_back(std::move(t));
      }
    } catch (const Error& e) {
      log::warn("fetch_failed", {{"concept", mention.concept_id}, {"error", e.what()}});
    }
  }
  return record;
}

}  // namespace

std::vector<corpus::JokeRecord> annotate_dataset(std::vector<corpus::JokeRecord> records, LinkerProvider& linker,
                                                 TripleProvider& triples, const AnnotateOptions& options) {
  if (options.max_per_entity < 1) throw std::invalid_argument("max_per_entity must be >= 1");
  const auto workers = static_cast<std::size_t>(std::max(1, options.workers));
  if (workers == 1 || records.size() < 2) {
    for (auto& r : records) r = annotate_one(std::move(r), linker, triples, options.max_per_entity);
    return records;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, records.size()); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < records.size(); i = next++) {
        records[i] = annotate_one(std::move(records[i]), linker, triples, options.max_per_entity);
      }
    });
  }
  for (auto& t : pool) t.join();
  return records;
}

}  // namespace punchline::knowledge
