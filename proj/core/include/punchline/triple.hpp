#pragma once

#include <string>
#include <tuple>

namespace punchline {

// One (subject, relation, object) knowledge fact with natural-language
// labels.
struct Triple {
  std::string subject;
  std::string relation;
  std::string object;

  bool complete() const { return !subject.empty() && !relation.empty() && !object.empty(); }

  friend bool operator==(const Triple&, const Triple&) = default;
  friend auto operator<=>(const Triple& a, const Triple& b) {
    return std::tie(a.subject, a.relation, a.object) <=> std::tie(b.subject, b.relation, b.object);
  }
};

}  // namespace punchline
