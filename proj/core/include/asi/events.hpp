#pragma once

#include <string>
#include <vector>

namespace asi {

/// Collects non-fatal numerical events (rank deficiency, degenerate
/// activations, discarded caches). Callers own the log; operations take an
/// optional pointer and append to it when given one.
struct EventLog {
  enum class Kind {
    RankDeficientColumn,
    DegenerateSpectrum,
    CacheShapeMismatch,
  };

  struct Event {
    Kind kind;
    std::string message;
  };

  std::vector<Event> events;

  void add(Kind kind, std::string message) { events.push_back({kind, std::move(message)}); }

  std::size_t count(Kind kind) const {
    std::size_t n = 0;
    for (const auto& e : events) n += (e.kind == kind);
    return n;
  }

  bool empty() const { return events.empty(); }
};

inline void report(EventLog* log, EventLog::Kind kind, std::string message) {
  if (log != nullptr) log->add(kind, std::move(message));
}

}  // namespace asi
