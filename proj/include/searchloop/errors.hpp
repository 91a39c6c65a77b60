#pragma once

#include <stdexcept>
#include <string>

namespace searchloop {

/// Raised for invalid user-supplied configuration (bad thresholds, unknown
/// enum spellings, contradictory run settings). The CLI maps this to exit 2.
struct config_error : std::runtime_error {
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when an LLM or embedding backend cannot produce a reply after
/// exhausting retries (network failure, non-2xx status, malformed payload).
struct transport_error : std::runtime_error {
  explicit transport_error(const std::string& what) : std::runtime_error(what) {}
};

/// Raised by the scripted backend when a reply stream runs dry or a reply
/// fails an expectation attached to the fixture.
struct fixture_error : std::runtime_error {
  explicit fixture_error(const std::string& what) : std::runtime_error(what) {}
};

/// Raised for malformed input data files (corpus, tasks, traces, indexes).
struct data_error : std::runtime_error {
  explicit data_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace searchloop
