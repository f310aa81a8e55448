#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "heapsieve/driver.hpp"
#include "heapsieve/result.hpp"

namespace heapsieve {

/// A marker-free allocation prefix replayed before every candidate to put
/// the heap into a lived-in, fragmented condition.
struct StartingState {
  std::string name;
  DriverProgram prefix;
  uint64_t allocs = 0;
  uint64_t frees = 0;

  uint64_t interactions() const { return allocs + frees; }
};

/// Names of the generated states shipped with the tool, smallest first.
std::vector<std::string> builtin_state_names();

/// Deterministically generates one of the built-in states. The directive
/// stream depends only on the name, so two runs (or two machines) always
/// agree on it.
Result<StartingState> synthetic_starting_state(const std::string& name);

/// Loads a captured trace as a starting state. Markers are rejected; the
/// prefix must be plain allocator traffic.
Result<StartingState> load_starting_state(const std::string& path);

/// Built-in name, or "none"/"" for an empty heap, or a path to a trace file.
Result<StartingState> resolve_starting_state(const std::string& name_or_path);

}  // namespace heapsieve
