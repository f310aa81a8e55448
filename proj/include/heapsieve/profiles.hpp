#pragma once

#include <string>
#include <vector>

#include "heapsieve/alloc_model.hpp"
#include "heapsieve/result.hpp"

namespace heapsieve {

/// Names of the allocator profiles built into the library. Each one is also
/// checked in under configs/profiles/<name>.json; a test keeps file and
/// built-in in sync.
std::vector<std::string> builtin_profile_names();

/// Fetch a built-in profile by name. Error if unknown.
Result<AllocatorConfig> builtin_profile(const std::string& name);

/// Parse a profile from JSON text (kebab-case keys, see README).
Result<AllocatorConfig> profile_from_json(const std::string& text);

/// Canonical JSON form of a config, suitable for checking in.
std::string profile_to_json(const AllocatorConfig& cfg);

/// Resolve --profile style arguments: a built-in name, else a file path.
Result<AllocatorConfig> resolve_profile(const std::string& name_or_path);

}  // namespace heapsieve
