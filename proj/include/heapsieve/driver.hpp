#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "heapsieve/alloc_model.hpp"
#include "heapsieve/result.hpp"

namespace heapsieve {

/// Allocation-trace directive language. One directive per line, fields in
/// angle brackets: <malloc size id>, <calloc nmemb size id>, <free id>,
/// <realloc old size new>, <fst size>, <snd size>. Blank lines and '#'
/// comments are skipped. Layout-check lines hide behind '#X-SHRIKE ' so any
/// foreign trace consumer reads them as comments:
///   #X-SHRIKE <RECORD-ALLOC offset id>
///   #X-SHRIKE <REQUIRE-DISTANCE idx idy dist>
enum class DirectiveKind : uint8_t {
  Malloc,
  Calloc,
  Free,
  Realloc,
  Fst,
  Snd,
  RecordAlloc,
  RequireDistance,
};

struct Directive {
  DirectiveKind kind = DirectiveKind::Malloc;
  uint64_t size = 0;    // malloc/calloc element size/realloc/fst/snd
  uint64_t nmemb = 0;   // calloc only
  uint64_t offset = 0;  // record-alloc: allocations to skip
  int64_t dist = 0;     // require-distance: expected x - y
  std::string id;       // defined id; freed id; record-alloc capture id
  std::string old_id;   // realloc source; require-distance x
  std::string id2;      // require-distance y
  // Resolved at parse time so execution never touches id strings.
  int32_t slot = -1;      // address slot defined (or freed / captured)
  int32_t old_slot = -1;  // address slot consumed by realloc
  int32_t slot2 = -1;     // second capture slot of require-distance

  bool operator==(const Directive& o) const {
    return kind == o.kind && size == o.size && nmemb == o.nmemb &&
           offset == o.offset && dist == o.dist && id == o.id &&
           old_id == o.old_id && id2 == o.id2;
  }
};

struct DriverProgram {
  std::vector<Directive> directives;
  uint32_t address_slots = 0;
  uint32_t capture_slots = 0;
  bool has_markers = false;  // both fst and snd present
};

struct ParseError {
  size_t line = 0;  // 1-based
  std::string message;
};

enum class MarkerPolicy { Required, Forbidden, Optional };

struct ParseOptions {
  MarkerPolicy markers = MarkerPolicy::Required;
  bool shrike_checks = false;  // recognise #X-SHRIKE lines
};

struct ParseOutcome {
  std::optional<DriverProgram> program;
  std::vector<ParseError> errors;
  bool ok() const { return program.has_value(); }
};

/// Driver-contract parse: markers required, check lines treated as comments.
ParseOutcome parse_directives(const std::string& text);
/// Parse with explicit policy (starting states, fragments, templates).
ParseOutcome parse_trace(const std::string& text, const ParseOptions& opts);

/// Canonical single-space, newline-terminated form. parse(serialize(p)) == p.
std::string serialize(const DriverProgram& p);
std::string serialize(const Directive& d);

struct ExecFailure {
  size_t directive_index = 0;
  std::string message;
};

struct CheckOutcome {
  std::string id_x, id_y;
  int64_t want = 0;
  std::optional<int64_t> got;
  bool passed = false;
};

struct DriverResult {
  std::optional<uint64_t> addr_fst;
  std::optional<uint64_t> addr_snd;
  std::optional<int64_t> distance;  // addr_fst - addr_snd
  bool cross_region = false;
  std::optional<ExecFailure> failure;
  std::vector<std::pair<std::string, uint64_t>> captures;
  std::vector<CheckOutcome> checks;
  bool checks_passed = true;  // false if any REQUIRE-DISTANCE missed
  std::vector<BlockView> final_snapshot;
  bool ok() const { return !failure.has_value(); }
};

struct ExecOptions {
  bool want_snapshot = true;
};

/// Run a program on a fresh arena for the given allocator.
DriverResult execute(const DriverProgram& p, const AllocatorConfig& cfg,
                     const ExecOptions& opts = {});
/// Run only the directives in [from, end) on top of an existing state.
/// The search uses this with a cloned post-prefix state per candidate.
DriverResult execute_from(ArenaState state, const DriverProgram& p, size_t from,
                          const ExecOptions& opts = {});
/// Replay directives [from, to) into a state and hand it back, so a shared
/// prefix can be executed once and cloned cheaply afterwards.
Result<ArenaState> apply_program(ArenaState state, const DriverProgram& p,
                                 size_t from, size_t to);

struct ExternalRun {
  bool has_distance = false;  // false for marker-less layout-check traces
  int64_t distance = 0;
  std::vector<CheckOutcome> check_lines;  // parsed "CHECK x y value" extras
  std::string raw_stdout;
};

/// Serialize the program to a temp file and hand it to an external driver
/// process: argv = [driver, trace-path], signed distance expected on stdout
/// line 1, exit 0 on success. Nonzero exit, unparsable output, and timeouts
/// come back as errors.
Result<ExternalRun> run_external(
    const std::string& driver_path, const DriverProgram& p,
    std::chrono::milliseconds timeout = std::chrono::milliseconds(10000));

}  // namespace heapsieve
