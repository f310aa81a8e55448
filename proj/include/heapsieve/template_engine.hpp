#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "heapsieve/alloc_model.hpp"
#include "heapsieve/driver.hpp"
#include "heapsieve/rng.hpp"
#include "heapsieve/search.hpp"

namespace heapsieve {

enum class TemplateNodeKind : uint8_t {
  Verbatim,         // a fixed directive line, kept as written
  HeapManip,        // expansion point filled with fragments at instantiation
  RecordAlloc,      // capture the address of an upcoming allocation
  RequireDistance,  // post-run check between two captured addresses
};

struct TemplateNode {
  TemplateNodeKind kind = TemplateNodeKind::Verbatim;
  std::string text;             // Verbatim: the original line
  std::vector<uint64_t> sizes;  // HeapManip: restrict fragments to these sizes
  uint64_t offset = 0;          // RecordAlloc: allocations to skip first
  std::string id;               // RecordAlloc: capture id; RequireDistance: x
  std::string id2;              // RequireDistance: y
  int64_t dist = 0;             // RequireDistance: wanted x - y
};

struct Template {
  std::vector<TemplateNode> nodes;
};

/// Parses a template: regular directive lines stay verbatim, and the
/// "#X-SHRIKE <...>" comment directives become HEAP-MANIP expansion points,
/// RECORD-ALLOC captures, and REQUIRE-DISTANCE checks.
Result<Template> parse_template(const std::string& text);

/// What a fragment does to the heap, without re-reading its directives:
/// which request sizes it allocates (and how many of each), and whether it
/// triggers any free (realloc counts as one).
struct InteractionSummary {
  std::vector<std::pair<uint64_t, uint64_t>> alloc_sizes;  // (size, count), ascending
  bool frees_triggered = false;
  uint64_t primary_size = 0;  // size of the first allocation, 0 when none

  uint64_t count_for(uint64_t size) const;
  uint64_t total_allocs() const;
  // Allocations besides the ones of `size`; the selection bias prefers
  // fragments where this is small.
  uint64_t noise_for(uint64_t size) const { return total_allocs() - count_for(size); }
};

/// Tallies the summary and verifies the fragment replays cleanly on a fresh
/// arena of the given allocator.
Result<InteractionSummary> summarize_fragment(const DriverProgram& fragment,
                                              const AllocatorConfig& cfg);

struct Fragment {
  std::string name;  // file stem inside the database directory
  DriverProgram directives;
  InteractionSummary summary;
};

/// Directory of marker-free, self-contained interaction fragments
/// (every free targets an id the fragment itself allocated). Summaries are
/// cached in an index.json sidecar keyed by content hash.
class FragmentDb {
 public:
  static Result<FragmentDb> open(const std::string& dir, const AllocatorConfig& cfg);

  const std::vector<Fragment>& fragments() const { return fragments_; }

  /// Weighted pick: allocating picks want fragments that free nothing,
  /// freeing picks want ones that do. Weights scale with 1/(1+noise), where
  /// noise counts allocations outside the wanted size. A non-empty size list
  /// restricts allocating picks to fragments touching one of those sizes;
  /// freeing picks ignore it. Returns an index into fragments().
  std::optional<size_t> pick(SplitMix64& rng, bool want_free,
                             const std::vector<uint64_t>& sizes) const;

 private:
  std::vector<Fragment> fragments_;
};

struct TemplateInstance {
  DriverProgram program;
  uint32_t fragments_inserted = 0;
};

/// Fills every HEAP-MANIP point with 1..max_len fragments, allocating ones
/// with probability alloc_ratio%, renaming fragment ids so insertions never
/// collide, then re-validates the assembled program.
Result<TemplateInstance> instantiate(const Template& tmpl, const FragmentDb& db,
                                     const SearchParams& params, SplitMix64& rng);

struct TemplateSearchOutcome {
  bool solved = false;
  uint64_t solving_index = 0;
  TemplateInstance solution;
  uint64_t tried = 0;
  uint64_t failures = 0;
  double seconds = 0.0;
};

/// Random search over instantiations until one passes all its
/// REQUIRE-DISTANCE checks. Deterministic per seed for any worker count.
TemplateSearchOutcome template_search(const Template& tmpl, const FragmentDb& db,
                                      const AllocatorConfig& cfg,
                                      const SearchParams& params);

}  // namespace heapsieve
