#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "heapsieve/alloc_model.hpp"
#include "heapsieve/driver.hpp"
#include "heapsieve/rng.hpp"

namespace heapsieve {

enum class Direction : uint8_t { Overflow, Underflow };
enum class AllocOrder : uint8_t { SrcFirst, DstFirst };
enum class Relationship : uint8_t { Natural, Reversed };

/// Natural when the corruption source goes down before its destination for
/// an overflow, or the destination goes down first for an underflow.
inline Relationship classify_relationship(AllocOrder order, Direction dir) {
  bool natural = (order == AllocOrder::SrcFirst && dir == Direction::Overflow) ||
                 (order == AllocOrder::DstFirst && dir == Direction::Underflow);
  return natural ? Relationship::Natural : Relationship::Reversed;
}

/// One menu entry the candidate builder can append: allocate one buffer of
/// primary_size (possibly wrapped in noise allocations), or free a prior
/// primary_size allocation made by the same candidate.
struct InteractionSequence {
  enum class Kind : uint8_t { Alloc, Free };
  Kind kind = Kind::Alloc;
  uint64_t primary_size = 0;
  uint32_t noise_prefix = 0;
  uint32_t noise_suffix = 0;
  uint64_t noise_size = 0;
};

/// A noise level counts the extra allocations wrapped around one marker,
/// split between leading and trailing; a lone noise allocation trails, where
/// it sits between the marker and whatever follows.
inline uint32_t noise_lead(uint64_t level) {
  return static_cast<uint32_t>(level / 2);
}
inline uint32_t noise_trail(uint64_t level) {
  return static_cast<uint32_t>(level - level / 2);
}

/// Everything a candidate is built from: the starting-state prefix replayed
/// before every candidate, the churn menu, and the two target sequences.
struct SequencePool {
  DriverProgram prefix;  // marker-free starting state
  std::vector<InteractionSequence> sequences;
  InteractionSequence fst_seq;
  InteractionSequence snd_seq;
  // Id prefix for candidate-made allocations; chosen to avoid colliding with
  // ids that stay live at the end of the prefix.
  std::string id_prefix = "c";

  void pick_id_prefix();
};

struct SearchParams {
  uint64_t budget = 50000;    // candidates to try (g)
  int64_t target = 0;         // wanted addr_fst - addr_snd (d)
  uint32_t max_len = 1000;    // sequences per candidate excluding snd (m)
  uint32_t alloc_ratio = 98;  // percent of slots that allocate (r)
  uint64_t seed = 0;          // master seed
  int workers = 1;
};

struct Candidate {
  DriverProgram program;
  size_t prefix_len = 0;  // directives belonging to the starting state
  uint32_t length = 0;    // sequence slots including fst, excluding snd
  uint32_t fst_index = 0;
  uint64_t index = 0;  // candidate index within the run
};

/// Algorithm: draw a length in [1, max_len], place fst uniformly, fill the
/// other slots with alloc sequences with probability alloc_ratio% (free
/// otherwise, falling back to alloc when nothing of that size is live), then
/// append snd. Free slots target the most recent live candidate-made
/// allocation of the drawn size and never the fst buffer.
Candidate construct_candidate(const SequencePool& pool, const SearchParams& params,
                              SplitMix64& rng);

/// Distance produced by a candidate, or nullopt when execution failed.
using CandidateExecutor = std::function<std::optional<int64_t>(const Candidate&)>;

struct SearchOutcome {
  bool solved = false;
  uint64_t solving_index = 0;
  Candidate solution;
  uint64_t candidates_tried = 0;
  std::optional<int64_t> best_distance;
  uint64_t best_index = 0;
  uint64_t best_metric = UINT64_MAX;  // |distance - target|, earlier wins ties
  uint64_t failures = 0;
  double seconds = 0.0;
};

/// Serial reference search. Candidates are seeded per index, tried in order,
/// and the first exact hit wins.
SearchOutcome search_serial(const SequencePool& pool, const SearchParams& params,
                            const CandidateExecutor& executor);

/// OpenMP search: evaluates fixed-size chunks in parallel, then folds each
/// chunk in index order, so the outcome is identical to search_serial for
/// any worker count. The executor must be safe to call concurrently.
SearchOutcome search_parallel(const SequencePool& pool, const SearchParams& params,
                              const CandidateExecutor& executor, int workers);

/// Dispatches on params.workers.
SearchOutcome search(const SequencePool& pool, const SearchParams& params,
                     const CandidateExecutor& executor);

/// Executes candidates in-process on top of a pre-executed prefix state.
/// Copy-cheap and const-callable from many threads at once.
class InProcessExecutor {
 public:
  static Result<InProcessExecutor> make(const SequencePool& pool,
                                        const AllocatorConfig& cfg);
  std::optional<int64_t> operator()(const Candidate& c) const;
  const ArenaState& base_state() const { return base_; }

 private:
  InProcessExecutor(ArenaState base) : base_(std::move(base)) {}
  ArenaState base_;
};

}  // namespace heapsieve
