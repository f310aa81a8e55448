#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "heapsieve/alloc_model.hpp"
#include "heapsieve/search.hpp"
#include "heapsieve/states.hpp"

namespace heapsieve {

/// Request size that reproduces the slot the allocator hands out for `size`,
/// used for noise allocations shadowing a given request.
uint64_t rounded_request(const AllocatorConfig& cfg, uint64_t size);

/// Wanted addr_fst - addr_snd for two adjacent buffers: negative when the
/// first-placed buffer must sit directly below the other, positive when it
/// must sit directly above, in both cases offset by the lower buffer's
/// footprint (header included).
int64_t target_distance(const AllocatorConfig& cfg, uint64_t src_size,
                        uint64_t dst_size, Direction dir, AllocOrder order);

struct ExperimentSpec {
  std::string profile;
  std::string state;
  uint64_t src_size = 0;
  uint64_t dst_size = 0;
  Direction direction = Direction::Overflow;
  AllocOrder order = AllocOrder::SrcFirst;
  uint64_t noise = 0;

  Relationship relationship() const { return classify_relationship(order, direction); }
  std::string key() const;
};

/// Full corpus for one run: per (profile, state, noise) every ordered pair
/// of distinct sizes gets an overflow and an underflow experiment, and every
/// size is additionally paired with itself in both directions. The source is
/// always allocated first, so overflow experiments are exactly the natural
/// ones.
std::vector<ExperimentSpec> generate_grid(const std::vector<std::string>& profiles,
                                          const std::vector<std::string>& states,
                                          const std::vector<uint64_t>& sizes,
                                          const std::vector<uint64_t>& noises);

/// Experiments per (profile, state, noise) cell for a given size list.
uint64_t grid_cell_size(size_t size_count);

struct BenchParams {
  uint64_t budget = 50000;
  uint32_t max_len = 1000;
  uint32_t alloc_ratio = 98;
};

struct ExperimentResult {
  ExperimentSpec spec;
  uint64_t seed = 0;
  int64_t target = 0;
  std::optional<int64_t> initial_distance;  // fst+snd with no manipulation
  bool solved = false;
  uint64_t solving_index = 0;
  uint64_t candidates_tried = 0;
  std::optional<int64_t> best_distance;
  uint64_t best_metric = UINT64_MAX;
  uint64_t failures = 0;
  double seconds = 0.0;
  std::string solution_text;  // canonical replayable trace when solved
  std::string error;          // non-empty when the experiment could not run
};

/// Builds the sequence pool for one experiment and runs the serial search.
Result<ExperimentResult> run_experiment(const ExperimentSpec& spec,
                                        const AllocatorConfig& cfg,
                                        const StartingState& state,
                                        const BenchParams& params, uint64_t seed);

/// One summary row per (profile, state, noise), percentages rounded to
/// integers. pct_natural / pct_reversed are solve rates within those
/// relationship classes. A row with fewer experiments than expected is
/// flagged partial.
struct AggregateRow {
  std::string profile;
  std::string state;  // "averaged" for the cross-state rows
  uint64_t noise = 0;
  int pct_solved = 0;
  int pct_natural = 0;
  int pct_reversed = 0;
  uint64_t experiments = 0;
  bool partial = false;
};

std::vector<AggregateRow> aggregate(const std::vector<ExperimentResult>& results,
                                    uint64_t expected_per_group);

/// CSV with a fixed header; the byte-for-byte shape the determinism checks
/// compare across worker counts.
std::string aggregate_csv(const std::vector<AggregateRow>& rows);

}  // namespace heapsieve
