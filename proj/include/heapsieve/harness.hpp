#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "heapsieve/benchgen.hpp"
#include "heapsieve/profiles.hpp"
#include "heapsieve/search.hpp"
#include "heapsieve/states.hpp"

namespace heapsieve {

/// A full benchmark sweep: every (profile, state, noise) cell of the
/// experiment grid, run with a shared candidate budget and seed.
struct GridConfig {
  std::vector<std::string> profiles{"ideal"};
  std::vector<std::string> states{"none"};
  std::vector<uint64_t> sizes{64, 96};
  std::vector<uint64_t> noises{0};
  uint64_t budget = 50000;
  uint32_t max_len = 1000;
  uint32_t alloc_ratio = 98;
  uint64_t seed = 1;
};

Result<GridConfig> grid_config_from_json(const std::string& text);
std::string grid_config_to_json(const GridConfig& cfg);
/// Hash of the canonical JSON form; checkpoints are only reused when the
/// stored hash matches.
uint64_t grid_config_hash(const GridConfig& cfg);

/// Per-experiment seed, independent of grid position so edits to the grid
/// never shift other cells' outcomes.
uint64_t experiment_seed(const GridConfig& cfg, const ExperimentSpec& spec);

struct BenchRun {
  std::vector<ExperimentResult> results;  // grid order
  std::vector<AggregateRow> rows;
  std::string csv;
  uint64_t reused = 0;  // experiments restored from checkpoints
};

/// Runs (or resumes) a sweep. Writes manifest.json up front, one checkpoint
/// JSON per experiment as it finishes, solution traces for solved cells, and
/// results.csv / results.json at the end. Experiments are independent, so
/// they fan out across workers while each inner search stays serial; the
/// outputs are identical for any worker count.
Result<BenchRun> run_bench(const GridConfig& cfg, const std::string& out_dir,
                           int workers);

/// One adjacency problem for the search subcommand.
struct SearchJob {
  std::string profile = "ideal";
  std::string state = "none";
  std::vector<uint64_t> sizes;  // churn menu; defaults to {fst, snd}
  uint64_t fst_size = 0;
  uint64_t snd_size = 0;
  uint64_t noise = 0;
  std::optional<uint64_t> noise_size;  // defaults to fst's rounded size
  int64_t target = 0;
  uint64_t budget = 50000;
  uint32_t max_len = 1000;
  uint32_t alloc_ratio = 98;
  uint64_t seed = 1;
};

Result<SearchJob> search_job_from_json(const std::string& text);
Result<SequencePool> build_pool(const SearchJob& job, const AllocatorConfig& cfg);

}  // namespace heapsieve
