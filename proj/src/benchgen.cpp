#include "heapsieve/benchgen.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

namespace heapsieve {

uint64_t rounded_request(const AllocatorConfig& cfg, uint64_t size) {
  SizeClassInfo info = size_class_of(cfg, size);
  if (info.route == Route::SmallRun) return info.footprint;
  return info.footprint - cfg.header_bytes;
}

int64_t target_distance(const AllocatorConfig& cfg, uint64_t src_size,
                        uint64_t dst_size, Direction dir, AllocOrder order) {
  uint64_t first = order == AllocOrder::SrcFirst ? src_size : dst_size;
  uint64_t second = order == AllocOrder::SrcFirst ? dst_size : src_size;
  bool first_below = (order == AllocOrder::SrcFirst && dir == Direction::Overflow) ||
                     (order == AllocOrder::DstFirst && dir == Direction::Underflow);
  if (first_below) return -static_cast<int64_t>(size_class_of(cfg, first).footprint);
  return static_cast<int64_t>(size_class_of(cfg, second).footprint);
}

std::string ExperimentSpec::key() const {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "|s%llu|d%llu|%s|%s|n%llu",
                static_cast<unsigned long long>(src_size),
                static_cast<unsigned long long>(dst_size),
                direction == Direction::Overflow ? "over" : "under",
                order == AllocOrder::SrcFirst ? "srcfirst" : "dstfirst",
                static_cast<unsigned long long>(noise));
  return profile + "|" + state + buf;
}

uint64_t grid_cell_size(size_t size_count) {
  uint64_t n = size_count;
  return n * (n - 1) * 2 + n * 2;
}

std::vector<ExperimentSpec> generate_grid(const std::vector<std::string>& profiles,
                                          const std::vector<std::string>& states,
                                          const std::vector<uint64_t>& sizes,
                                          const std::vector<uint64_t>& noises) {
  std::vector<ExperimentSpec> grid;
  for (const auto& profile : profiles) {
    for (const auto& state : states) {
      for (uint64_t noise : noises) {
        auto push = [&](uint64_t src, uint64_t dst, Direction dir) {
          ExperimentSpec s;
          s.profile = profile;
          s.state = state;
          s.src_size = src;
          s.dst_size = dst;
          s.direction = dir;
          s.order = AllocOrder::SrcFirst;
          s.noise = noise;
          grid.push_back(std::move(s));
        };
        for (uint64_t x : sizes)
          for (uint64_t y : sizes) {
            if (x == y) continue;
            push(x, y, Direction::Overflow);
            push(x, y, Direction::Underflow);
          }
        for (uint64_t s : sizes) {
          push(s, s, Direction::Overflow);
          push(s, s, Direction::Underflow);
        }
      }
    }
  }
  return grid;
}

Result<ExperimentResult> run_experiment(const ExperimentSpec& spec,
                                        const AllocatorConfig& cfg,
                                        const StartingState& state,
                                        const BenchParams& params, uint64_t seed) {
  ExperimentResult out;
  out.spec = spec;
  out.seed = seed;
  out.target =
      target_distance(cfg, spec.src_size, spec.dst_size, spec.direction, spec.order);

  SequencePool pool;
  pool.prefix = state.prefix;
  pool.pick_id_prefix();
  std::vector<uint64_t> sizes{spec.src_size};
  if (spec.dst_size != spec.src_size) sizes.push_back(spec.dst_size);
  for (uint64_t sz : sizes) {
    pool.sequences.push_back({InteractionSequence::Kind::Alloc, sz, 0, 0, 0});
    pool.sequences.push_back({InteractionSequence::Kind::Free, sz, 0, 0, 0});
  }
  uint64_t noise_size = rounded_request(cfg, spec.src_size);
  uint32_t lead = noise_lead(spec.noise);
  uint32_t trail = noise_trail(spec.noise);
  uint64_t fst_size = spec.order == AllocOrder::SrcFirst ? spec.src_size : spec.dst_size;
  uint64_t snd_size = spec.order == AllocOrder::SrcFirst ? spec.dst_size : spec.src_size;
  pool.fst_seq = {InteractionSequence::Kind::Alloc, fst_size, lead, trail, noise_size};
  pool.snd_seq = {InteractionSequence::Kind::Alloc, snd_size, lead, trail, noise_size};

  auto exec = InProcessExecutor::make(pool, cfg);
  if (!exec.ok()) return Error{spec.key() + ": " + exec.error().message};
  const InProcessExecutor& executor = exec.value();

  SearchParams sp;
  sp.budget = params.budget;
  sp.target = out.target;
  sp.max_len = params.max_len;
  sp.alloc_ratio = params.alloc_ratio;
  sp.seed = seed;
  sp.workers = 1;

  // Baseline: markers back to back with nothing in between. A candidate of
  // length one is exactly that program.
  SearchParams bp = sp;
  bp.max_len = 1;
  SplitMix64 brng(0);
  Candidate baseline = construct_candidate(pool, bp, brng);
  out.initial_distance = executor(baseline);

  SearchOutcome so = search_serial(pool, sp, executor);
  out.solved = so.solved;
  out.solving_index = so.solving_index;
  out.candidates_tried = so.candidates_tried;
  out.best_distance = so.best_distance;
  out.best_metric = so.best_metric;
  out.failures = so.failures;
  out.seconds = so.seconds;
  if (so.solved) out.solution_text = serialize(so.solution.program);
  return out;
}

namespace {

int pct(uint64_t part, uint64_t whole) {
  if (whole == 0) return 0;
  return static_cast<int>((200 * part + whole) / (2 * whole));
}

struct Tally {
  uint64_t total = 0, solved = 0;
  uint64_t natural = 0, natural_solved = 0;
  uint64_t reversed = 0, reversed_solved = 0;

  void add(const ExperimentResult& r) {
    ++total;
    solved += r.solved;
    if (r.spec.relationship() == Relationship::Natural) {
      ++natural;
      natural_solved += r.solved;
    } else {
      ++reversed;
      reversed_solved += r.solved;
    }
  }
};

AggregateRow row_from(const std::string& profile, const std::string& state,
                      uint64_t noise, const Tally& t, uint64_t expected) {
  AggregateRow row;
  row.profile = profile;
  row.state = state;
  row.noise = noise;
  row.pct_solved = pct(t.solved, t.total);
  row.pct_natural = pct(t.natural_solved, t.natural);
  row.pct_reversed = pct(t.reversed_solved, t.reversed);
  row.experiments = t.total;
  row.partial = expected != 0 && t.total != expected;
  return row;
}

}  // namespace

std::vector<AggregateRow> aggregate(const std::vector<ExperimentResult>& results,
                                    uint64_t expected_per_group) {
  std::map<std::tuple<std::string, std::string, uint64_t>, Tally> groups;
  std::map<std::tuple<std::string, uint64_t>, Tally> pooled;
  std::map<std::string, std::vector<std::string>> states_seen;
  for (const auto& r : results) {
    groups[{r.spec.profile, r.spec.state, r.spec.noise}].add(r);
    pooled[{r.spec.profile, r.spec.noise}].add(r);
    auto& seen = states_seen[r.spec.profile];
    if (std::find(seen.begin(), seen.end(), r.spec.state) == seen.end())
      seen.push_back(r.spec.state);
  }

  std::vector<AggregateRow> rows;
  for (const auto& [key, tally] : groups)
    rows.push_back(row_from(std::get<0>(key), std::get<1>(key), std::get<2>(key),
                            tally, expected_per_group));
  for (const auto& [key, tally] : pooled) {
    const auto& profile = std::get<0>(key);
    if (states_seen[profile].size() < 2) continue;
    rows.push_back(row_from(profile, "averaged", std::get<1>(key), tally,
                            expected_per_group * states_seen[profile].size()));
  }
  return rows;
}

std::string aggregate_csv(const std::vector<AggregateRow>& rows) {
  std::string csv = "allocator,start_state,noise,pct_solved,pct_natural,pct_reversed,partial\n";
  for (const auto& r : rows) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), ",%llu,%d,%d,%d,%d\n",
                  static_cast<unsigned long long>(r.noise), r.pct_solved,
                  r.pct_natural, r.pct_reversed, r.partial ? 1 : 0);
    csv += r.profile;
    csv += ',';
    csv += r.state;
    csv += buf;
  }
  return csv;
}

}  // namespace heapsieve
