#include "heapsieve/search.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <string>

namespace heapsieve {
namespace {

// Absolute difference of two signed values, exact for the full int64 range.
uint64_t abs_diff(int64_t a, int64_t b) {
  return a >= b ? static_cast<uint64_t>(a) - static_cast<uint64_t>(b)
                : static_cast<uint64_t>(b) - static_cast<uint64_t>(a);
}

struct LiveBucket {
  uint64_t size = 0;
  std::vector<uint32_t> slots;
  std::vector<std::string> ids;
};

void append_alloc(Candidate& cand, const SequencePool& pool, uint64_t size,
                  uint32_t& next_slot, std::vector<LiveBucket>* buckets) {
  Directive d;
  d.kind = DirectiveKind::Malloc;
  d.size = size;
  d.slot = static_cast<int32_t>(next_slot);
  d.id = pool.id_prefix + std::to_string(next_slot);
  if (buckets) {
    for (auto& b : *buckets) {
      if (b.size == size) {
        b.slots.push_back(next_slot);
        b.ids.push_back(d.id);
        break;
      }
    }
  }
  ++next_slot;
  cand.program.directives.push_back(std::move(d));
}

void append_marker(Candidate& cand, DirectiveKind kind, uint64_t size) {
  Directive d;
  d.kind = kind;
  d.size = size;
  cand.program.directives.push_back(std::move(d));
}

// Emits one pool sequence. Markers carry no id; everything else is a malloc
// tracked in the liveness buckets so later frees can target it.
void append_sequence(Candidate& cand, const SequencePool& pool,
                     const InteractionSequence& seq, DirectiveKind marker,
                     uint32_t& next_slot, std::vector<LiveBucket>& buckets) {
  for (uint32_t i = 0; i < seq.noise_prefix; ++i)
    append_alloc(cand, pool, seq.noise_size, next_slot, &buckets);
  if (marker == DirectiveKind::Malloc)
    append_alloc(cand, pool, seq.primary_size, next_slot, &buckets);
  else
    append_marker(cand, marker, seq.primary_size);
  for (uint32_t i = 0; i < seq.noise_suffix; ++i)
    append_alloc(cand, pool, seq.noise_size, next_slot, &buckets);
}

// Shared fold step for the serial and parallel searches. Returns true when
// the candidate at `index` solves the problem exactly.
bool fold_result(SearchOutcome& out, uint64_t index, const std::optional<int64_t>& dist,
                 int64_t target) {
  if (!dist) {
    ++out.failures;
    return false;
  }
  uint64_t metric = abs_diff(*dist, target);
  if (metric < out.best_metric) {
    out.best_metric = metric;
    out.best_distance = *dist;
    out.best_index = index;
  }
  return metric == 0;
}

}  // namespace

void SequencePool::pick_id_prefix() {
  // Ids that are still live once the prefix has run; a candidate id that
  // shadows one of them would make the serialized program unparsable.
  std::vector<std::string> live;
  for (const auto& d : prefix.directives) {
    switch (d.kind) {
      case DirectiveKind::Malloc:
      case DirectiveKind::Calloc:
        live.push_back(d.id);
        break;
      case DirectiveKind::Realloc:
        live.erase(std::remove(live.begin(), live.end(), d.old_id), live.end());
        live.push_back(d.id);
        break;
      case DirectiveKind::Free:
        live.erase(std::remove(live.begin(), live.end(), d.id), live.end());
        break;
      default:
        break;
    }
  }
  for (const char* p : {"c", "t", "q", "u", "w", "zz"}) {
    bool clash = false;
    for (const auto& id : live)
      if (id.rfind(p, 0) == 0) clash = true;
    if (!clash) {
      id_prefix = p;
      return;
    }
  }
  id_prefix = "hs_";
}

Candidate construct_candidate(const SequencePool& pool, const SearchParams& params,
                              SplitMix64& rng) {
  Candidate cand;
  cand.program.directives = pool.prefix.directives;
  cand.program.capture_slots = pool.prefix.capture_slots;
  cand.program.has_markers = true;
  cand.prefix_len = pool.prefix.directives.size();
  uint32_t next_slot = pool.prefix.address_slots;

  std::vector<uint32_t> alloc_menu;
  std::vector<uint32_t> free_menu;
  for (uint32_t i = 0; i < pool.sequences.size(); ++i) {
    if (pool.sequences[i].kind == InteractionSequence::Kind::Alloc)
      alloc_menu.push_back(i);
    else
      free_menu.push_back(i);
  }
  std::vector<LiveBucket> buckets;
  for (uint32_t f : free_menu) {
    uint64_t sz = pool.sequences[f].primary_size;
    bool seen = false;
    for (const auto& b : buckets) seen |= b.size == sz;
    if (!seen) buckets.push_back(LiveBucket{sz, {}, {}});
  }

  // Draw order is part of the product: length, fst position, then per slot a
  // type draw and a menu draw. Frees always target the most recent live
  // allocation of the drawn size, so they consume no extra draw.
  cand.length = 1 + static_cast<uint32_t>(rng.below(params.max_len));
  cand.fst_index = static_cast<uint32_t>(rng.below(cand.length));

  for (uint32_t slot = 0; slot < cand.length; ++slot) {
    if (slot == cand.fst_index) {
      append_sequence(cand, pool, pool.fst_seq, DirectiveKind::Fst, next_slot, buckets);
      continue;
    }
    bool want_alloc = rng.below(100) < params.alloc_ratio;
    if (!want_alloc && free_menu.empty()) want_alloc = true;
    if (want_alloc) {
      if (alloc_menu.empty()) continue;
      const auto& seq = pool.sequences[alloc_menu[rng.below(alloc_menu.size())]];
      append_sequence(cand, pool, seq, DirectiveKind::Malloc, next_slot, buckets);
      continue;
    }
    const auto& seq = pool.sequences[free_menu[rng.below(free_menu.size())]];
    LiveBucket* bucket = nullptr;
    for (auto& b : buckets)
      if (b.size == seq.primary_size) bucket = &b;
    if (!bucket || bucket->slots.empty()) {
      // Nothing of this size to free yet: the slot allocates it instead.
      const InteractionSequence* alloc_seq = nullptr;
      for (uint32_t a : alloc_menu)
        if (pool.sequences[a].primary_size == seq.primary_size)
          alloc_seq = &pool.sequences[a];
      if (alloc_seq)
        append_sequence(cand, pool, *alloc_seq, DirectiveKind::Malloc, next_slot,
                        buckets);
      else
        append_alloc(cand, pool, seq.primary_size, next_slot, &buckets);
      continue;
    }
    Directive d;
    d.kind = DirectiveKind::Free;
    d.id = std::move(bucket->ids.back());
    d.slot = static_cast<int32_t>(bucket->slots.back());
    bucket->ids.pop_back();
    bucket->slots.pop_back();
    cand.program.directives.push_back(std::move(d));
  }

  append_sequence(cand, pool, pool.snd_seq, DirectiveKind::Snd, next_slot, buckets);
  cand.program.address_slots = next_slot;
  return cand;
}

SearchOutcome search_serial(const SequencePool& pool, const SearchParams& params,
                            const CandidateExecutor& executor) {
  auto t0 = std::chrono::steady_clock::now();
  SearchOutcome out;
  for (uint64_t i = 0; i < params.budget; ++i) {
    SplitMix64 rng(substream_seed(params.seed, i));
    Candidate cand = construct_candidate(pool, params, rng);
    cand.index = i;
    auto dist = executor(cand);
    if (fold_result(out, i, dist, params.target)) {
      out.solved = true;
      out.solving_index = i;
      out.solution = std::move(cand);
      break;
    }
  }
  out.candidates_tried = out.solved ? out.solving_index + 1 : params.budget;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

SearchOutcome search_parallel(const SequencePool& pool, const SearchParams& params,
                              const CandidateExecutor& executor, int workers) {
  auto t0 = std::chrono::steady_clock::now();
  if (workers < 1) workers = 1;
  SearchOutcome out;
  constexpr uint64_t kChunk = 1024;
  std::vector<std::optional<int64_t>> dists(kChunk);

  for (uint64_t base = 0; base < params.budget && !out.solved; base += kChunk) {
    uint64_t n = std::min(kChunk, params.budget - base);
#pragma omp parallel for num_threads(workers) schedule(dynamic, 8)
    for (int64_t k = 0; k < static_cast<int64_t>(n); ++k) {
      uint64_t i = base + static_cast<uint64_t>(k);
      SplitMix64 rng(substream_seed(params.seed, i));
      Candidate cand = construct_candidate(pool, params, rng);
      cand.index = i;
      dists[static_cast<size_t>(k)] = executor(cand);
    }
    // Fold strictly in index order so ties, failure counts, and the solving
    // index come out exactly as in the serial search.
    for (uint64_t k = 0; k < n; ++k) {
      uint64_t i = base + k;
      if (fold_result(out, i, dists[k], params.target)) {
        out.solved = true;
        out.solving_index = i;
        SplitMix64 rng(substream_seed(params.seed, i));
        out.solution = construct_candidate(pool, params, rng);
        out.solution.index = i;
        break;
      }
    }
  }
  out.candidates_tried = out.solved ? out.solving_index + 1 : params.budget;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

SearchOutcome search(const SequencePool& pool, const SearchParams& params,
                     const CandidateExecutor& executor) {
  if (params.workers > 1) return search_parallel(pool, params, executor, params.workers);
  return search_serial(pool, params, executor);
}

Result<InProcessExecutor> InProcessExecutor::make(const SequencePool& pool,
                                                  const AllocatorConfig& cfg) {
  auto base = apply_program(ArenaState(cfg), pool.prefix, 0, pool.prefix.directives.size());
  if (!base.ok()) return Error{"starting state failed: " + base.error().message};
  return InProcessExecutor(std::move(base.value()));
}

std::optional<int64_t> InProcessExecutor::operator()(const Candidate& c) const {
  ExecOptions opts;
  opts.want_snapshot = false;
  DriverResult res = execute_from(base_, c.program, c.prefix_len, opts);
  if (!res.ok()) return std::nullopt;
  return res.distance;
}

}  // namespace heapsieve
