#include "heapsieve/alloc_model.hpp"

#include <algorithm>

namespace heapsieve {

std::vector<std::string> AllocatorConfig::validate() const {
  std::vector<std::string> errs;
  if (alignment == 0) errs.push_back("alignment must be >= 1");
  if (alignment && header_bytes % alignment != 0)
    errs.push_back("header-bytes must be a multiple of alignment");
  if (page_size == 0 || (alignment && page_size % alignment != 0))
    errs.push_back("page-size must be a nonzero multiple of alignment");
  if (arena_capacity < page_size) errs.push_back("arena-capacity too small");
  if (coalescing == CoalescePolicy::Delayed && delayed_threshold == 0)
    errs.push_back("delayed coalescing threshold must be >= 1");
  if (fit_policy == FitPolicy::NextFit && free_list_org == FreeListOrg::Segregated)
    errs.push_back("next-fit requires a single free list");
  if (free_list_org == FreeListOrg::Segregated) {
    if (class_upper_bounds.empty())
      errs.push_back("segregated free lists need class-upper-bounds");
    if (!std::is_sorted(class_upper_bounds.begin(), class_upper_bounds.end()) ||
        std::adjacent_find(class_upper_bounds.begin(), class_upper_bounds.end()) !=
            class_upper_bounds.end())
      errs.push_back("class-upper-bounds must be strictly ascending");
  }
  if (kind == AllocatorKind::SegregatedStorage) {
    if (size_classes.empty()) {
      errs.push_back("segregated storage needs size-classes");
    } else {
      if (!std::is_sorted(size_classes.begin(), size_classes.end()) ||
          std::adjacent_find(size_classes.begin(), size_classes.end()) !=
              size_classes.end())
        errs.push_back("size-classes must be strictly ascending");
      if (size_classes.front() == 0) errs.push_back("size classes must be >= 1");
      for (uint64_t c : size_classes)
        if (alignment && c % alignment != 0) {
          errs.push_back("size classes must be multiples of alignment");
          break;
        }
      if (run_pages == 0) errs.push_back("run-pages must be >= 1");
      if (run_pages * page_size < size_classes.back())
        errs.push_back("run-pages * page-size must cover the largest size class");
      if (large_threshold != kNoLargeThreshold &&
          size_classes.back() >= large_threshold)
        errs.push_back("largest size class must be below large-threshold");
    }
  }
  return errs;
}

SizeClassInfo size_class_of(const AllocatorConfig& cfg, uint64_t size) {
  SizeClassInfo info;
  if (cfg.kind == AllocatorKind::SegregatedStorage && !cfg.size_classes.empty() &&
      size <= cfg.size_classes.back()) {
    auto it = std::lower_bound(cfg.size_classes.begin(), cfg.size_classes.end(),
                               std::max<uint64_t>(size, 1));
    info.route = Route::SmallRun;
    info.footprint = *it;
    return info;
  }
  bool large = cfg.large_threshold != kNoLargeThreshold && size >= cfg.large_threshold;
  if (large && cfg.large_strategy == LargeStrategy::MappedRegion) {
    info.route = Route::Mapped;
    info.footprint = cfg.page_up(cfg.header_bytes + cfg.align_up(size));
    return info;
  }
  if (large || cfg.kind == AllocatorKind::SegregatedStorage) {
    // Segregated storage services everything between its largest class and
    // the large threshold from page-granular spans; an explicit PageBestFit
    // large strategy lands in the same tier.
    info.route = Route::PageSpan;
    info.footprint = cfg.page_up(cfg.header_bytes + cfg.align_up(size));
    return info;
  }
  info.route = Route::FreeListBlock;
  info.footprint = cfg.header_bytes + cfg.align_up(size);
  return info;
}

ArenaState::ArenaState(std::shared_ptr<const AllocatorConfig> cfg)
    : cfg_(std::move(cfg)) {
  size_t bins = 1;
  if (cfg_->kind == AllocatorKind::FreeList &&
      cfg_->free_list_org == FreeListOrg::Segregated)
    bins = cfg_->class_upper_bounds.size() + 1;
  free_heads_.assign(bins, kNil);
  class_free_slots_.resize(cfg_->size_classes.size());
}

ArenaState::ArenaState(const AllocatorConfig& cfg)
    : ArenaState(std::make_shared<const AllocatorConfig>(cfg)) {}

uint32_t ArenaState::new_node() {
  if (!dead_nodes_.empty()) {
    uint32_t n = dead_nodes_.back();
    dead_nodes_.pop_back();
    nodes_[n] = Node{};
    return n;
  }
  nodes_.push_back(Node{});
  return static_cast<uint32_t>(nodes_.size() - 1);
}

void ArenaState::kill_node(uint32_t n) {
  nodes_[n].use = NodeUse::Dead;
  dead_nodes_.push_back(n);
}

uint16_t ArenaState::bin_of(uint64_t footprint) const {
  if (free_heads_.size() == 1) return 0;
  auto& b = cfg_->class_upper_bounds;
  auto it = std::lower_bound(b.begin(), b.end(), footprint);
  return static_cast<uint16_t>(it - b.begin());
}

void ArenaState::free_insert(uint32_t n) {
  Node& node = nodes_[n];
  node.use = NodeUse::Free;
  node.stamp = ++stamp_counter_;
  node.bin = bin_of(node.footprint);
  node.fprev = kNil;
  node.fnext = free_heads_[node.bin];
  if (node.fnext != kNil) nodes_[node.fnext].fprev = n;
  free_heads_[node.bin] = n;
}

void ArenaState::free_remove(uint32_t n) {
  Node& node = nodes_[n];
  if (next_fit_cursor_ == n) next_fit_cursor_ = node.fnext;
  if (node.fprev != kNil)
    nodes_[node.fprev].fnext = node.fnext;
  else
    free_heads_[node.bin] = node.fnext;
  if (node.fnext != kNil) nodes_[node.fnext].fprev = node.fprev;
  node.fprev = node.fnext = kNil;
}

uint32_t ArenaState::best_fit_in_bin(uint16_t bin, uint64_t footprint) const {
  uint32_t best = kNil;
  for (uint32_t i = free_heads_[bin]; i != kNil; i = nodes_[i].fnext) {
    const Node& nd = nodes_[i];
    if (nd.footprint < footprint) continue;
    // Head-first walk visits most recent stamps first, so a strict < keeps
    // the most recently freed block among equals.
    if (best == kNil || nd.footprint < nodes_[best].footprint) best = i;
  }
  return best;
}

uint32_t ArenaState::select_fit(uint64_t footprint) {
  switch (cfg_->fit_policy) {
    case FitPolicy::BestFit: {
      for (uint16_t bin = bin_of(footprint); bin < free_heads_.size(); ++bin) {
        uint32_t best = best_fit_in_bin(bin, footprint);
        if (best != kNil) return best;
      }
      return kNil;
    }
    case FitPolicy::FirstFit: {
      for (uint16_t bin = bin_of(footprint); bin < free_heads_.size(); ++bin)
        for (uint32_t i = free_heads_[bin]; i != kNil; i = nodes_[i].fnext)
          if (nodes_[i].footprint >= footprint) return i;
      return kNil;
    }
    case FitPolicy::NextFit: {
      uint32_t start = next_fit_cursor_ != kNil ? next_fit_cursor_ : free_heads_[0];
      for (uint32_t i = start; i != kNil; i = nodes_[i].fnext)
        if (nodes_[i].footprint >= footprint) {
          next_fit_cursor_ = nodes_[i].fnext;
          return i;
        }
      for (uint32_t i = free_heads_[0]; i != kNil && i != start; i = nodes_[i].fnext)
        if (nodes_[i].footprint >= footprint) {
          next_fit_cursor_ = nodes_[i].fnext;
          return i;
        }
      return kNil;
    }
  }
  return kNil;
}

uint32_t ArenaState::place_in_block(uint32_t n, uint64_t footprint) {
  free_remove(n);
  Node& node = nodes_[n];
  uint64_t rest = node.footprint - footprint;
  if (rest < cfg_->effective_min_split()) {
    node.use = NodeUse::Allocated;
    return n;
  }
  if (cfg_->split_from == SplitFrom::Front) {
    uint32_t rem = new_node();
    Node& r = nodes_[rem];
    Node& a = nodes_[n];
    r.offset = a.offset + footprint;
    r.footprint = rest;
    r.prev = n;
    r.next = a.next;
    if (a.next != kNil) nodes_[a.next].prev = rem;
    if (chain_tail_ == n) chain_tail_ = rem;
    a.next = rem;
    a.footprint = footprint;
    a.use = NodeUse::Allocated;
    free_insert(rem);
    return n;
  }
  // End split: the taken block sits at the back, the front stays free and
  // re-enters the free structure as a fresh insertion.
  uint32_t taken = new_node();
  Node& t = nodes_[taken];
  Node& f = nodes_[n];
  t.offset = f.offset + rest;
  t.footprint = footprint;
  t.use = NodeUse::Allocated;
  t.prev = n;
  t.next = f.next;
  if (f.next != kNil) nodes_[f.next].prev = taken;
  if (chain_tail_ == n) chain_tail_ = taken;
  f.next = taken;
  f.footprint = rest;
  free_insert(n);
  return taken;
}

Result<uint64_t> ArenaState::carve_wilderness(uint64_t footprint) {
  if (footprint > cfg_->arena_capacity ||
      wilderness_ > cfg_->arena_capacity - footprint)
    return Result<uint64_t>::failure("arena exhausted");
  uint32_t n = new_node();
  Node& node = nodes_[n];
  node.offset = wilderness_;
  node.footprint = footprint;
  node.use = NodeUse::Allocated;
  node.prev = chain_tail_;
  node.next = kNil;
  if (chain_tail_ != kNil) nodes_[chain_tail_].next = n;
  chain_tail_ = n;
  if (chain_head_ == kNil) chain_head_ = n;
  wilderness_ += footprint;
  return static_cast<uint64_t>(n);
}

Result<uint64_t> ArenaState::alloc_arena_block(uint64_t footprint, uint64_t request) {
  uint32_t n = select_fit(footprint);
  if (n != kNil) {
    n = place_in_block(n, footprint);
  } else {
    auto carved = carve_wilderness(footprint);
    if (!carved) return carved;
    n = static_cast<uint32_t>(carved.value());
  }
  nodes_[n].request = request;
  uint64_t addr = user_addr(nodes_[n]);
  addr_map_.emplace(addr, AllocRef{AllocRef::Kind::Block, n, 0});
  return addr;
}

Result<uint64_t> ArenaState::alloc_small(uint64_t size, uint64_t class_size) {
  auto it = std::lower_bound(cfg_->size_classes.begin(), cfg_->size_classes.end(),
                             class_size);
  uint32_t ci = static_cast<uint32_t>(it - cfg_->size_classes.begin());
  if (class_free_slots_[ci].empty()) {
    uint64_t run_bytes = cfg_->run_pages * cfg_->page_size;
    uint32_t n = select_fit(run_bytes);
    if (n != kNil) {
      n = place_in_block(n, run_bytes);
    } else {
      auto carved = carve_wilderness(run_bytes);
      if (!carved) return Result<uint64_t>(carved.error());
      n = static_cast<uint32_t>(carved.value());
    }
    Node& node = nodes_[n];
    node.use = NodeUse::Run;
    uint32_t run_index = static_cast<uint32_t>(runs_.size());
    uint64_t slot_count = run_bytes / class_size;
    node.run_index = run_index;
    Run run;
    run.base = node.offset;
    run.class_size = class_size;
    run.page_count = cfg_->run_pages;
    run.slot_count = slot_count;
    run.node = n;
    run.occupied.assign(slot_count, 0);
    runs_.push_back(std::move(run));
    auto& stack = class_free_slots_[ci];
    // Pushed in descending order so slots pop lowest-address first.
    for (uint64_t s = slot_count; s-- > 0;)
      stack.push_back(SlotRef{run_index, static_cast<uint32_t>(s)});
  }
  SlotRef ref = class_free_slots_[ci].back();
  class_free_slots_[ci].pop_back();
  Run& run = runs_[ref.run];
  run.occupied[ref.slot] = 1;
  (void)size;
  uint64_t addr = run.base + ref.slot * run.class_size;
  addr_map_.emplace(addr, AllocRef{AllocRef::Kind::Slot, ref.run, ref.slot});
  return addr;
}

Result<uint64_t> ArenaState::alloc_mapped(uint64_t size) {
  uint64_t fp = cfg_->page_up(cfg_->header_bytes + cfg_->align_up(size));
  MappedBlock mb{mapped_cursor_, fp, size};
  mapped_cursor_ += fp;
  mapped_.push_back(mb);
  uint64_t addr = mb.offset + cfg_->header_bytes;
  addr_map_.emplace(addr, AllocRef{AllocRef::Kind::Mapped,
                                   static_cast<uint32_t>(mb.offset >> 32),
                                   static_cast<uint32_t>(mb.offset)});
  return addr;
}

Result<uint64_t> ArenaState::alloc(uint64_t size) {
  SizeClassInfo info = size_class_of(*cfg_, size);
  switch (info.route) {
    case Route::SmallRun:
      return alloc_small(size, info.footprint);
    case Route::Mapped:
      return alloc_mapped(size);
    case Route::PageSpan:
    case Route::FreeListBlock:
      return alloc_arena_block(info.footprint, size);
  }
  return Result<uint64_t>::failure("unroutable size");
}

void ArenaState::merge_into(uint32_t dst, uint32_t src) {
  Node& d = nodes_[dst];
  Node& s = nodes_[src];
  d.footprint += s.footprint;
  d.next = s.next;
  if (s.next != kNil) nodes_[s.next].prev = dst;
  if (chain_tail_ == src) chain_tail_ = dst;
  kill_node(src);
}

uint64_t ArenaState::adjacent_free_pairs() const {
  uint64_t pairs = 0;
  for (uint32_t i = chain_head_; i != kNil; i = nodes_[i].next) {
    uint32_t nx = nodes_[i].next;
    if (nx != kNil && nodes_[i].use == NodeUse::Free && nodes_[nx].use == NodeUse::Free)
      ++pairs;
  }
  return pairs;
}

void ArenaState::full_coalesce() {
  uint32_t i = chain_head_;
  while (i != kNil) {
    if (nodes_[i].use != NodeUse::Free) {
      i = nodes_[i].next;
      continue;
    }
    uint32_t nx = nodes_[i].next;
    bool merged = false;
    while (nx != kNil && nodes_[nx].use == NodeUse::Free) {
      if (!merged) free_remove(i);
      merged = true;
      uint32_t after = nodes_[nx].next;
      free_remove(nx);
      merge_into(i, nx);
      nx = after;
    }
    if (merged) free_insert(i);
    i = nodes_[i].next;
  }
}

void ArenaState::release_block(uint32_t n) {
  switch (cfg_->coalescing) {
    case CoalescePolicy::Immediate: {
      uint32_t lo = n;
      Node& node = nodes_[n];
      if (node.prev != kNil && nodes_[node.prev].use == NodeUse::Free) {
        uint32_t p = node.prev;
        free_remove(p);
        merge_into(p, n);
        lo = p;
      }
      uint32_t nx = nodes_[lo].next;
      if (nx != kNil && nodes_[nx].use == NodeUse::Free) {
        free_remove(nx);
        merge_into(lo, nx);
      }
      Node& low = nodes_[lo];
      if (low.offset + low.footprint == wilderness_) {
        // The block touches virgin space: hand it back instead of listing it.
        wilderness_ = low.offset;
        if (low.prev != kNil) nodes_[low.prev].next = kNil;
        chain_tail_ = low.prev;
        if (chain_head_ == lo) chain_head_ = kNil;
        kill_node(lo);
      } else {
        free_insert(lo);
      }
      break;
    }
    case CoalescePolicy::Delayed: {
      free_insert(n);
      ++pending_frees_;
      // A single free can introduce two adjacent Free pairs, so the pending
      // count alone cannot bound fragmentation debt; coalesce on either.
      if (pending_frees_ >= cfg_->delayed_threshold ||
          adjacent_free_pairs() >= cfg_->delayed_threshold) {
        full_coalesce();
        pending_frees_ = 0;
      }
      break;
    }
    case CoalescePolicy::Never:
      free_insert(n);
      break;
  }
}

Result<Unit> ArenaState::dealloc(uint64_t addr) {
  auto it = addr_map_.find(addr);
  if (it == addr_map_.end())
    return Result<Unit>::failure("unknown or double-freed address");
  AllocRef ref = it->second;
  addr_map_.erase(it);
  switch (ref.kind) {
    case AllocRef::Kind::Block:
      release_block(ref.a);
      break;
    case AllocRef::Kind::Slot: {
      Run& run = runs_[ref.a];
      run.occupied[ref.b] = 0;
      const auto& classes = cfg_->size_classes;
      auto ci = std::lower_bound(classes.begin(), classes.end(), run.class_size) -
                classes.begin();
      class_free_slots_[ci].push_back(SlotRef{ref.a, ref.b});
      break;
    }
    case AllocRef::Kind::Mapped: {
      uint64_t off = (static_cast<uint64_t>(ref.a) << 32) | ref.b;
      auto mit = std::lower_bound(
          mapped_.begin(), mapped_.end(), off,
          [](const MappedBlock& m, uint64_t o) { return m.offset < o; });
      if (mit != mapped_.end() && mit->offset == off) mapped_.erase(mit);
      break;
    }
  }
  return Unit{};
}

Result<uint64_t> ArenaState::realloc_op(uint64_t addr, uint64_t new_size) {
  auto it = addr_map_.find(addr);
  if (it == addr_map_.end())
    return Result<uint64_t>::failure("realloc of unknown address");
  AllocRef ref = it->second;
  SizeClassInfo want = size_class_of(*cfg_, new_size);

  if (ref.kind == AllocRef::Kind::Slot) {
    if (want.route == Route::SmallRun &&
        runs_[ref.a].class_size == want.footprint)
      return addr;
  } else if (ref.kind == AllocRef::Kind::Mapped) {
    uint64_t off = (static_cast<uint64_t>(ref.a) << 32) | ref.b;
    auto mit = std::lower_bound(
        mapped_.begin(), mapped_.end(), off,
        [](const MappedBlock& m, uint64_t o) { return m.offset < o; });
    if (want.route == Route::Mapped && mit != mapped_.end() &&
        mit->footprint == want.footprint) {
      mit->request = new_size;
      return addr;
    }
  } else {
    uint32_t n = ref.a;
    bool arena_route = want.route == Route::FreeListBlock || want.route == Route::PageSpan;
    if (arena_route) {
      uint64_t old_fp = nodes_[n].footprint;
      uint64_t new_fp = want.footprint;
      if (new_fp == old_fp) {
        nodes_[n].request = new_size;
        return addr;
      }
      if (new_fp < old_fp) {
        nodes_[n].request = new_size;
        if (old_fp - new_fp >= cfg_->effective_min_split()) {
          uint32_t rem = new_node();
          Node& r = nodes_[rem];
          Node& a = nodes_[n];
          r.offset = a.offset + new_fp;
          r.footprint = old_fp - new_fp;
          r.prev = n;
          r.next = a.next;
          if (a.next != kNil) nodes_[a.next].prev = rem;
          if (chain_tail_ == n) chain_tail_ = rem;
          a.next = rem;
          a.footprint = new_fp;
          release_block(rem);
        }
        return addr;
      }
      uint32_t nx = nodes_[n].next;
      if (nx != kNil && nodes_[nx].use == NodeUse::Free &&
          old_fp + nodes_[nx].footprint >= new_fp) {
        free_remove(nx);
        merge_into(n, nx);
        nodes_[n].request = new_size;
        if (nodes_[n].footprint - new_fp >= cfg_->effective_min_split()) {
          uint32_t rem = new_node();
          Node& r = nodes_[rem];
          Node& a = nodes_[n];
          r.offset = a.offset + new_fp;
          r.footprint = a.footprint - new_fp;
          r.prev = n;
          r.next = a.next;
          if (a.next != kNil) nodes_[a.next].prev = rem;
          if (chain_tail_ == n) chain_tail_ = rem;
          a.next = rem;
          a.footprint = new_fp;
          release_block(rem);
        }
        return addr;
      }
    }
  }

  auto moved = alloc(new_size);
  if (!moved) return moved;
  dealloc(addr);
  return moved;
}

Result<uint64_t> ArenaState::calloc_op(uint64_t nmemb, uint64_t size) {
  if (nmemb != 0 && size != 0 &&
      nmemb > std::numeric_limits<uint64_t>::max() / size)
    return Result<uint64_t>::failure("calloc size overflow");
  return alloc(nmemb * size);
}

std::vector<BlockView> ArenaState::heap_snapshot() const {
  std::vector<BlockView> out;
  for (uint32_t i = chain_head_; i != kNil; i = nodes_[i].next) {
    const Node& n = nodes_[i];
    if (n.use == NodeUse::Run) {
      const Run& run = runs_[n.run_index];
      for (uint64_t s = 0; s < run.slot_count; ++s)
        out.push_back(BlockView{run.base + s * run.class_size, run.class_size,
                                run.occupied[s] ? BlockState::Allocated
                                                : BlockState::Free,
                                Region::Arena});
      uint64_t used = run.slot_count * run.class_size;
      if (used < n.footprint)
        out.push_back(BlockView{run.base + used, n.footprint - used,
                                BlockState::Free, Region::Arena});
    } else {
      out.push_back(BlockView{n.offset, n.footprint,
                              n.use == NodeUse::Free ? BlockState::Free
                                                     : BlockState::Allocated,
                              Region::Arena});
    }
  }
  for (const MappedBlock& m : mapped_)
    out.push_back(BlockView{m.offset, m.footprint, BlockState::Allocated,
                            Region::Mapped});
  return out;
}

std::vector<FreeBlockView> ArenaState::free_blocks() const {
  std::vector<FreeBlockView> out;
  for (uint32_t i = chain_head_; i != kNil; i = nodes_[i].next)
    if (nodes_[i].use == NodeUse::Free)
      out.push_back(FreeBlockView{nodes_[i].offset, nodes_[i].footprint,
                                  nodes_[i].stamp});
  return out;
}

std::vector<RunView> ArenaState::runs() const {
  std::vector<RunView> out;
  for (const Run& r : runs_) {
    RunView v;
    v.base = r.base;
    v.class_size = r.class_size;
    v.page_count = r.page_count;
    v.slot_count = r.slot_count;
    v.occupied.assign(r.occupied.begin(), r.occupied.end());
    out.push_back(std::move(v));
  }
  return out;
}

std::optional<uint64_t> ArenaState::live_request_size(uint64_t addr) const {
  auto it = addr_map_.find(addr);
  if (it == addr_map_.end()) return std::nullopt;
  switch (it->second.kind) {
    case AllocRef::Kind::Block:
      return nodes_[it->second.a].request;
    case AllocRef::Kind::Slot:
      return runs_[it->second.a].class_size;
    case AllocRef::Kind::Mapped: {
      uint64_t off = (static_cast<uint64_t>(it->second.a) << 32) | it->second.b;
      for (const MappedBlock& m : mapped_)
        if (m.offset == off) return m.request;
      return std::nullopt;
    }
  }
  return std::nullopt;
}

}  // namespace heapsieve
