#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "heapsieve/result.hpp"

namespace heapsieve {

enum class AllocatorKind { FreeList, SegregatedStorage };
enum class FitPolicy { BestFit, FirstFit, NextFit };
enum class SplitFrom { Front, End };
enum class CoalescePolicy { Immediate, Delayed, Never };
enum class FreeListOrg { Single, Segregated };
enum class LargeStrategy { PageBestFit, MappedRegion };
enum class Region : uint8_t { Arena, Mapped };

inline constexpr uint64_t kNoLargeThreshold = std::numeric_limits<uint64_t>::max();
inline constexpr uint64_t kMappedBase = 1ull << 40;
inline constexpr uint64_t kDefaultArenaCapacity = 1ull << 30;

/// Deterministic allocator policy description. One config per simulated
/// allocator family; behaviour is a pure function of (config, request trace).
struct AllocatorConfig {
  std::string name;

  AllocatorKind kind = AllocatorKind::FreeList;

  // FreeList-kind policy axes.
  FitPolicy fit_policy = FitPolicy::BestFit;
  SplitFrom split_from = SplitFrom::Front;
  FreeListOrg free_list_org = FreeListOrg::Single;
  std::vector<uint64_t> class_upper_bounds;  // Segregated free lists only

  CoalescePolicy coalescing = CoalescePolicy::Immediate;
  uint64_t delayed_threshold = 32;

  uint64_t header_bytes = 0;
  uint64_t alignment = 8;
  // Smallest usable split remainder; defaults to alignment + header_bytes.
  std::optional<uint64_t> min_split_remainder;

  // Requests at or above this go to large_strategy. kNoLargeThreshold = never.
  uint64_t large_threshold = kNoLargeThreshold;
  LargeStrategy large_strategy = LargeStrategy::PageBestFit;
  uint64_t page_size = 4096;

  // SegregatedStorage-kind policy axes.
  std::vector<uint64_t> size_classes;  // ascending slot sizes
  uint64_t run_pages = 1;              // pages per size-class run

  uint64_t arena_capacity = kDefaultArenaCapacity;

  uint64_t effective_min_split() const {
    return min_split_remainder ? *min_split_remainder : alignment + header_bytes;
  }
  uint64_t align_up(uint64_t n) const {
    if (n == 0) n = 1;
    return (n + alignment - 1) / alignment * alignment;
  }
  uint64_t page_up(uint64_t n) const {
    return (n + page_size - 1) / page_size * page_size;
  }

  /// Empty vector means the config is usable.
  std::vector<std::string> validate() const;
};

enum class BlockState : uint8_t { Free, Allocated };

/// One snapshot entry. Size-class runs are expanded slot by slot, with any
/// unusable tail slack reported as a trailing Free entry.
struct BlockView {
  uint64_t offset = 0;
  uint64_t footprint = 0;
  BlockState state = BlockState::Free;
  Region region = Region::Arena;
  bool operator==(const BlockView&) const = default;
};

/// Free block as the fit policies see it. stamp orders insertions into the
/// free structure (bigger = more recent); recency ties in BestFit go to the
/// freshest stamp.
struct FreeBlockView {
  uint64_t offset = 0;
  uint64_t footprint = 0;
  uint64_t stamp = 0;
};

struct RunView {
  uint64_t base = 0;
  uint64_t class_size = 0;
  uint64_t page_count = 0;
  uint64_t slot_count = 0;
  std::vector<bool> occupied;
};

enum class Route { FreeListBlock, SmallRun, PageSpan, Mapped };

/// Where a request of this size lands and how wide the resulting placement
/// is, measured between consecutive user addresses (header included for
/// header-carrying blocks, slot size for run slots, page-rounded for spans).
struct SizeClassInfo {
  Route route = Route::FreeListBlock;
  uint64_t footprint = 0;
};

SizeClassInfo size_class_of(const AllocatorConfig& cfg, uint64_t size);

/// The whole simulated heap: a single arena growing from offset 0 plus a
/// never-reused mapped region at kMappedBase. Value-copyable so searches can
/// clone a prepared state per candidate and workers can own private copies.
class ArenaState {
 public:
  explicit ArenaState(std::shared_ptr<const AllocatorConfig> cfg);
  explicit ArenaState(const AllocatorConfig& cfg);

  ArenaState(const ArenaState&) = default;
  ArenaState& operator=(const ArenaState&) = default;
  ArenaState(ArenaState&&) = default;
  ArenaState& operator=(ArenaState&&) = default;

  /// User-visible address on success, error on arena exhaustion.
  Result<uint64_t> alloc(uint64_t size);
  /// Error on unknown or double-freed address.
  Result<Unit> dealloc(uint64_t addr);
  /// Resulting user address (may equal addr when serviced in place).
  Result<uint64_t> realloc_op(uint64_t addr, uint64_t new_size);
  /// nmemb * size with overflow detection, then alloc.
  Result<uint64_t> calloc_op(uint64_t nmemb, uint64_t size);

  std::vector<BlockView> heap_snapshot() const;
  std::vector<FreeBlockView> free_blocks() const;
  std::vector<RunView> runs() const;

  const AllocatorConfig& config() const { return *cfg_; }
  uint64_t wilderness_offset() const { return wilderness_; }
  uint64_t mapped_cursor() const { return mapped_cursor_; }
  uint64_t pending_free_count() const { return pending_frees_; }
  /// Requested (pre-rounding) size of a live allocation, if addr is one.
  std::optional<uint64_t> live_request_size(uint64_t addr) const;
  size_t live_count() const { return addr_map_.size(); }

 private:
  static constexpr uint32_t kNil = 0xFFFFFFFFu;

  enum class NodeUse : uint8_t { Dead, Free, Allocated, Run };

  struct Node {
    uint64_t offset = 0;
    uint64_t footprint = 0;
    uint64_t stamp = 0;     // free-structure insertion order
    uint64_t request = 0;   // original requested size (Allocated)
    uint32_t prev = kNil;   // address order
    uint32_t next = kNil;
    uint32_t fprev = kNil;  // free-list links
    uint32_t fnext = kNil;
    uint32_t run_index = kNil;
    uint16_t bin = 0;
    NodeUse use = NodeUse::Dead;
  };

  struct Run {
    uint64_t base = 0;
    uint64_t class_size = 0;
    uint64_t page_count = 0;
    uint64_t slot_count = 0;
    uint32_t node = kNil;
    std::vector<uint8_t> occupied;
  };

  struct SlotRef {
    uint32_t run = 0;
    uint32_t slot = 0;
  };

  struct AllocRef {
    enum class Kind : uint8_t { Block, Slot, Mapped } kind;
    uint32_t a = 0;  // node index / run index
    uint32_t b = 0;  // slot index
  };

  struct MappedBlock {
    uint64_t offset = 0;
    uint64_t footprint = 0;
    uint64_t request = 0;
  };

  // node slab management
  uint32_t new_node();
  void kill_node(uint32_t n);

  // free-structure management
  uint16_t bin_of(uint64_t footprint) const;
  void free_insert(uint32_t n);
  void free_remove(uint32_t n);

  // fit + placement
  uint32_t select_fit(uint64_t footprint);
  uint32_t best_fit_in_bin(uint16_t bin, uint64_t footprint) const;
  Result<uint64_t> alloc_arena_block(uint64_t footprint, uint64_t request);
  Result<uint64_t> alloc_small(uint64_t size, uint64_t class_size);
  Result<uint64_t> alloc_mapped(uint64_t size);
  Result<uint64_t> carve_wilderness(uint64_t footprint);
  uint32_t place_in_block(uint32_t n, uint64_t footprint);

  // release path shared by dealloc, realloc shrink and grow trims
  void release_block(uint32_t n);
  void merge_into(uint32_t dst, uint32_t src);
  void full_coalesce();
  uint64_t adjacent_free_pairs() const;

  uint64_t user_addr(const Node& n) const { return n.offset + cfg_->header_bytes; }

  std::shared_ptr<const AllocatorConfig> cfg_;

  std::vector<Node> nodes_;
  std::vector<uint32_t> dead_nodes_;
  uint32_t chain_head_ = kNil;
  uint32_t chain_tail_ = kNil;

  std::vector<uint32_t> free_heads_;
  uint32_t next_fit_cursor_ = kNil;
  uint64_t stamp_counter_ = 0;

  std::vector<Run> runs_;
  std::vector<std::vector<SlotRef>> class_free_slots_;

  std::unordered_map<uint64_t, AllocRef> addr_map_;
  std::vector<MappedBlock> mapped_;  // ascending offsets

  uint64_t wilderness_ = 0;
  uint64_t mapped_cursor_ = kMappedBase;
  uint64_t pending_frees_ = 0;
};

}  // namespace heapsieve
