#include "heapsieve/states.hpp"

#include <fstream>
#include <sstream>

#include "heapsieve/rng.hpp"

namespace heapsieve {
namespace {

struct StateSpec {
  const char* name;
  uint64_t allocs;
  uint64_t frees;
};

// Alloc/free volumes modeled on warm interpreter heaps of different sizes.
constexpr StateSpec kStates[] = {
    {"php-emalloc-synth", 366, 205},
    {"python-malloc-synth", 3710, 2450},
    {"php-malloc-synth", 12714, 2634},
    {"ruby-malloc-synth", 51827, 19068},
};

// Request-size palette, small sizes heavily favored the way interpreter
// workloads skew. Values stay below every profile's large-object threshold
// so the prefix exercises the main arena, not the mapped region.
constexpr uint64_t kSmall[] = {8,  16,  24,  32,  40,  48,  56,  64,
                               80, 96, 112, 128, 160, 192, 224, 256};
constexpr uint64_t kMedium[] = {320, 384, 448, 512, 640, 768, 896, 1024};
constexpr uint64_t kLarge[] = {1536, 2048, 3072, 4096, 6144, 8192, 12288, 16384};

uint64_t draw_size(SplitMix64& rng) {
  uint64_t tier = rng.below(100);
  if (tier < 70) return kSmall[rng.below(std::size(kSmall))];
  if (tier < 95) return kMedium[rng.below(std::size(kMedium))];
  return kLarge[rng.below(std::size(kLarge))];
}

StartingState generate(const StateSpec& spec) {
  StartingState st;
  st.name = spec.name;
  st.allocs = spec.allocs;
  st.frees = spec.frees;
  st.prefix.directives.reserve(spec.allocs + spec.frees);

  SplitMix64 rng(fnv1a64(spec.name, std::char_traits<char>::length(spec.name)));
  uint64_t a_left = spec.allocs;
  uint64_t f_left = spec.frees;
  uint32_t next_slot = 0;
  std::vector<uint32_t> live;
  live.reserve(spec.allocs);

  while (a_left + f_left > 0) {
    bool do_free = f_left > 0 && !live.empty() && rng.below(a_left + f_left) < f_left;
    Directive d;
    if (do_free) {
      uint64_t pick = rng.below(live.size());
      d.kind = DirectiveKind::Free;
      d.slot = static_cast<int32_t>(live[pick]);
      d.id = "s" + std::to_string(live[pick]);
      live[pick] = live.back();
      live.pop_back();
      --f_left;
    } else {
      d.kind = DirectiveKind::Malloc;
      d.size = draw_size(rng);
      d.slot = static_cast<int32_t>(next_slot);
      d.id = "s" + std::to_string(next_slot);
      live.push_back(next_slot);
      ++next_slot;
      --a_left;
    }
    st.prefix.directives.push_back(std::move(d));
  }
  st.prefix.address_slots = next_slot;
  return st;
}

}  // namespace

std::vector<std::string> builtin_state_names() {
  std::vector<std::string> names;
  for (const auto& s : kStates) names.emplace_back(s.name);
  return names;
}

Result<StartingState> synthetic_starting_state(const std::string& name) {
  for (const auto& s : kStates)
    if (name == s.name) return generate(s);
  return Error{"unknown starting state: " + name};
}

Result<StartingState> load_starting_state(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return Error{"cannot open starting state file: " + path};
  std::ostringstream buf;
  buf << in.rdbuf();

  ParseOptions opts;
  opts.markers = MarkerPolicy::Forbidden;
  ParseOutcome parsed = parse_trace(buf.str(), opts);
  if (!parsed.ok()) {
    const auto& e = parsed.errors.front();
    return Error{path + ":" + std::to_string(e.line) + ": " + e.message};
  }
  StartingState st;
  st.name = path;
  st.prefix = std::move(*parsed.program);
  for (const auto& d : st.prefix.directives) {
    switch (d.kind) {
      case DirectiveKind::Malloc:
      case DirectiveKind::Calloc:
      case DirectiveKind::Realloc:
        ++st.allocs;
        break;
      case DirectiveKind::Free:
        ++st.frees;
        break;
      default:
        break;
    }
  }
  return st;
}

Result<StartingState> resolve_starting_state(const std::string& name_or_path) {
  if (name_or_path.empty() || name_or_path == "none") {
    StartingState st;
    st.name = "none";
    return st;
  }
  for (const auto& s : kStates)
    if (name_or_path == s.name) return generate(s);
  return load_starting_state(name_or_path);
}

}  // namespace heapsieve
