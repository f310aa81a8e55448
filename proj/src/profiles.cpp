#include "heapsieve/profiles.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace heapsieve {

using nlohmann::json;

namespace {

std::vector<uint64_t> dlmalloc_bins() {
  std::vector<uint64_t> b;
  for (uint64_t v = 16; v <= 256; v += 8) b.push_back(v);
  for (uint64_t v : {384ull, 512ull, 768ull, 1024ull, 1536ull, 2048ull, 3072ull,
                     4096ull, 6144ull, 8192ull, 12288ull, 16384ull, 24576ull,
                     32768ull, 65536ull, 131072ull, 262144ull})
    b.push_back(v);
  return b;
}

// PHP 7 small size classes: 8..3072 in 30 steps.
std::vector<uint64_t> php_classes() {
  return {8,   16,  24,  32,  40,  48,   56,   64,   80,   96,
          112, 128, 160, 192, 224, 256,  320,  384,  448,  512,
          640, 768, 896, 1024, 1280, 1536, 1792, 2048, 2560, 3072};
}

// Segregated-storage classes covering everything below the 32 KB page-span
// threshold, denser at the bottom like the real thing.
std::vector<uint64_t> tcmalloc_classes() {
  std::vector<uint64_t> c;
  for (uint64_t v = 8; v <= 128; v += 8) c.push_back(v);
  for (uint64_t v = 144; v <= 512; v += 16) c.push_back(v);
  for (uint64_t v = 576; v <= 2048; v += 64) c.push_back(v);
  for (uint64_t v = 2304; v <= 8192; v += 256) c.push_back(v);
  for (uint64_t v = 9216; v <= 28672; v += 1024) c.push_back(v);
  return c;
}

AllocatorConfig make_ideal() {
  AllocatorConfig c;
  c.name = "ideal";
  c.kind = AllocatorKind::FreeList;
  c.fit_policy = FitPolicy::BestFit;
  c.split_from = SplitFrom::Front;
  c.free_list_org = FreeListOrg::Single;
  c.coalescing = CoalescePolicy::Immediate;
  c.header_bytes = 0;
  c.alignment = 8;
  return c;
}

AllocatorConfig make_avrlibc() {
  AllocatorConfig c;
  c.name = "avrlibc-like";
  c.kind = AllocatorKind::FreeList;
  c.fit_policy = FitPolicy::BestFit;
  c.split_from = SplitFrom::End;
  c.free_list_org = FreeListOrg::Single;
  c.coalescing = CoalescePolicy::Immediate;
  c.header_bytes = 2;
  c.alignment = 2;
  return c;
}

AllocatorConfig make_dlmalloc() {
  AllocatorConfig c;
  c.name = "dlmalloc-like";
  c.kind = AllocatorKind::FreeList;
  c.fit_policy = FitPolicy::BestFit;
  c.split_from = SplitFrom::Front;
  c.free_list_org = FreeListOrg::Segregated;
  c.class_upper_bounds = dlmalloc_bins();
  c.coalescing = CoalescePolicy::Immediate;
  c.header_bytes = 8;
  c.alignment = 8;
  c.large_threshold = 256 * 1024;
  c.large_strategy = LargeStrategy::MappedRegion;
  return c;
}

AllocatorConfig make_tcmalloc() {
  AllocatorConfig c;
  c.name = "tcmalloc-like";
  c.kind = AllocatorKind::SegregatedStorage;
  c.size_classes = tcmalloc_classes();
  c.run_pages = 8;
  c.page_size = 4096;
  c.coalescing = CoalescePolicy::Immediate;
  c.header_bytes = 0;
  c.alignment = 8;
  c.large_threshold = 32 * 1024;
  c.large_strategy = LargeStrategy::PageBestFit;
  return c;
}

AllocatorConfig make_php() {
  AllocatorConfig c;
  c.name = "php-like";
  c.kind = AllocatorKind::SegregatedStorage;
  c.size_classes = php_classes();
  c.run_pages = 1;
  c.page_size = 4096;
  c.coalescing = CoalescePolicy::Immediate;
  c.header_bytes = 0;
  c.alignment = 8;
  // Strictly above 2MB; exactly 2MB still goes through the page spans.
  c.large_threshold = 2 * 1024 * 1024 + 1;
  c.large_strategy = LargeStrategy::MappedRegion;
  return c;
}

template <typename E>
Result<E> enum_from(const std::string& s,
                    std::initializer_list<std::pair<const char*, E>> table,
                    const char* what) {
  for (auto& [k, v] : table)
    if (s == k) return v;
  return Result<E>::failure(std::string("unknown ") + what + ": " + s);
}

const char* kind_name(AllocatorKind k) {
  return k == AllocatorKind::FreeList ? "free-list" : "segregated-storage";
}
const char* fit_name(FitPolicy f) {
  switch (f) {
    case FitPolicy::BestFit: return "best-fit";
    case FitPolicy::FirstFit: return "first-fit";
    case FitPolicy::NextFit: return "next-fit";
  }
  return "";
}
const char* split_name(SplitFrom s) {
  return s == SplitFrom::Front ? "front" : "end";
}
const char* strategy_name(LargeStrategy s) {
  return s == LargeStrategy::PageBestFit ? "page-best-fit" : "mapped-region";
}

}  // namespace

std::vector<std::string> builtin_profile_names() {
  return {"ideal", "avrlibc-like", "dlmalloc-like", "tcmalloc-like", "php-like"};
}

Result<AllocatorConfig> builtin_profile(const std::string& name) {
  if (name == "ideal") return make_ideal();
  if (name == "avrlibc-like") return make_avrlibc();
  if (name == "dlmalloc-like") return make_dlmalloc();
  if (name == "tcmalloc-like") return make_tcmalloc();
  if (name == "php-like") return make_php();
  return Result<AllocatorConfig>::failure("unknown profile: " + name);
}

Result<AllocatorConfig> profile_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded())
    return Result<AllocatorConfig>::failure("profile JSON is malformed");
  if (!j.is_object())
    return Result<AllocatorConfig>::failure("profile JSON must be an object");

  AllocatorConfig c;
  try {
    if (j.contains("name")) c.name = j["name"].get<std::string>();
    if (j.contains("kind")) {
      auto k = enum_from<AllocatorKind>(
          j["kind"].get<std::string>(),
          {{"free-list", AllocatorKind::FreeList},
           {"segregated-storage", AllocatorKind::SegregatedStorage}},
          "kind");
      if (!k) return k.error();
      c.kind = k.value();
    }
    if (j.contains("fit-policy")) {
      auto f = enum_from<FitPolicy>(j["fit-policy"].get<std::string>(),
                                    {{"best-fit", FitPolicy::BestFit},
                                     {"first-fit", FitPolicy::FirstFit},
                                     {"next-fit", FitPolicy::NextFit}},
                                    "fit-policy");
      if (!f) return f.error();
      c.fit_policy = f.value();
    }
    if (j.contains("split-from")) {
      auto s = enum_from<SplitFrom>(
          j["split-from"].get<std::string>(),
          {{"front", SplitFrom::Front}, {"end", SplitFrom::End}}, "split-from");
      if (!s) return s.error();
      c.split_from = s.value();
    }
    if (j.contains("coalescing")) {
      const json& co = j["coalescing"];
      if (co.is_string()) {
        auto p = enum_from<CoalescePolicy>(co.get<std::string>(),
                                           {{"immediate", CoalescePolicy::Immediate},
                                            {"never", CoalescePolicy::Never}},
                                           "coalescing");
        if (!p) return p.error();
        c.coalescing = p.value();
      } else if (co.is_object() && co.contains("delayed")) {
        c.coalescing = CoalescePolicy::Delayed;
        c.delayed_threshold = co["delayed"].get<uint64_t>();
      } else {
        return Result<AllocatorConfig>::failure("bad coalescing value");
      }
    }
    if (j.contains("free-list-org")) {
      const json& fo = j["free-list-org"];
      if (fo.is_string() && fo.get<std::string>() == "single") {
        c.free_list_org = FreeListOrg::Single;
      } else if (fo.is_object() && fo.contains("segregated")) {
        c.free_list_org = FreeListOrg::Segregated;
        c.class_upper_bounds = fo["segregated"].get<std::vector<uint64_t>>();
      } else {
        return Result<AllocatorConfig>::failure("bad free-list-org value");
      }
    }
    if (j.contains("header-bytes")) c.header_bytes = j["header-bytes"].get<uint64_t>();
    if (j.contains("alignment")) c.alignment = j["alignment"].get<uint64_t>();
    if (j.contains("min-split-remainder"))
      c.min_split_remainder = j["min-split-remainder"].get<uint64_t>();
    if (j.contains("large-threshold") && !j["large-threshold"].is_null())
      c.large_threshold = j["large-threshold"].get<uint64_t>();
    if (j.contains("large-strategy")) {
      auto s = enum_from<LargeStrategy>(
          j["large-strategy"].get<std::string>(),
          {{"page-best-fit", LargeStrategy::PageBestFit},
           {"mapped-region", LargeStrategy::MappedRegion}},
          "large-strategy");
      if (!s) return s.error();
      c.large_strategy = s.value();
    }
    if (j.contains("page-size")) c.page_size = j["page-size"].get<uint64_t>();
    if (j.contains("size-classes"))
      c.size_classes = j["size-classes"].get<std::vector<uint64_t>>();
    if (j.contains("run-pages")) c.run_pages = j["run-pages"].get<uint64_t>();
    if (j.contains("arena-capacity"))
      c.arena_capacity = j["arena-capacity"].get<uint64_t>();
  } catch (const json::exception& e) {
    return Result<AllocatorConfig>::failure(std::string("profile JSON: ") + e.what());
  }

  auto errs = c.validate();
  if (!errs.empty()) {
    std::string msg = "invalid profile:";
    for (auto& e : errs) msg += " " + e + ";";
    return Result<AllocatorConfig>::failure(msg);
  }
  return c;
}

std::string profile_to_json(const AllocatorConfig& c) {
  json j;
  j["name"] = c.name;
  j["kind"] = kind_name(c.kind);
  if (c.kind == AllocatorKind::FreeList) {
    j["fit-policy"] = fit_name(c.fit_policy);
    j["split-from"] = split_name(c.split_from);
    if (c.free_list_org == FreeListOrg::Single)
      j["free-list-org"] = "single";
    else
      j["free-list-org"] = json{{"segregated", c.class_upper_bounds}};
  } else {
    j["size-classes"] = c.size_classes;
    j["run-pages"] = c.run_pages;
  }
  switch (c.coalescing) {
    case CoalescePolicy::Immediate: j["coalescing"] = "immediate"; break;
    case CoalescePolicy::Never: j["coalescing"] = "never"; break;
    case CoalescePolicy::Delayed:
      j["coalescing"] = json{{"delayed", c.delayed_threshold}};
      break;
  }
  j["header-bytes"] = c.header_bytes;
  j["alignment"] = c.alignment;
  if (c.min_split_remainder) j["min-split-remainder"] = *c.min_split_remainder;
  if (c.large_threshold != kNoLargeThreshold) {
    j["large-threshold"] = c.large_threshold;
    j["large-strategy"] = strategy_name(c.large_strategy);
  }
  j["page-size"] = c.page_size;
  j["arena-capacity"] = c.arena_capacity;
  return j.dump(2) + "\n";
}

Result<AllocatorConfig> resolve_profile(const std::string& name_or_path) {
  auto names = builtin_profile_names();
  for (auto& n : names)
    if (n == name_or_path) return builtin_profile(name_or_path);
  std::ifstream in(name_or_path);
  if (!in)
    return Result<AllocatorConfig>::failure("profile not found: " + name_or_path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return profile_from_json(ss.str());
}

}  // namespace heapsieve
