#include "heapsieve/template_engine.hpp"

#include <omp.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace heapsieve {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

bool parse_u64(const std::string& s, uint64_t& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

bool parse_i64(const std::string& s, int64_t& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

// Angle-bracket payload of a directive or comment-directive line.
bool unwrap(const std::string& line, size_t from, std::string& inner) {
  size_t lt = line.find('<', from);
  size_t gt = line.rfind('>');
  if (lt == std::string::npos || gt == std::string::npos || gt <= lt) return false;
  inner = line.substr(lt + 1, gt - lt - 1);
  return true;
}

Error line_error(size_t line, const std::string& msg) {
  return Error{"line " + std::to_string(line) + ": " + msg};
}

constexpr char kShrikePrefix[] = "#X-SHRIKE";

}  // namespace

Result<Template> parse_template(const std::string& text) {
  Template tmpl;
  std::istringstream in(text);
  std::string raw;
  size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = trim(raw);
    if (line.empty()) continue;
    if (line.rfind(kShrikePrefix, 0) == 0) {
      std::string inner;
      if (!unwrap(line, sizeof(kShrikePrefix) - 1, inner))
        return line_error(lineno, "malformed comment directive");
      auto parts = split_ws(inner);
      if (parts.empty()) return line_error(lineno, "empty comment directive");
      TemplateNode node;
      if (parts[0] == "HEAP-MANIP") {
        node.kind = TemplateNodeKind::HeapManip;
        for (size_t i = 1; i < parts.size(); ++i) {
          uint64_t sz = 0;
          if (!parse_u64(parts[i], sz) || sz == 0)
            return line_error(lineno, "bad HEAP-MANIP size: " + parts[i]);
          node.sizes.push_back(sz);
        }
      } else if (parts[0] == "RECORD-ALLOC") {
        if (parts.size() != 3) return line_error(lineno, "RECORD-ALLOC wants offset and id");
        node.kind = TemplateNodeKind::RecordAlloc;
        if (!parse_u64(parts[1], node.offset))
          return line_error(lineno, "bad RECORD-ALLOC offset: " + parts[1]);
        node.id = parts[2];
      } else if (parts[0] == "REQUIRE-DISTANCE") {
        if (parts.size() != 4)
          return line_error(lineno, "REQUIRE-DISTANCE wants two ids and a distance");
        node.kind = TemplateNodeKind::RequireDistance;
        node.id = parts[1];
        node.id2 = parts[2];
        if (!parse_i64(parts[3], node.dist))
          return line_error(lineno, "bad REQUIRE-DISTANCE value: " + parts[3]);
      } else {
        return line_error(lineno, "unknown comment directive: " + parts[0]);
      }
      tmpl.nodes.push_back(std::move(node));
      continue;
    }
    if (line[0] == '#') continue;

    // Light shape check; the assembled instance is fully re-validated.
    std::string inner;
    if (!unwrap(line, 0, inner)) return line_error(lineno, "expected <op ...>");
    auto parts = split_ws(inner);
    if (parts.empty()) return line_error(lineno, "empty directive");
    static const std::map<std::string, size_t> kArity = {
        {"malloc", 3}, {"calloc", 4}, {"free", 2}, {"realloc", 4}, {"fst", 2}, {"snd", 2}};
    auto it = kArity.find(parts[0]);
    if (it == kArity.end()) return line_error(lineno, "unknown directive: " + parts[0]);
    if (parts.size() != it->second)
      return line_error(lineno, parts[0] + " has wrong argument count");
    TemplateNode node;
    node.kind = TemplateNodeKind::Verbatim;
    node.text = line;
    tmpl.nodes.push_back(std::move(node));
  }
  return tmpl;
}

uint64_t InteractionSummary::count_for(uint64_t size) const {
  for (const auto& [sz, n] : alloc_sizes)
    if (sz == size) return n;
  return 0;
}

uint64_t InteractionSummary::total_allocs() const {
  uint64_t total = 0;
  for (const auto& [sz, n] : alloc_sizes) total += n;
  return total;
}

Result<InteractionSummary> summarize_fragment(const DriverProgram& fragment,
                                              const AllocatorConfig& cfg) {
  auto replay = apply_program(ArenaState(cfg), fragment, 0, fragment.directives.size());
  if (!replay.ok()) return Error{"fragment does not replay: " + replay.error().message};

  InteractionSummary sum;
  std::map<uint64_t, uint64_t> counts;
  bool first = true;
  auto tally = [&](uint64_t sz) {
    if (first) {
      sum.primary_size = sz;
      first = false;
    }
    ++counts[sz];
  };
  for (const auto& d : fragment.directives) {
    switch (d.kind) {
      case DirectiveKind::Malloc:
      case DirectiveKind::Fst:
      case DirectiveKind::Snd:
        tally(d.size);
        break;
      case DirectiveKind::Calloc:
        tally(d.nmemb * d.size);
        break;
      case DirectiveKind::Realloc:
        tally(d.size);
        sum.frees_triggered = true;
        break;
      case DirectiveKind::Free:
        sum.frees_triggered = true;
        break;
      default:
        break;
    }
  }
  sum.alloc_sizes.assign(counts.begin(), counts.end());
  return sum;
}

Result<FragmentDb> FragmentDb::open(const std::string& dir, const AllocatorConfig& cfg) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return Error{"not a fragment directory: " + dir};

  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(dir, ec))
    if (entry.path().extension() == ".trace") paths.push_back(entry.path());
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) return Error{"no .trace fragments in " + dir};

  json index;
  {
    std::ifstream in(fs::path(dir) / "index.json");
    if (in) {
      try {
        in >> index;
      } catch (const json::exception&) {
        index = json::object();
      }
    }
  }
  if (!index.is_object()) index = json::object();
  bool dirty = false;

  FragmentDb db;
  for (const auto& path : paths) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    std::string content = buf.str();
    std::string name = path.stem().string();
    uint64_t hash = fnv1a64(content.data(), content.size());

    ParseOptions opts;
    opts.markers = MarkerPolicy::Forbidden;
    ParseOutcome parsed = parse_trace(content, opts);
    if (!parsed.ok()) {
      const auto& e = parsed.errors.front();
      return Error{name + ":" + std::to_string(e.line) + ": " + e.message};
    }

    Fragment frag;
    frag.name = name;
    frag.directives = std::move(*parsed.program);

    // The tally is allocator independent; only the replay validation cares
    // about the config, and a cache hit skips it.
    auto cached = index.find(name);
    if (cached != index.end() && cached->value("hash", uint64_t(0)) == hash) {
      frag.summary.frees_triggered = cached->value("frees", false);
      frag.summary.primary_size = cached->value("primary", uint64_t(0));
      for (const auto& pair : (*cached)["sizes"])
        frag.summary.alloc_sizes.emplace_back(pair[0].get<uint64_t>(),
                                              pair[1].get<uint64_t>());
    } else {
      auto sum = summarize_fragment(frag.directives, cfg);
      if (!sum.ok()) return Error{name + ": " + sum.error().message};
      frag.summary = std::move(sum.value());
      json entry;
      entry["hash"] = hash;
      entry["frees"] = frag.summary.frees_triggered;
      entry["primary"] = frag.summary.primary_size;
      entry["sizes"] = json::array();
      for (const auto& [sz, n] : frag.summary.alloc_sizes)
        entry["sizes"].push_back({sz, n});
      index[name] = std::move(entry);
      dirty = true;
    }
    db.fragments_.push_back(std::move(frag));
  }

  if (dirty) {
    // Best effort; a read-only database just recomputes next time.
    std::ofstream out(fs::path(dir) / "index.json");
    if (out) out << index.dump(2) << "\n";
  }
  return db;
}

std::optional<size_t> FragmentDb::pick(SplitMix64& rng, bool want_free,
                                       const std::vector<uint64_t>& sizes) const {
  std::vector<std::pair<size_t, uint64_t>> weighted;
  for (size_t i = 0; i < fragments_.size(); ++i) {
    const InteractionSummary& s = fragments_[i].summary;
    uint64_t noise = 0;
    if (want_free) {
      if (!s.frees_triggered) continue;
      noise = s.total_allocs() > 0 ? s.noise_for(s.primary_size) : 0;
    } else {
      if (s.frees_triggered || s.total_allocs() == 0) continue;
      if (!sizes.empty()) {
        uint64_t best_count = 0;
        uint64_t best_size = 0;
        for (uint64_t sz : sizes) {
          uint64_t c = s.count_for(sz);
          if (c > best_count) {
            best_count = c;
            best_size = sz;
          }
        }
        if (best_count == 0) continue;
        noise = s.noise_for(best_size);
      } else {
        noise = s.noise_for(s.primary_size);
      }
    }
    weighted.emplace_back(i, 1000000 / (1 + noise));
  }
  if (weighted.empty()) return std::nullopt;

  uint64_t total = 0;
  for (const auto& [idx, w] : weighted) total += w;
  if (total == 0) {
    for (auto& [idx, w] : weighted) w = 1;
    total = weighted.size();
  }
  uint64_t x = rng.below(total);
  for (const auto& [idx, w] : weighted) {
    if (x < w) return idx;
    x -= w;
  }
  return weighted.back().first;
}

Result<TemplateInstance> instantiate(const Template& tmpl, const FragmentDb& db,
                                     const SearchParams& params, SplitMix64& rng) {
  std::string text;
  uint32_t frag_counter = 0;
  uint32_t inserted = 0;
  char buf[192];

  for (const auto& node : tmpl.nodes) {
    switch (node.kind) {
      case TemplateNodeKind::Verbatim:
        text += node.text;
        text += '\n';
        break;
      case TemplateNodeKind::RecordAlloc:
        std::snprintf(buf, sizeof(buf), "#X-SHRIKE <RECORD-ALLOC %llu %s>\n",
                      static_cast<unsigned long long>(node.offset), node.id.c_str());
        text += buf;
        break;
      case TemplateNodeKind::RequireDistance:
        std::snprintf(buf, sizeof(buf), "#X-SHRIKE <REQUIRE-DISTANCE %s %s %lld>\n",
                      node.id.c_str(), node.id2.c_str(),
                      static_cast<long long>(node.dist));
        text += buf;
        break;
      case TemplateNodeKind::HeapManip: {
        uint64_t k = 1 + rng.below(params.max_len);
        for (uint64_t j = 0; j < k; ++j) {
          bool want_free = rng.below(100) >= params.alloc_ratio;
          auto idx = db.pick(rng, want_free, node.sizes);
          if (!idx) idx = db.pick(rng, !want_free, node.sizes);
          if (!idx) continue;
          const Fragment& frag = db.fragments()[*idx];
          std::string prefix = "f" + std::to_string(frag_counter++) + "_";
          for (const Directive& d : frag.directives.directives) {
            Directive c = d;
            if (!c.id.empty()) c.id = prefix + c.id;
            if (!c.old_id.empty()) c.old_id = prefix + c.old_id;
            text += serialize(c);
          }
          ++inserted;
        }
        break;
      }
    }
  }

  ParseOptions opts;
  opts.markers = MarkerPolicy::Optional;
  opts.shrike_checks = true;
  ParseOutcome parsed = parse_trace(text, opts);
  if (!parsed.ok()) {
    const auto& e = parsed.errors.front();
    return Error{"assembled instance invalid at line " + std::to_string(e.line) + ": " +
                 e.message};
  }
  TemplateInstance inst;
  inst.program = std::move(*parsed.program);
  inst.fragments_inserted = inserted;
  return inst;
}

TemplateSearchOutcome template_search(const Template& tmpl, const FragmentDb& db,
                                      const AllocatorConfig& cfg,
                                      const SearchParams& params) {
  auto t0 = std::chrono::steady_clock::now();
  TemplateSearchOutcome out;
  int workers = params.workers < 1 ? 1 : params.workers;

  // 1 = all checks pass, 0 = ran but failed a check, -1 = broken instance.
  auto eval = [&](uint64_t i) -> int {
    SplitMix64 rng(substream_seed(params.seed, i));
    auto inst = instantiate(tmpl, db, params, rng);
    if (!inst.ok()) return -1;
    ExecOptions eo;
    eo.want_snapshot = false;
    DriverResult res = execute(inst.value().program, cfg, eo);
    if (!res.ok()) return -1;
    if (res.checks.empty()) return 0;
    return res.checks_passed ? 1 : 0;
  };
  auto adopt = [&](uint64_t i) {
    SplitMix64 rng(substream_seed(params.seed, i));
    auto inst = instantiate(tmpl, db, params, rng);
    out.solved = true;
    out.solving_index = i;
    out.solution = std::move(inst.value());
  };

  constexpr uint64_t kChunk = 256;
  std::vector<int> verdicts(kChunk);
  for (uint64_t base = 0; base < params.budget && !out.solved; base += kChunk) {
    uint64_t n = std::min(kChunk, params.budget - base);
    if (workers > 1) {
#pragma omp parallel for num_threads(workers) schedule(dynamic, 4)
      for (int64_t k = 0; k < static_cast<int64_t>(n); ++k)
        verdicts[static_cast<size_t>(k)] = eval(base + static_cast<uint64_t>(k));
    } else {
      for (uint64_t k = 0; k < n; ++k) {
        verdicts[k] = eval(base + k);
        if (verdicts[k] == 1) {
          n = k + 1;
          break;
        }
      }
    }
    for (uint64_t k = 0; k < n; ++k) {
      if (verdicts[k] == -1) ++out.failures;
      if (verdicts[k] == 1) {
        adopt(base + k);
        break;
      }
    }
  }
  out.tried = out.solved ? out.solving_index + 1 : params.budget;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace heapsieve
