#include "heapsieve/harness.hpp"

#include <omp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "heapsieve/rng.hpp"

namespace heapsieve {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

Result<json> parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    return Error{what + ": " + e.what()};
  }
}

Result<std::string> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return Error{"cannot open " + path.string()};
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

bool write_atomic(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) return false;
    out << content;
    if (!out) return false;
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  return !ec;
}

json result_to_json(const ExperimentResult& r) {
  json j;
  j["key"] = r.spec.key();
  j["seed"] = r.seed;
  j["target"] = r.target;
  if (r.initial_distance)
    j["initial_distance"] = *r.initial_distance;
  else
    j["initial_distance"] = nullptr;
  j["solved"] = r.solved;
  j["solving_index"] = r.solving_index;
  j["candidates_tried"] = r.candidates_tried;
  if (r.best_distance)
    j["best_distance"] = *r.best_distance;
  else
    j["best_distance"] = nullptr;
  j["best_metric"] = r.best_metric;
  j["failures"] = r.failures;
  j["seconds"] = r.seconds;
  j["error"] = r.error;
  return j;
}

// Restores the deterministic fields of a checkpointed experiment. Timing is
// carried over as recorded; it is informational only.
bool result_from_json(const json& j, const std::string& want_key, ExperimentResult& r) {
  if (j.value("key", "") != want_key) return false;
  r.seed = j.value("seed", uint64_t(0));
  r.target = j.value("target", int64_t(0));
  if (j.contains("initial_distance") && !j["initial_distance"].is_null())
    r.initial_distance = j["initial_distance"].get<int64_t>();
  r.solved = j.value("solved", false);
  r.solving_index = j.value("solving_index", uint64_t(0));
  r.candidates_tried = j.value("candidates_tried", uint64_t(0));
  if (j.contains("best_distance") && !j["best_distance"].is_null())
    r.best_distance = j["best_distance"].get<int64_t>();
  r.best_metric = j.value("best_metric", UINT64_MAX);
  r.failures = j.value("failures", uint64_t(0));
  r.seconds = j.value("seconds", 0.0);
  r.error = j.value("error", "");
  return true;
}

}  // namespace

Result<GridConfig> grid_config_from_json(const std::string& text) {
  auto parsed = parse_json(text, "grid config");
  if (!parsed.ok()) return parsed.error();
  const json& j = parsed.value();
  GridConfig cfg;
  try {
    if (j.contains("profiles")) cfg.profiles = j["profiles"].get<std::vector<std::string>>();
    if (j.contains("states")) cfg.states = j["states"].get<std::vector<std::string>>();
    if (j.contains("sizes")) cfg.sizes = j["sizes"].get<std::vector<uint64_t>>();
    if (j.contains("noise")) cfg.noises = j["noise"].get<std::vector<uint64_t>>();
    cfg.budget = j.value("budget", cfg.budget);
    cfg.max_len = j.value("max-len", cfg.max_len);
    cfg.alloc_ratio = j.value("alloc-ratio", cfg.alloc_ratio);
    cfg.seed = j.value("seed", cfg.seed);
  } catch (const json::exception& e) {
    return Error{std::string("grid config: ") + e.what()};
  }
  if (cfg.profiles.empty()) return Error{"grid config: profiles must not be empty"};
  if (cfg.states.empty()) return Error{"grid config: states must not be empty"};
  if (cfg.sizes.empty()) return Error{"grid config: sizes must not be empty"};
  if (cfg.noises.empty()) return Error{"grid config: noise must not be empty"};
  if (cfg.budget == 0) return Error{"grid config: budget must be positive"};
  if (cfg.max_len == 0) return Error{"grid config: max-len must be positive"};
  if (cfg.alloc_ratio > 100) return Error{"grid config: alloc-ratio is a percentage"};
  return cfg;
}

std::string grid_config_to_json(const GridConfig& cfg) {
  json j;
  j["profiles"] = cfg.profiles;
  j["states"] = cfg.states;
  j["sizes"] = cfg.sizes;
  j["noise"] = cfg.noises;
  j["budget"] = cfg.budget;
  j["max-len"] = cfg.max_len;
  j["alloc-ratio"] = cfg.alloc_ratio;
  j["seed"] = cfg.seed;
  return j.dump(2) + "\n";
}

uint64_t grid_config_hash(const GridConfig& cfg) {
  std::string canon = grid_config_to_json(cfg);
  return fnv1a64(canon.data(), canon.size());
}

uint64_t experiment_seed(const GridConfig& cfg, const ExperimentSpec& spec) {
  std::string key = spec.key();
  return substream_seed(cfg.seed, fnv1a64(key.data(), key.size()));
}

Result<BenchRun> run_bench(const GridConfig& cfg, const std::string& out_dir,
                           int workers) {
  if (workers < 1) workers = 1;

  std::map<std::string, AllocatorConfig> profiles;
  for (const auto& name : cfg.profiles) {
    auto p = resolve_profile(name);
    if (!p.ok()) return p.error();
    profiles.emplace(name, std::move(p.value()));
  }
  std::map<std::string, StartingState> states;
  for (const auto& name : cfg.states) {
    auto s = resolve_starting_state(name);
    if (!s.ok()) return s.error();
    states.emplace(name, std::move(s.value()));
  }

  std::vector<ExperimentSpec> grid =
      generate_grid(cfg.profiles, cfg.states, cfg.sizes, cfg.noises);

  fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root / "results", ec);
  fs::create_directories(root / "solutions", ec);
  if (ec) return Error{"cannot create output directory " + out_dir};

  // Checkpoints are only trusted when they were produced by this exact
  // config; otherwise they are ignored and overwritten.
  uint64_t hash = grid_config_hash(cfg);
  bool can_resume = false;
  if (auto text = slurp(root / "manifest.json"); text.ok()) {
    auto parsed = parse_json(text.value(), "manifest");
    if (parsed.ok() && parsed.value().value("config_hash", uint64_t(0)) == hash)
      can_resume = true;
  }

  {
    json manifest;
    manifest["version"] = 1;
    manifest["config"] = json::parse(grid_config_to_json(cfg));
    manifest["config_hash"] = hash;
    json exps = json::array();
    for (const auto& spec : grid) {
      json e;
      e["key"] = spec.key();
      e["seed"] = experiment_seed(cfg, spec);
      exps.push_back(std::move(e));
    }
    manifest["experiments"] = std::move(exps);
    if (!write_atomic(root / "manifest.json", manifest.dump(2) + "\n"))
      return Error{"cannot write manifest.json"};
  }

  BenchParams params;
  params.budget = cfg.budget;
  params.max_len = cfg.max_len;
  params.alloc_ratio = cfg.alloc_ratio;

  BenchRun run;
  run.results.resize(grid.size());
  uint64_t reused = 0;

#pragma omp parallel for num_threads(workers) schedule(dynamic, 1) reduction(+ : reused)
  for (int64_t i = 0; i < static_cast<int64_t>(grid.size()); ++i) {
    const ExperimentSpec& spec = grid[static_cast<size_t>(i)];
    ExperimentResult& slot = run.results[static_cast<size_t>(i)];
    uint64_t seed = experiment_seed(cfg, spec);
    fs::path ckpt = root / "results" / (std::to_string(i) + ".json");

    if (can_resume) {
      if (auto text = slurp(ckpt); text.ok()) {
        auto parsed = parse_json(text.value(), "checkpoint");
        ExperimentResult restored;
        restored.spec = spec;
        if (parsed.ok() && result_from_json(parsed.value(), spec.key(), restored)) {
          slot = std::move(restored);
          reused += 1;
          continue;
        }
      }
    }

    auto res = run_experiment(spec, profiles.at(spec.profile), states.at(spec.state),
                              params, seed);
    if (res.ok()) {
      slot = std::move(res.value());
    } else {
      slot.spec = spec;
      slot.seed = seed;
      slot.error = res.error().message;
    }
    write_atomic(ckpt, result_to_json(slot).dump(2) + "\n");
    if (slot.solved)
      write_atomic(root / "solutions" / (std::to_string(i) + ".trace"),
                   slot.solution_text);
  }
  run.reused = reused;

  run.rows = aggregate(run.results, grid_cell_size(cfg.sizes.size()));
  run.csv = aggregate_csv(run.rows);
  if (!write_atomic(root / "results.csv", run.csv))
    return Error{"cannot write results.csv"};

  json summary;
  summary["config"] = json::parse(grid_config_to_json(cfg));
  summary["config_hash"] = hash;
  json rows = json::array();
  for (const auto& r : run.rows) {
    json row;
    row["allocator"] = r.profile;
    row["start_state"] = r.state;
    row["noise"] = r.noise;
    row["pct_solved"] = r.pct_solved;
    row["pct_natural"] = r.pct_natural;
    row["pct_reversed"] = r.pct_reversed;
    row["experiments"] = r.experiments;
    row["partial"] = r.partial;
    rows.push_back(std::move(row));
  }
  summary["rows"] = std::move(rows);
  json exps = json::array();
  for (const auto& r : run.results) exps.push_back(result_to_json(r));
  summary["experiments"] = std::move(exps);
  if (!write_atomic(root / "results.json", summary.dump(2) + "\n"))
    return Error{"cannot write results.json"};

  return run;
}

Result<SearchJob> search_job_from_json(const std::string& text) {
  auto parsed = parse_json(text, "search config");
  if (!parsed.ok()) return parsed.error();
  const json& j = parsed.value();
  SearchJob job;
  try {
    job.profile = j.value("profile", job.profile);
    job.state = j.value("state", job.state);
    if (j.contains("sizes")) job.sizes = j["sizes"].get<std::vector<uint64_t>>();
    job.fst_size = j.value("fst-size", uint64_t(0));
    job.snd_size = j.value("snd-size", uint64_t(0));
    job.noise = j.value("noise", uint64_t(0));
    if (j.contains("noise-size")) job.noise_size = j["noise-size"].get<uint64_t>();
    job.target = j.value("target", int64_t(0));
    job.budget = j.value("budget", job.budget);
    job.max_len = j.value("max-len", job.max_len);
    job.alloc_ratio = j.value("alloc-ratio", job.alloc_ratio);
    job.seed = j.value("seed", job.seed);
  } catch (const json::exception& e) {
    return Error{std::string("search config: ") + e.what()};
  }
  if (job.fst_size == 0) return Error{"search config: fst-size is required"};
  if (job.snd_size == 0) return Error{"search config: snd-size is required"};
  if (job.max_len == 0) return Error{"search config: max-len must be positive"};
  if (job.alloc_ratio > 100) return Error{"search config: alloc-ratio is a percentage"};
  return job;
}

Result<SequencePool> build_pool(const SearchJob& job, const AllocatorConfig& cfg) {
  auto state = resolve_starting_state(job.state);
  if (!state.ok()) return state.error();

  SequencePool pool;
  pool.prefix = std::move(state.value().prefix);
  pool.pick_id_prefix();

  std::vector<uint64_t> sizes = job.sizes;
  if (sizes.empty()) {
    sizes.push_back(job.fst_size);
    if (job.snd_size != job.fst_size) sizes.push_back(job.snd_size);
  }
  for (uint64_t sz : sizes) {
    if (sz == 0) return Error{"search config: sizes must be positive"};
    pool.sequences.push_back({InteractionSequence::Kind::Alloc, sz, 0, 0, 0});
    pool.sequences.push_back({InteractionSequence::Kind::Free, sz, 0, 0, 0});
  }
  uint64_t noise_size =
      job.noise_size ? *job.noise_size : rounded_request(cfg, job.fst_size);
  uint32_t lead = noise_lead(job.noise);
  uint32_t trail = noise_trail(job.noise);
  pool.fst_seq = {InteractionSequence::Kind::Alloc, job.fst_size, lead, trail, noise_size};
  pool.snd_seq = {InteractionSequence::Kind::Alloc, job.snd_size, lead, trail, noise_size};
  return pool;
}

}  // namespace heapsieve
