#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "heapsieve/driver.hpp"
#include "heapsieve/harness.hpp"
#include "heapsieve/profiles.hpp"
#include "heapsieve/render.hpp"
#include "heapsieve/search.hpp"
#include "heapsieve/states.hpp"
#include "heapsieve/template_engine.hpp"

namespace hs = heapsieve;

namespace {

// Exit codes shared by every subcommand: 0 solved or clean run, 2 parse
// error, 3 setup or execution error, 4 ran fine but did not solve.
constexpr int kOk = 0;
constexpr int kParseError = 2;
constexpr int kRunError = 3;
constexpr int kUnsolved = 4;

hs::Result<std::string> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return hs::Error{"cannot open " + path};
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

bool write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) return false;
  out << content;
  return static_cast<bool>(out);
}

int parse_errors(const std::string& path, const hs::ParseOutcome& outcome) {
  for (const auto& e : outcome.errors)
    std::cerr << path << ":" << e.line << ": " << e.message << "\n";
  return kParseError;
}

// HEAPSIEVE_WORKERS beats the command line so wrappers and tests can pin
// parallelism without rewriting invocations.
int effective_workers(int flag_value) {
  if (const char* env = std::getenv("HEAPSIEVE_WORKERS")) {
    int v = std::atoi(env);
    if (v >= 1) return v;
  }
  return flag_value >= 1 ? flag_value : 1;
}

void print_checks(const std::vector<hs::CheckOutcome>& checks) {
  for (const auto& c : checks) {
    if (c.got)
      std::printf("CHECK %s %s %lld\n", c.id_x.c_str(), c.id_y.c_str(),
                  static_cast<long long>(*c.got));
    else
      std::printf("CHECK %s %s ?\n", c.id_x.c_str(), c.id_y.c_str());
  }
}

int cmd_exec(const std::string& trace_path, const std::string& profile,
             bool render, const std::string& svg_path) {
  auto text = read_file(trace_path);
  if (!text.ok()) {
    std::cerr << text.error().message << "\n";
    return kRunError;
  }
  hs::ParseOptions opts;
  opts.markers = hs::MarkerPolicy::Optional;
  opts.shrike_checks = true;
  hs::ParseOutcome parsed = hs::parse_trace(text.value(), opts);
  if (!parsed.ok()) return parse_errors(trace_path, parsed);

  auto cfg = hs::resolve_profile(profile);
  if (!cfg.ok()) {
    std::cerr << cfg.error().message << "\n";
    return kRunError;
  }
  hs::ExecOptions eo;
  eo.want_snapshot = render || !svg_path.empty();
  hs::DriverResult res = hs::execute(*parsed.program, cfg.value(), eo);
  if (!res.ok()) {
    std::cerr << trace_path << ": directive " << res.failure->directive_index << ": "
              << res.failure->message << "\n";
    return kRunError;
  }
  if (res.distance)
    std::printf("%lld\n", static_cast<long long>(*res.distance));
  print_checks(res.checks);
  if (render) std::fputs(hs::render_ascii(res.final_snapshot).c_str(), stdout);
  if (!svg_path.empty() &&
      !write_file(svg_path, hs::render_svg(res.final_snapshot, cfg.value()))) {
    std::cerr << "cannot write " << svg_path << "\n";
    return kRunError;
  }
  return res.checks_passed ? kOk : kUnsolved;
}

int cmd_search(const std::string& config_path, const CLI::Option* profile_opt,
               const std::string& profile, const CLI::Option* seed_opt, uint64_t seed,
               const CLI::Option* budget_opt, uint64_t budget, int workers,
               const std::string& out_path, const std::string& driver) {
  auto text = read_file(config_path);
  if (!text.ok()) {
    std::cerr << text.error().message << "\n";
    return kRunError;
  }
  auto job_r = hs::search_job_from_json(text.value());
  if (!job_r.ok()) {
    std::cerr << config_path << ": " << job_r.error().message << "\n";
    return kParseError;
  }
  hs::SearchJob job = std::move(job_r.value());
  if (profile_opt->count()) job.profile = profile;
  if (seed_opt->count()) job.seed = seed;
  if (budget_opt->count()) job.budget = budget;

  auto cfg = hs::resolve_profile(job.profile);
  if (!cfg.ok()) {
    std::cerr << cfg.error().message << "\n";
    return kRunError;
  }
  auto pool = hs::build_pool(job, cfg.value());
  if (!pool.ok()) {
    std::cerr << pool.error().message << "\n";
    return kRunError;
  }

  hs::SearchParams params;
  params.budget = job.budget;
  params.target = job.target;
  params.max_len = job.max_len;
  params.alloc_ratio = job.alloc_ratio;
  params.seed = job.seed;
  params.workers = effective_workers(workers);

  hs::SearchOutcome outcome;
  if (driver.empty()) {
    auto exec = hs::InProcessExecutor::make(pool.value(), cfg.value());
    if (!exec.ok()) {
      std::cerr << exec.error().message << "\n";
      return kRunError;
    }
    outcome = hs::search(pool.value(), params, exec.value());
  } else {
    auto external = [&driver](const hs::Candidate& c) -> std::optional<int64_t> {
      auto run = hs::run_external(driver, c.program);
      if (!run.ok() || !run.value().has_distance) return std::nullopt;
      return run.value().distance;
    };
    outcome = hs::search(pool.value(), params, external);
  }

  if (!outcome.solved) {
    if (outcome.best_distance)
      std::printf("unsolved: tried %llu candidates, best distance %lld at index %llu "
                  "(off by %llu)\n",
                  static_cast<unsigned long long>(outcome.candidates_tried),
                  static_cast<long long>(*outcome.best_distance),
                  static_cast<unsigned long long>(outcome.best_index),
                  static_cast<unsigned long long>(outcome.best_metric));
    else
      std::printf("unsolved: tried %llu candidates, none executed cleanly\n",
                  static_cast<unsigned long long>(outcome.candidates_tried));
    return kUnsolved;
  }
  if (!write_file(out_path, hs::serialize(outcome.solution.program))) {
    std::cerr << "cannot write " << out_path << "\n";
    return kRunError;
  }
  std::printf("solved: index %llu, distance %lld, %.3fs, solution written to %s\n",
              static_cast<unsigned long long>(outcome.solving_index),
              static_cast<long long>(params.target), outcome.seconds, out_path.c_str());
  return kOk;
}

int cmd_bench(const std::string& config_path, const std::string& out_dir, int workers) {
  auto text = read_file(config_path);
  if (!text.ok()) {
    std::cerr << text.error().message << "\n";
    return kRunError;
  }
  auto cfg = hs::grid_config_from_json(text.value());
  if (!cfg.ok()) {
    std::cerr << config_path << ": " << cfg.error().message << "\n";
    return kParseError;
  }
  auto run = hs::run_bench(cfg.value(), out_dir, effective_workers(workers));
  if (!run.ok()) {
    std::cerr << run.error().message << "\n";
    return kRunError;
  }
  std::fputs(run.value().csv.c_str(), stdout);
  std::fprintf(stderr, "wrote %s/results.csv (%llu experiments, %llu from checkpoints)\n",
               out_dir.c_str(),
               static_cast<unsigned long long>(run.value().results.size()),
               static_cast<unsigned long long>(run.value().reused));
  return kOk;
}

int cmd_template(const std::string& template_path, const std::string& db_dir,
                 const std::string& profile, uint64_t budget, uint32_t max_len,
                 uint32_t alloc_ratio, uint64_t seed, int workers,
                 const std::string& out_path) {
  auto text = read_file(template_path);
  if (!text.ok()) {
    std::cerr << text.error().message << "\n";
    return kRunError;
  }
  auto tmpl = hs::parse_template(text.value());
  if (!tmpl.ok()) {
    std::cerr << template_path << ": " << tmpl.error().message << "\n";
    return kParseError;
  }
  auto cfg = hs::resolve_profile(profile);
  if (!cfg.ok()) {
    std::cerr << cfg.error().message << "\n";
    return kRunError;
  }
  auto db = hs::FragmentDb::open(db_dir, cfg.value());
  if (!db.ok()) {
    std::cerr << db.error().message << "\n";
    return kRunError;
  }

  hs::SearchParams params;
  params.budget = budget;
  params.max_len = max_len;
  params.alloc_ratio = alloc_ratio;
  params.seed = seed;
  params.workers = effective_workers(workers);

  hs::TemplateSearchOutcome outcome =
      hs::template_search(tmpl.value(), db.value(), cfg.value(), params);
  if (!outcome.solved) {
    std::printf("unsolved: tried %llu instantiations\n",
                static_cast<unsigned long long>(outcome.tried));
    return kUnsolved;
  }
  if (!write_file(out_path, hs::serialize(outcome.solution.program))) {
    std::cerr << "cannot write " << out_path << "\n";
    return kRunError;
  }
  std::printf("solved: index %llu, %u fragments inserted, %.3fs, written to %s\n",
              static_cast<unsigned long long>(outcome.solving_index),
              outcome.solution.fragments_inserted, outcome.seconds, out_path.c_str());
  return kOk;
}

int cmd_render(const std::string& trace_path, const std::string& profile,
               const std::string& svg_path) {
  auto text = read_file(trace_path);
  if (!text.ok()) {
    std::cerr << text.error().message << "\n";
    return kRunError;
  }
  hs::ParseOptions opts;
  opts.markers = hs::MarkerPolicy::Optional;
  opts.shrike_checks = true;
  hs::ParseOutcome parsed = hs::parse_trace(text.value(), opts);
  if (!parsed.ok()) return parse_errors(trace_path, parsed);

  auto cfg = hs::resolve_profile(profile);
  if (!cfg.ok()) {
    std::cerr << cfg.error().message << "\n";
    return kRunError;
  }
  hs::DriverResult res = hs::execute(*parsed.program, cfg.value());
  if (!res.ok()) {
    std::cerr << trace_path << ": directive " << res.failure->directive_index << ": "
              << res.failure->message << "\n";
    return kRunError;
  }
  std::fputs(hs::render_ascii(res.final_snapshot).c_str(), stdout);
  if (!svg_path.empty() &&
      !write_file(svg_path, hs::render_svg(res.final_snapshot, cfg.value()))) {
    std::cerr << "cannot write " << svg_path << "\n";
    return kRunError;
  }
  return kOk;
}

int cmd_gen_state(const std::string& name, const std::string& out_path) {
  auto state = hs::synthetic_starting_state(name);
  if (!state.ok()) {
    std::cerr << state.error().message << "\n";
    return kRunError;
  }
  std::string text = hs::serialize(state.value().prefix);
  if (out_path.empty() || out_path == "-") {
    std::fputs(text.c_str(), stdout);
    return kOk;
  }
  if (!write_file(out_path, text)) {
    std::cerr << "cannot write " << out_path << "\n";
    return kRunError;
  }
  return kOk;
}

bool is_known_command(const std::string& arg) {
  static const char* kCommands[] = {"exec", "search", "bench", "template",
                                    "render", "gen-state"};
  for (const char* c : kCommands)
    if (arg == c) return true;
  return !arg.empty() && arg[0] == '-';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deterministic heap layout search toolkit"};
  app.set_version_flag("--version", "heapsieve 1.0.0");
  app.require_subcommand(1);

  // exec
  std::string exec_trace, exec_profile = "ideal", exec_svg;
  bool exec_render = false;
  auto* exec_cmd = app.add_subcommand(
      "exec", "run a trace and print its fst-snd distance and CHECK lines");
  exec_cmd->add_option("trace", exec_trace, "trace file")->required();
  exec_cmd->add_option("--profile", exec_profile, "allocator profile name or JSON path");
  exec_cmd->add_flag("--render", exec_render, "print an ASCII strip of the final heap");
  exec_cmd->add_option("--render-svg", exec_svg, "write an SVG strip of the final heap");

  // search
  std::string search_config, search_profile, search_out = "solution.trace", search_driver;
  uint64_t search_seed = 0, search_budget = 0;
  int search_workers = 1;
  auto* search_cmd =
      app.add_subcommand("search", "look for a candidate hitting the target distance");
  search_cmd->add_option("--config", search_config, "search job JSON")->required();
  auto* search_profile_opt =
      search_cmd->add_option("--profile", search_profile, "override the job's profile");
  auto* search_seed_opt =
      search_cmd->add_option("--seed", search_seed, "override the job's seed");
  auto* search_budget_opt =
      search_cmd->add_option("--budget", search_budget, "override the job's budget");
  search_cmd->add_option("--workers", search_workers,
                         "parallel workers (HEAPSIEVE_WORKERS overrides)");
  search_cmd->add_option("--out", search_out, "solution trace path");
  search_cmd->add_option("--driver", search_driver,
                         "external driver executable instead of the in-process model");

  // bench
  std::string bench_config, bench_out_dir = "bench-out";
  int bench_workers = 1;
  auto* bench_cmd = app.add_subcommand("bench", "run a benchmark sweep over the grid");
  bench_cmd->add_option("--config", bench_config, "grid config JSON")->required();
  bench_cmd->add_option("--out-dir", bench_out_dir, "output directory");
  bench_cmd->add_option("--workers", bench_workers,
                        "parallel workers (HEAPSIEVE_WORKERS overrides)");

  // template
  std::string tmpl_path, tmpl_db, tmpl_profile = "ideal",
              tmpl_out = "template-solution.trace";
  uint64_t tmpl_budget = 50000, tmpl_seed = 1;
  uint32_t tmpl_max_len = 1000, tmpl_ratio = 98;
  int tmpl_workers = 1;
  auto* tmpl_cmd = app.add_subcommand(
      "template", "instantiate a template until its distance checks pass");
  tmpl_cmd->add_option("template", tmpl_path, "template file")->required();
  tmpl_cmd->add_option("--db", tmpl_db, "fragment database directory")->required();
  tmpl_cmd->add_option("--profile", tmpl_profile, "allocator profile name or JSON path");
  tmpl_cmd->add_option("--budget", tmpl_budget, "instantiations to try");
  tmpl_cmd->add_option("--max-len", tmpl_max_len, "max fragments per expansion point");
  tmpl_cmd->add_option("--alloc-ratio", tmpl_ratio, "percent of allocating fragments");
  tmpl_cmd->add_option("--seed", tmpl_seed, "master seed");
  tmpl_cmd->add_option("--workers", tmpl_workers,
                       "parallel workers (HEAPSIEVE_WORKERS overrides)");
  tmpl_cmd->add_option("--out", tmpl_out, "solution trace path");

  // render
  std::string render_trace, render_profile = "ideal", render_svg;
  auto* render_cmd = app.add_subcommand("render", "print the final heap as text");
  render_cmd->add_option("trace", render_trace, "trace file")->required();
  render_cmd->add_option("--profile", render_profile,
                         "allocator profile name or JSON path");
  render_cmd->add_option("--svg", render_svg, "also write an SVG strip");

  // gen-state
  std::string gen_name, gen_out;
  auto* gen_cmd =
      app.add_subcommand("gen-state", "emit a built-in starting state as a trace");
  gen_cmd->add_option("name", gen_name, "starting state name")->required();
  gen_cmd->add_option("--out", gen_out, "output path (default stdout)");

  // A bare trace path makes the binary usable directly as an external
  // driver: `heapsieve <trace>` behaves like `heapsieve exec <trace>`.
  std::vector<char*> args(argv, argv + argc);
  std::string injected = "exec";
  if (argc >= 2 && !is_known_command(argv[1]) &&
      std::filesystem::exists(argv[1]))
    args.insert(args.begin() + 1, injected.data());

  try {
    app.parse(static_cast<int>(args.size()), args.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  if (*exec_cmd) return cmd_exec(exec_trace, exec_profile, exec_render, exec_svg);
  if (*search_cmd)
    return cmd_search(search_config, search_profile_opt, search_profile,
                      search_seed_opt, search_seed, search_budget_opt, search_budget,
                      search_workers, search_out, search_driver);
  if (*bench_cmd) return cmd_bench(bench_config, bench_out_dir, bench_workers);
  if (*tmpl_cmd)
    return cmd_template(tmpl_path, tmpl_db, tmpl_profile, tmpl_budget, tmpl_max_len,
                        tmpl_ratio, tmpl_seed, tmpl_workers, tmpl_out);
  if (*render_cmd) return cmd_render(render_trace, render_profile, render_svg);
  if (*gen_cmd) return cmd_gen_state(gen_name, gen_out);
  return kOk;
}
