#include <CLI11.hpp>
#include <omp.h>

#include <cstdio>

#include "heapsieve/harness.hpp"
#include "heapsieve/profiles.hpp"
#include "heapsieve/search.hpp"

namespace hs = heapsieve;

// Times the serial reference search against the OpenMP one on an identical
// workload and verifies both produce the same outcome. The target distance
// is unreachable on purpose so every candidate in the budget gets evaluated.
int main(int argc, char** argv) {
  CLI::App app{"compare serial and parallel search throughput"};
  uint64_t budget = 20000;
  uint64_t seed = 7;
  int workers = omp_get_max_threads();
  std::string profile = "ideal";
  std::string state = "php-emalloc-synth";
  app.add_option("--budget", budget, "candidates per run");
  app.add_option("--seed", seed, "master seed");
  app.add_option("--workers", workers, "threads for the parallel run");
  app.add_option("--profile", profile, "allocator profile");
  app.add_option("--state", state, "starting state name");
  CLI11_PARSE(app, argc, argv);

  auto cfg = hs::resolve_profile(profile);
  if (!cfg.ok()) {
    std::fprintf(stderr, "%s\n", cfg.error().message.c_str());
    return 1;
  }
  hs::SearchJob job;
  job.profile = profile;
  job.state = state;
  job.fst_size = 64;
  job.snd_size = 96;
  job.target = 1;  // odd, so no aligned layout can ever match
  job.budget = budget;
  job.seed = seed;
  auto pool = hs::build_pool(job, cfg.value());
  if (!pool.ok()) {
    std::fprintf(stderr, "%s\n", pool.error().message.c_str());
    return 1;
  }
  auto exec = hs::InProcessExecutor::make(pool.value(), cfg.value());
  if (!exec.ok()) {
    std::fprintf(stderr, "%s\n", exec.error().message.c_str());
    return 1;
  }

  hs::SearchParams params;
  params.budget = budget;
  params.target = job.target;
  params.seed = seed;

  hs::SearchOutcome serial = hs::search_serial(pool.value(), params, exec.value());
  hs::SearchOutcome parallel =
      hs::search_parallel(pool.value(), params, exec.value(), workers);

  auto report = [&](const char* name, const hs::SearchOutcome& o) {
    std::printf("%-10s %8llu candidates in %7.3fs (%9.0f cand/s)\n", name,
                static_cast<unsigned long long>(o.candidates_tried), o.seconds,
                o.candidates_tried / (o.seconds > 0 ? o.seconds : 1e-9));
  };
  report("serial", serial);
  std::printf("workers: %d\n", workers);
  report("parallel", parallel);
  if (serial.seconds > 0 && parallel.seconds > 0)
    std::printf("speedup: %.2fx\n", serial.seconds / parallel.seconds);

  bool same = serial.solved == parallel.solved &&
              serial.best_distance == parallel.best_distance &&
              serial.best_index == parallel.best_index &&
              serial.best_metric == parallel.best_metric &&
              serial.failures == parallel.failures &&
              serial.candidates_tried == parallel.candidates_tried;
  if (!same) {
    std::fprintf(stderr, "outcomes differ between serial and parallel runs\n");
    return 1;
  }
  std::printf("outcomes match\n");
  return 0;
}
