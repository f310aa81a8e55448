#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "heapsieve/driver.hpp"
#include "heapsieve/profiles.hpp"

using namespace heapsieve;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() /
           ("heapsieve-cli-" + tag + "-" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::string bin() {
  const char* b = std::getenv("HEAPSIEVE_BIN");
  REQUIRE(b != nullptr);
  return b;
}

struct CmdResult {
  int status = -1;
  std::string out;
};

// Runs a shell command, capturing stdout (and stderr too when merged).
CmdResult run_cmd(const std::string& cmd, bool merge_stderr = true) {
  CmdResult r;
  std::string full = cmd + (merge_stderr ? " 2>&1" : " 2>/dev/null");
  FILE* pipe = ::popen(full.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  int raw = ::pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.rfind(prefix, 0) == 0;
}

const std::string kBasicTrace =
    "<malloc 64 a>\n"
    "<malloc 64 b>\n"
    "<free a>\n"
    "<fst 64>\n"
    "<snd 96>\n";

int64_t library_distance(const std::string& text, const std::string& profile) {
  ParseOptions opts;
  opts.markers = MarkerPolicy::Optional;
  opts.shrike_checks = true;
  ParseOutcome parsed = parse_trace(text, opts);
  REQUIRE(parsed.ok());
  auto cfg = resolve_profile(profile);
  REQUIRE(cfg.ok());
  DriverResult res = execute(*parsed.program, cfg.value());
  REQUIRE(res.ok());
  REQUIRE(res.distance);
  return *res.distance;
}

}  // namespace

TEST_CASE("version flag") {
  auto r = run_cmd(bin() + " --version");
  CHECK(r.status == 0);
  CHECK(r.out == "heapsieve 1.0.0\n");
}

TEST_CASE("exec prints the distance the library computes") {
  TempDir tmp("exec");
  write_file(tmp.path / "t.trace", kBasicTrace);
  int64_t want = library_distance(kBasicTrace, "ideal");

  auto r = run_cmd(bin() + " exec " + (tmp.path / "t.trace").string(), false);
  CHECK(r.status == 0);
  CHECK(r.out == std::to_string(want) + "\n");
}

TEST_CASE("a bare trace path behaves like exec, making the binary a driver") {
  TempDir tmp("driver-mode");
  write_file(tmp.path / "t.trace", kBasicTrace);

  auto direct = run_cmd(bin() + " " + (tmp.path / "t.trace").string(), false);
  auto named = run_cmd(bin() + " exec " + (tmp.path / "t.trace").string(), false);
  CHECK(direct.status == 0);
  CHECK(direct.out == named.out);
}

TEST_CASE("exec without markers prints nothing and succeeds") {
  TempDir tmp("exec-plain");
  write_file(tmp.path / "t.trace", "<malloc 64 a>\n<free a>\n");
  auto r = run_cmd(bin() + " exec " + (tmp.path / "t.trace").string(), false);
  CHECK(r.status == 0);
  CHECK(r.out.empty());
}

TEST_CASE("exec honors profile names and profile files") {
  TempDir tmp("exec-profile");
  write_file(tmp.path / "t.trace", kBasicTrace);
  const char* root = std::getenv("HEAPSIEVE_ROOT");
  REQUIRE(root != nullptr);

  int64_t want = library_distance(kBasicTrace, "dlmalloc-like");
  auto by_name = run_cmd(bin() + " exec --profile dlmalloc-like " +
                             (tmp.path / "t.trace").string(),
                         false);
  CHECK(by_name.status == 0);
  CHECK(by_name.out == std::to_string(want) + "\n");

  auto by_file = run_cmd(bin() + " exec --profile " + std::string(root) +
                             "/configs/profiles/dlmalloc-like.json " +
                             (tmp.path / "t.trace").string(),
                         false);
  CHECK(by_file.status == 0);
  CHECK(by_file.out == by_name.out);
}

TEST_CASE("exec reports passing and failing distance checks") {
  TempDir tmp("exec-checks");
  std::string passing =
      "#X-SHRIKE <RECORD-ALLOC 0 first>\n"
      "<malloc 64 a>\n"
      "#X-SHRIKE <RECORD-ALLOC 0 second>\n"
      "<malloc 64 b>\n"
      "#X-SHRIKE <REQUIRE-DISTANCE second first 64>\n";
  write_file(tmp.path / "pass.trace", passing);
  auto ok = run_cmd(bin() + " exec " + (tmp.path / "pass.trace").string(), false);
  CHECK(ok.status == 0);
  CHECK(ok.out == "CHECK second first 64\n");

  std::string failing =
      "#X-SHRIKE <RECORD-ALLOC 0 first>\n"
      "<malloc 64 a>\n"
      "#X-SHRIKE <RECORD-ALLOC 0 second>\n"
      "<malloc 64 b>\n"
      "#X-SHRIKE <REQUIRE-DISTANCE second first 8>\n";
  write_file(tmp.path / "fail.trace", failing);
  auto missed = run_cmd(bin() + " exec " + (tmp.path / "fail.trace").string(), false);
  CHECK(missed.status == 4);
  CHECK(missed.out == "CHECK second first 64\n");
}

TEST_CASE("exec distinguishes parse errors from run errors") {
  TempDir tmp("exec-errors");

  write_file(tmp.path / "bad.trace", "<malloc 64 a>\nnot a directive\n");
  auto parse = run_cmd(bin() + " exec " + (tmp.path / "bad.trace").string());
  CHECK(parse.status == 2);
  CHECK(parse.out.find("bad.trace:2: ") != std::string::npos);

  auto missing = run_cmd(bin() + " exec " + (tmp.path / "nope.trace").string());
  CHECK(missing.status == 3);

  write_file(tmp.path / "t.trace", kBasicTrace);
  auto profile = run_cmd(bin() + " exec --profile bogus-profile " +
                         (tmp.path / "t.trace").string());
  CHECK(profile.status == 3);

  // Double free surfaces at execution time with the directive index.
  write_file(tmp.path / "dbl.trace", "<malloc 64 a>\n<free a>\n<free a>\n");
  auto dbl = run_cmd(bin() + " exec " + (tmp.path / "dbl.trace").string());
  CHECK(dbl.status == 2);  // the parser already rejects the dead id
}

TEST_CASE("exec renders ascii and svg strips on request") {
  TempDir tmp("exec-render");
  write_file(tmp.path / "t.trace", "<malloc 64 a>\n<malloc 32 b>\n<free a>\n");

  auto ascii = run_cmd(bin() + " exec --render " + (tmp.path / "t.trace").string(),
                       false);
  CHECK(ascii.status == 0);
  CHECK(ascii.out == "[F:64][A:32]\n");

  fs::path svg = tmp.path / "out.svg";
  auto with_svg = run_cmd(bin() + " exec --render-svg " + svg.string() + " " +
                              (tmp.path / "t.trace").string(),
                          false);
  CHECK(with_svg.status == 0);
  std::string svg_text = read_file(svg);
  CHECK(starts_with(svg_text, "<svg"));
  CHECK(svg_text.find("</svg>") != std::string::npos);

  auto render = run_cmd(bin() + " render " + (tmp.path / "t.trace").string(), false);
  CHECK(render.status == 0);
  CHECK(render.out == "[F:64][A:32]\n");
}

TEST_CASE("search solves a job and writes a replayable solution") {
  TempDir tmp("search");
  nlohmann::json job;
  job["profile"] = "ideal";
  job["fst-size"] = 64;
  job["snd-size"] = 96;
  job["target"] = -64;
  job["budget"] = 5000;
  job["max-len"] = 16;
  job["alloc-ratio"] = 90;
  job["seed"] = 2;
  write_file(tmp.path / "job.json", job.dump());
  fs::path out = tmp.path / "solution.trace";

  auto r = run_cmd(bin() + " search --config " + (tmp.path / "job.json").string() +
                       " --out " + out.string(),
                   false);
  CHECK(r.status == 0);
  CHECK(starts_with(r.out, "solved: index "));
  REQUIRE(fs::exists(out));

  // The solution must actually reproduce the target distance.
  CHECK(library_distance(read_file(out), "ideal") == -64);
  auto replay = run_cmd(bin() + " exec " + out.string(), false);
  CHECK(replay.status == 0);
  CHECK(replay.out == "-64\n");
}

TEST_CASE("search reports an unsolved run with its best attempt") {
  TempDir tmp("search-unsolved");
  nlohmann::json job;
  job["profile"] = "ideal";
  job["fst-size"] = 64;
  job["snd-size"] = 96;
  job["target"] = 1;  // off the alignment grid, unreachable
  job["budget"] = 300;
  job["max-len"] = 8;
  job["seed"] = 2;
  write_file(tmp.path / "job.json", job.dump());

  auto r = run_cmd(bin() + " search --config " + (tmp.path / "job.json").string() +
                       " --out " + (tmp.path / "s.trace").string(),
                   false);
  CHECK(r.status == 4);
  CHECK(starts_with(r.out, "unsolved: tried 300 candidates, best distance "));
  CHECK(!fs::exists(tmp.path / "s.trace"));
}

TEST_CASE("worker count never changes the solution") {
  TempDir tmp("search-workers");
  nlohmann::json job;
  job["profile"] = "dlmalloc-like";
  job["fst-size"] = 64;
  job["snd-size"] = 96;
  job["target"] = -72;  // fst footprint includes the 8-byte header
  job["budget"] = 5000;
  job["max-len"] = 16;
  job["alloc-ratio"] = 90;
  job["seed"] = 2;
  write_file(tmp.path / "job.json", job.dump());

  fs::path serial_out = tmp.path / "serial.trace";
  auto serial = run_cmd(bin() + " search --config " + (tmp.path / "job.json").string() +
                            " --workers 1 --out " + serial_out.string(),
                        false);
  REQUIRE(serial.status == 0);

  // HEAPSIEVE_WORKERS beats the flag, so pin parallelism through it.
  fs::path par_out = tmp.path / "par.trace";
  auto par = run_cmd("HEAPSIEVE_WORKERS=4 " + bin() + " search --config " +
                         (tmp.path / "job.json").string() + " --workers 1 --out " +
                         par_out.string(),
                     false);
  REQUIRE(par.status == 0);
  CHECK(read_file(serial_out) == read_file(par_out));
  CHECK(serial.out.substr(0, serial.out.find(',')) ==
        par.out.substr(0, par.out.find(',')));
}

TEST_CASE("search flags override the job file") {
  TempDir tmp("search-override");
  nlohmann::json job;
  job["profile"] = "ideal";
  job["fst-size"] = 64;
  job["snd-size"] = 96;
  job["target"] = 1;
  job["budget"] = 5000;
  job["seed"] = 2;
  write_file(tmp.path / "job.json", job.dump());

  auto r = run_cmd(bin() + " search --config " + (tmp.path / "job.json").string() +
                       " --budget 120 --out " + (tmp.path / "s.trace").string(),
                   false);
  CHECK(r.status == 4);
  CHECK(starts_with(r.out, "unsolved: tried 120 candidates"));
}

TEST_CASE("search rejects broken job files") {
  TempDir tmp("search-bad");
  write_file(tmp.path / "syntax.json", "{nope");
  auto syntax = run_cmd(bin() + " search --config " + (tmp.path / "syntax.json").string());
  CHECK(syntax.status == 2);

  write_file(tmp.path / "incomplete.json", R"({"snd-size": 96})");
  auto incomplete =
      run_cmd(bin() + " search --config " + (tmp.path / "incomplete.json").string());
  CHECK(incomplete.status == 2);
  CHECK(incomplete.out.find("fst-size is required") != std::string::npos);
}

TEST_CASE("search through an external driver matches the in-process model") {
  TempDir tmp("search-external");
  nlohmann::json job;
  job["profile"] = "ideal";
  job["fst-size"] = 64;
  job["snd-size"] = 96;
  job["target"] = -64;
  job["budget"] = 50;
  job["max-len"] = 6;
  job["alloc-ratio"] = 90;
  job["seed"] = 2;
  write_file(tmp.path / "job.json", job.dump());

  fs::path in_out = tmp.path / "in.trace";
  auto in_process = run_cmd(bin() + " search --config " +
                                (tmp.path / "job.json").string() + " --out " +
                                in_out.string(),
                            false);
  REQUIRE(in_process.status == 0);

  // The binary itself speaks the driver protocol, so it can be its own
  // external executor; the search must land on the same candidate.
  fs::path ext_out = tmp.path / "ext.trace";
  auto external = run_cmd(bin() + " search --config " + (tmp.path / "job.json").string() +
                              " --driver " + bin() + " --out " + ext_out.string(),
                          false);
  REQUIRE(external.status == 0);
  CHECK(read_file(in_out) == read_file(ext_out));
}

TEST_CASE("bench writes checkpoints and resumes from them") {
  TempDir tmp("bench");
  nlohmann::json grid;
  grid["profiles"] = {"ideal"};
  grid["states"] = {"none"};
  grid["sizes"] = {64};
  grid["noise"] = {0};
  grid["budget"] = 3000;
  grid["max-len"] = 16;
  grid["alloc-ratio"] = 90;
  grid["seed"] = 7;
  write_file(tmp.path / "grid.json", grid.dump());
  fs::path out_dir = tmp.path / "out";

  auto first = run_cmd(bin() + " bench --config " + (tmp.path / "grid.json").string() +
                           " --out-dir " + out_dir.string(),
                       false);
  CHECK(first.status == 0);
  CHECK(fs::exists(out_dir / "manifest.json"));
  CHECK(fs::exists(out_dir / "results" / "0.json"));
  CHECK(fs::exists(out_dir / "results" / "1.json"));
  CHECK(fs::exists(out_dir / "results.csv"));
  CHECK(fs::exists(out_dir / "results.json"));
  // stdout is the same CSV that lands on disk.
  CHECK(first.out == read_file(out_dir / "results.csv"));

  auto manifest = nlohmann::json::parse(read_file(out_dir / "manifest.json"));
  CHECK(manifest["experiments"].size() == 2);

  auto again = run_cmd(bin() + " bench --config " + (tmp.path / "grid.json").string() +
                       " --out-dir " + out_dir.string());
  CHECK(again.status == 0);
  CHECK(again.out.find("2 from checkpoints") != std::string::npos);

  // A different seed invalidates the checkpoints instead of reusing them.
  grid["seed"] = 8;
  write_file(tmp.path / "grid.json", grid.dump());
  auto reseeded = run_cmd(bin() + " bench --config " + (tmp.path / "grid.json").string() +
                          " --out-dir " + out_dir.string());
  CHECK(reseeded.status == 0);
  CHECK(reseeded.out.find("0 from checkpoints") != std::string::npos);
}

TEST_CASE("bench rejects malformed grids") {
  TempDir tmp("bench-bad");
  write_file(tmp.path / "grid.json", R"({"profiles": []})");
  auto r = run_cmd(bin() + " bench --config " + (tmp.path / "grid.json").string() +
                   " --out-dir " + (tmp.path / "out").string());
  CHECK(r.status == 2);
  CHECK(r.out.find("profiles must not be empty") != std::string::npos);
}

TEST_CASE("template search fills expansion points until checks pass") {
  TempDir tmp("template");
  fs::path db = tmp.path / "db";
  fs::create_directories(db);
  write_file(db / "alloc64.trace", "<malloc 64 x>\n");
  write_file(db / "free64.trace", "<malloc 64 v>\n<free v>\n");
  write_file(tmp.path / "adj.template",
             "#X-SHRIKE <HEAP-MANIP>\n"
             "#X-SHRIKE <RECORD-ALLOC 0 first>\n"
             "<malloc 64 a>\n"
             "#X-SHRIKE <HEAP-MANIP>\n"
             "#X-SHRIKE <RECORD-ALLOC 0 second>\n"
             "<malloc 64 b>\n"
             "#X-SHRIKE <REQUIRE-DISTANCE second first 64>\n");
  fs::path out = tmp.path / "filled.trace";

  auto r = run_cmd(bin() + " template " + (tmp.path / "adj.template").string() +
                       " --db " + db.string() +
                       " --budget 5000 --max-len 12 --alloc-ratio 85 --seed 3" +
                       " --out " + out.string(),
                   false);
  CHECK(r.status == 0);
  CHECK(starts_with(r.out, "solved: index "));
  REQUIRE(fs::exists(out));

  // Replay the instance: its embedded check must hold.
  auto replay = run_cmd(bin() + " exec " + out.string(), false);
  CHECK(replay.status == 0);
  CHECK(replay.out == "CHECK second first 64\n");
}

TEST_CASE("template without a database directory fails cleanly") {
  TempDir tmp("template-bad");
  write_file(tmp.path / "adj.template", "#X-SHRIKE <HEAP-MANIP>\n<malloc 64 a>\n");
  auto r = run_cmd(bin() + " template " + (tmp.path / "adj.template").string() +
                   " --db /no/such/dir --out " + (tmp.path / "o.trace").string());
  CHECK(r.status == 3);
}

TEST_CASE("gen-state matches the checked-in trace") {
  const char* root = std::getenv("HEAPSIEVE_ROOT");
  REQUIRE(root != nullptr);
  auto r = run_cmd(bin() + " gen-state php-emalloc-synth", false);
  CHECK(r.status == 0);
  CHECK(r.out == read_file(fs::path(root) / "states" / "php-emalloc-synth.trace"));

  TempDir tmp("gen-state");
  fs::path out = tmp.path / "state.trace";
  auto to_file = run_cmd(bin() + " gen-state php-emalloc-synth --out " + out.string(),
                         false);
  CHECK(to_file.status == 0);
  CHECK(read_file(out) == r.out);

  auto unknown = run_cmd(bin() + " gen-state not-a-state");
  CHECK(unknown.status == 3);
  CHECK(unknown.out.find("unknown starting state") != std::string::npos);
}

TEST_CASE("unknown commands and paths are usage errors") {
  auto bogus = run_cmd(bin() + " frobnicate");
  CHECK(bogus.status != 0);
  CHECK(bogus.status != 2);
  CHECK(bogus.status != 3);
  CHECK(bogus.status != 4);

  auto no_args = run_cmd(bin());
  CHECK(no_args.status != 0);
}
