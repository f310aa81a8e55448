#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "heapsieve/profiles.hpp"
#include "heapsieve/template_engine.hpp"

using namespace heapsieve;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() /
           ("heapsieve-test-" + tag + "-" + std::to_string(::getpid()));
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

DriverProgram parse_fragment(const std::string& text) {
  ParseOptions opts;
  opts.markers = MarkerPolicy::Forbidden;
  ParseOutcome out = parse_trace(text, opts);
  REQUIRE(out.ok());
  return std::move(*out.program);
}

// A database with one quiet 64-byte allocator, one noisy one, one freeing
// fragment, and one 128-byte allocator.
void write_small_db(const fs::path& dir) {
  write_file(dir / "alloc64.trace", "<malloc 64 x>\n");
  write_file(dir / "alloc64noisy.trace",
             "<malloc 64 x>\n<malloc 16 n1>\n<malloc 16 n2>\n");
  write_file(dir / "free64.trace", "<malloc 64 v>\n<free v>\n");
  write_file(dir / "pair128.trace", "<malloc 128 p>\n");
}

const std::string kAdjacencyTemplate =
    "# drive two buffers together\n"
    "#X-SHRIKE <HEAP-MANIP>\n"
    "#X-SHRIKE <RECORD-ALLOC 0 first>\n"
    "<malloc 64 a>\n"
    "#X-SHRIKE <HEAP-MANIP>\n"
    "#X-SHRIKE <RECORD-ALLOC 0 second>\n"
    "<malloc 64 b>\n"
    "#X-SHRIKE <REQUIRE-DISTANCE second first 64>\n";

}  // namespace

TEST_CASE("templates split into verbatim lines and expansion points") {
  auto tmpl = parse_template(kAdjacencyTemplate);
  REQUIRE(tmpl.ok());
  const auto& nodes = tmpl.value().nodes;
  REQUIRE(nodes.size() == 7);  // the plain comment is dropped
  CHECK(nodes[0].kind == TemplateNodeKind::HeapManip);
  CHECK(nodes[0].sizes.empty());
  CHECK(nodes[1].kind == TemplateNodeKind::RecordAlloc);
  CHECK(nodes[1].id == "first");
  CHECK(nodes[2].kind == TemplateNodeKind::Verbatim);
  CHECK(nodes[2].text == "<malloc 64 a>");
  CHECK(nodes[6].kind == TemplateNodeKind::RequireDistance);
  CHECK(nodes[6].id == "second");
  CHECK(nodes[6].id2 == "first");
  CHECK(nodes[6].dist == 64);
}

TEST_CASE("expansion points may restrict the fragment sizes") {
  auto tmpl = parse_template("#X-SHRIKE <HEAP-MANIP 64 128>\n<malloc 8 a>\n");
  REQUIRE(tmpl.ok());
  CHECK(tmpl.value().nodes[0].sizes == std::vector<uint64_t>{64, 128});
}

TEST_CASE("template parse errors name the offending line") {
  auto bad_op = parse_template("<malloc 8 a>\n<blah 1 2>\n");
  REQUIRE(!bad_op.ok());
  CHECK(bad_op.error().message.find("line 2:") != std::string::npos);

  auto bad_arity = parse_template("<malloc 8>\n");
  REQUIRE(!bad_arity.ok());
  CHECK(bad_arity.error().message.find("argument count") != std::string::npos);

  CHECK(!parse_template("#X-SHRIKE <HEAP-MANIP zero>\n").ok());
  CHECK(!parse_template("#X-SHRIKE <RECORD-ALLOC 0>\n").ok());
  CHECK(!parse_template("#X-SHRIKE <REQUIRE-DISTANCE a b>\n").ok());
  CHECK(!parse_template("#X-SHRIKE <WHATEVER 1>\n").ok());
  CHECK(!parse_template("#X-SHRIKE no brackets\n").ok());
}

TEST_CASE("a fragment summary tallies request sizes and frees") {
  AllocatorConfig cfg = builtin_profile("ideal").value();
  DriverProgram frag = parse_fragment(
      "<malloc 7360 big>\n<malloc 8 s1>\n<calloc 1 8 s2>\n<malloc 57 a1>\n"
      "<malloc 57 a2>\n");
  auto sum = summarize_fragment(frag, cfg);
  REQUIRE(sum.ok());
  const InteractionSummary& s = sum.value();
  CHECK(s.primary_size == 7360);
  CHECK(!s.frees_triggered);
  REQUIRE(s.alloc_sizes.size() == 3);
  CHECK(s.alloc_sizes[0] == std::pair<uint64_t, uint64_t>{8, 2});
  CHECK(s.alloc_sizes[1] == std::pair<uint64_t, uint64_t>{57, 2});
  CHECK(s.alloc_sizes[2] == std::pair<uint64_t, uint64_t>{7360, 1});
  CHECK(s.count_for(57) == 2);
  CHECK(s.count_for(1) == 0);
  CHECK(s.total_allocs() == 5);
  CHECK(s.noise_for(7360) == 4);
  CHECK(s.noise_for(8) == 3);
}

TEST_CASE("realloc counts as an allocation of the new size plus a free") {
  AllocatorConfig cfg = builtin_profile("ideal").value();
  auto sum = summarize_fragment(parse_fragment("<malloc 16 a>\n<realloc a 32 b>\n"), cfg);
  REQUIRE(sum.ok());
  CHECK(sum.value().frees_triggered);
  CHECK(sum.value().count_for(16) == 1);
  CHECK(sum.value().count_for(32) == 1);
  CHECK(sum.value().primary_size == 16);

  auto freed = summarize_fragment(parse_fragment("<malloc 64 v>\n<free v>\n"), cfg);
  REQUIRE(freed.ok());
  CHECK(freed.value().frees_triggered);
}

TEST_CASE("a fragment that cannot replay is rejected") {
  AllocatorConfig cfg = builtin_profile("ideal").value();
  cfg.arena_capacity = 1024;
  auto sum = summarize_fragment(parse_fragment("<malloc 4096 big>\n"), cfg);
  REQUIRE(!sum.ok());
  CHECK(sum.error().message.find("does not replay") != std::string::npos);
}

TEST_CASE("the fragment database loads, sorts, and summarizes a directory") {
  TempDir dir("db");
  write_small_db(dir.path);
  AllocatorConfig cfg = builtin_profile("ideal").value();
  auto db = FragmentDb::open(dir.path.string(), cfg);
  REQUIRE(db.ok());
  const auto& frags = db.value().fragments();
  REQUIRE(frags.size() == 4);
  CHECK(frags[0].name == "alloc64");
  CHECK(frags[1].name == "alloc64noisy");
  CHECK(frags[2].name == "free64");
  CHECK(frags[3].name == "pair128");
  CHECK(frags[1].summary.noise_for(64) == 2);
  CHECK(frags[2].summary.frees_triggered);
  CHECK(fs::exists(dir.path / "index.json"));
}

TEST_CASE("summaries come from the sidecar when the content hash matches") {
  TempDir dir("cache");
  write_small_db(dir.path);
  AllocatorConfig cfg = builtin_profile("ideal").value();
  REQUIRE(FragmentDb::open(dir.path.string(), cfg).ok());

  // Plant a sentinel in the cached summary. A second open must believe it,
  // which proves the replay-and-tally step was skipped.
  auto index = nlohmann::json::parse(read_file(dir.path / "index.json"));
  index["alloc64"]["primary"] = 4242;
  write_file(dir.path / "index.json", index.dump(2) + "\n");
  auto cached = FragmentDb::open(dir.path.string(), cfg);
  REQUIRE(cached.ok());
  CHECK(cached.value().fragments()[0].summary.primary_size == 4242);

  // Changing the fragment invalidates the hash and recomputes the truth.
  write_file(dir.path / "alloc64.trace", "<malloc 64 x>\n<malloc 8 y>\n");
  auto fresh = FragmentDb::open(dir.path.string(), cfg);
  REQUIRE(fresh.ok());
  CHECK(fresh.value().fragments()[0].summary.primary_size == 64);
  CHECK(fresh.value().fragments()[0].summary.total_allocs() == 2);
}

TEST_CASE("databases reject bad directories and bad fragments") {
  AllocatorConfig cfg = builtin_profile("ideal").value();
  CHECK(!FragmentDb::open("/no/such/dir", cfg).ok());

  TempDir empty("empty");
  CHECK(!FragmentDb::open(empty.path.string(), cfg).ok());

  TempDir bad("bad");
  write_file(bad.path / "marker.trace", "<fst 8>\n");
  auto r = FragmentDb::open(bad.path.string(), cfg);
  REQUIRE(!r.ok());
  CHECK(r.error().message.find("marker") != std::string::npos);
}

TEST_CASE("fragment picks prefer low-noise candidates") {
  TempDir dir("pick");
  write_small_db(dir.path);
  AllocatorConfig cfg = builtin_profile("ideal").value();
  auto db = FragmentDb::open(dir.path.string(), cfg);
  REQUIRE(db.ok());

  SplitMix64 rng(1234);
  size_t quiet = 0, noisy = 0;
  for (int i = 0; i < 10000; ++i) {
    auto idx = db.value().pick(rng, false, {64});
    REQUIRE(idx.has_value());
    if (*idx == 0) ++quiet;
    if (*idx == 1) ++noisy;
  }
  CHECK(quiet + noisy == 10000);  // only the 64-byte fragments qualify
  CHECK(quiet > noisy);
}

TEST_CASE("picks respect the free flag and size restriction") {
  TempDir dir("pickmode");
  write_small_db(dir.path);
  AllocatorConfig cfg = builtin_profile("ideal").value();
  auto db = FragmentDb::open(dir.path.string(), cfg);
  REQUIRE(db.ok());
  SplitMix64 rng(9);

  for (int i = 0; i < 200; ++i) {
    auto freeing = db.value().pick(rng, true, {});
    REQUIRE(freeing.has_value());
    CHECK(*freeing == 2);  // free64 is the only fragment that frees

    auto restricted = db.value().pick(rng, false, {128});
    REQUIRE(restricted.has_value());
    CHECK(*restricted == 3);  // pair128 is the only 128-byte allocator
  }
  CHECK(!db.value().pick(rng, false, {999}).has_value());
}

TEST_CASE("instantiation splices renamed fragments into the template") {
  TempDir dir("inst");
  write_small_db(dir.path);
  AllocatorConfig cfg = builtin_profile("ideal").value();
  auto db = FragmentDb::open(dir.path.string(), cfg);
  REQUIRE(db.ok());
  auto tmpl = parse_template(kAdjacencyTemplate);
  REQUIRE(tmpl.ok());

  SearchParams params;
  params.max_len = 8;
  params.alloc_ratio = 80;
  SplitMix64 rng(substream_seed(77, 0));
  auto inst = instantiate(tmpl.value(), db.value(), params, rng);
  REQUIRE(inst.ok());
  CHECK(inst.value().fragments_inserted >= 2);  // one or more per expansion point
  CHECK(inst.value().program.capture_slots == 2);

  bool saw_fragment_id = false;
  for (const auto& d : inst.value().program.directives)
    if (d.id.rfind("f0_", 0) == 0) saw_fragment_id = true;
  CHECK(saw_fragment_id);

  SplitMix64 rng2(substream_seed(77, 0));
  auto inst2 = instantiate(tmpl.value(), db.value(), params, rng2);
  REQUIRE(inst2.ok());
  CHECK(serialize(inst2.value().program) == serialize(inst.value().program));
}

TEST_CASE("assembled instances are re-validated as whole programs") {
  TempDir dir("reval");
  write_small_db(dir.path);
  AllocatorConfig cfg = builtin_profile("ideal").value();
  auto db = FragmentDb::open(dir.path.string(), cfg);
  REQUIRE(db.ok());

  // The check references a capture that no RECORD-ALLOC defines; the template
  // itself parses, the assembled instance does not.
  auto tmpl = parse_template("<malloc 8 a>\n#X-SHRIKE <REQUIRE-DISTANCE ghost ghost 0>\n");
  REQUIRE(tmpl.ok());
  SearchParams params;
  SplitMix64 rng(1);
  auto inst = instantiate(tmpl.value(), db.value(), params, rng);
  REQUIRE(!inst.ok());
  CHECK(inst.error().message.find("assembled instance invalid") != std::string::npos);
}

TEST_CASE("template search finds a layout that passes its distance checks") {
  TempDir dir("solve");
  write_small_db(dir.path);
  AllocatorConfig cfg = builtin_profile("ideal").value();
  auto db = FragmentDb::open(dir.path.string(), cfg);
  REQUIRE(db.ok());
  auto tmpl = parse_template(kAdjacencyTemplate);
  REQUIRE(tmpl.ok());

  SearchParams params;
  params.budget = 5000;
  params.max_len = 12;
  params.alloc_ratio = 85;
  params.seed = 3;
  TemplateSearchOutcome out = template_search(tmpl.value(), db.value(), cfg, params);
  REQUIRE(out.solved);
  CHECK(out.tried == out.solving_index + 1);

  DriverResult replay = execute(out.solution.program, cfg);
  REQUIRE(replay.ok());
  CHECK(replay.checks_passed);
  REQUIRE(replay.checks.size() == 1);
  CHECK(replay.checks[0].got == 64);
}

TEST_CASE("template search is identical serial and parallel") {
  TempDir dir("par");
  write_small_db(dir.path);
  AllocatorConfig cfg = builtin_profile("ideal").value();
  auto db = FragmentDb::open(dir.path.string(), cfg);
  REQUIRE(db.ok());
  auto tmpl = parse_template(kAdjacencyTemplate);
  REQUIRE(tmpl.ok());

  SearchParams params;
  params.budget = 4000;
  params.max_len = 12;
  params.alloc_ratio = 85;
  params.seed = 3;
  params.workers = 1;
  TemplateSearchOutcome serial = template_search(tmpl.value(), db.value(), cfg, params);
  for (int workers : {2, 4, 8}) {
    params.workers = workers;
    TemplateSearchOutcome par = template_search(tmpl.value(), db.value(), cfg, params);
    CHECK(par.solved == serial.solved);
    CHECK(par.solving_index == serial.solving_index);
    CHECK(par.tried == serial.tried);
    CHECK(par.failures == serial.failures);
    if (serial.solved)
      CHECK(serialize(par.solution.program) == serialize(serial.solution.program));
  }
}

TEST_CASE("a template with no expansion points never solves") {
  TempDir dir("static");
  write_small_db(dir.path);
  AllocatorConfig cfg = builtin_profile("ideal").value();
  auto db = FragmentDb::open(dir.path.string(), cfg);
  REQUIRE(db.ok());

  // Distance 8 is impossible for two back-to-back 64-byte buffers, and with
  // no HEAP-MANIP point every instance is the same program.
  auto tmpl = parse_template(
      "#X-SHRIKE <RECORD-ALLOC 0 x>\n<malloc 64 a>\n"
      "#X-SHRIKE <RECORD-ALLOC 0 y>\n<malloc 64 b>\n"
      "#X-SHRIKE <REQUIRE-DISTANCE y x 8>\n");
  REQUIRE(tmpl.ok());
  SearchParams params;
  params.budget = 50;
  TemplateSearchOutcome out = template_search(tmpl.value(), db.value(), cfg, params);
  CHECK(!out.solved);
  CHECK(out.tried == 50);
}
