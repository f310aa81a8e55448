#include "heapsieve/driver.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <string_view>
#include <unordered_map>

namespace heapsieve {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

bool parse_u64(std::string_view s, uint64_t& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

bool parse_i64(std::string_view s, int64_t& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

bool valid_id(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s)
    if (c == '<' || c == '>') return false;
  return true;
}

constexpr std::string_view kShrikePrefix = "#X-SHRIKE";

}  // namespace

ParseOutcome parse_trace(const std::string& text, const ParseOptions& opts) {
  ParseOutcome out;
  DriverProgram prog;
  std::vector<ParseError>& errs = out.errors;

  std::unordered_map<std::string, int32_t> live;
  std::unordered_map<std::string, int32_t> captures;
  int32_t next_slot = 0;
  int32_t next_capture = 0;
  size_t fst_line = 0, snd_line = 0;

  auto err = [&](size_t line, std::string msg) {
    errs.push_back(ParseError{line, std::move(msg)});
  };

  size_t line_no = 0;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t nl = text.find('\n', pos);
    std::string_view raw(text.data() + pos,
                         (nl == std::string::npos ? text.size() : nl) - pos);
    pos = (nl == std::string::npos) ? text.size() + 1 : nl + 1;
    ++line_no;
    std::string_view line = trim(raw);
    if (line.empty()) continue;

    bool shrike = false;
    if (line.front() == '#') {
      if (!opts.shrike_checks || line.substr(0, kShrikePrefix.size()) != kShrikePrefix)
        continue;  // plain comment
      line = trim(line.substr(kShrikePrefix.size()));
      shrike = true;
    }
    if (line.size() < 2 || line.front() != '<' || line.back() != '>') {
      err(line_no, "directive must be wrapped in angle brackets");
      continue;
    }
    auto parts = split_ws(line.substr(1, line.size() - 2));
    if (parts.empty()) {
      err(line_no, "empty directive");
      continue;
    }
    std::string_view op = parts[0];
    Directive d;

    if (shrike) {
      if (op == "RECORD-ALLOC" && parts.size() == 3) {
        if (!parse_u64(parts[1], d.offset)) {
          err(line_no, "bad record-alloc offset");
          continue;
        }
        if (!valid_id(parts[2])) {
          err(line_no, "bad capture id");
          continue;
        }
        d.kind = DirectiveKind::RecordAlloc;
        d.id = std::string(parts[2]);
        if (captures.count(d.id)) {
          err(line_no, "capture id reused: " + d.id);
          continue;
        }
        d.slot = next_capture++;
        captures.emplace(d.id, d.slot);
        prog.directives.push_back(std::move(d));
      } else if (op == "REQUIRE-DISTANCE" && parts.size() == 4) {
        if (!parse_i64(parts[3], d.dist)) {
          err(line_no, "bad require-distance value");
          continue;
        }
        d.kind = DirectiveKind::RequireDistance;
        d.old_id = std::string(parts[1]);
        d.id2 = std::string(parts[2]);
        auto x = captures.find(d.old_id);
        auto y = captures.find(d.id2);
        if (x == captures.end() || y == captures.end()) {
          err(line_no, "require-distance references unknown capture id");
          continue;
        }
        d.old_slot = x->second;
        d.slot2 = y->second;
        prog.directives.push_back(std::move(d));
      } else if (op == "HEAP-MANIP") {
        err(line_no, "HEAP-MANIP belongs in templates, not executable traces");
      } else {
        err(line_no, "unknown check directive");
      }
      continue;
    }

    if (op == "malloc" && parts.size() == 3) {
      if (!parse_u64(parts[1], d.size) || d.size == 0) {
        err(line_no, "bad malloc size");
        continue;
      }
      if (!valid_id(parts[2])) {
        err(line_no, "bad id");
        continue;
      }
      d.kind = DirectiveKind::Malloc;
      d.id = std::string(parts[2]);
      if (live.count(d.id)) {
        err(line_no, "id redefined while live: " + d.id);
        continue;
      }
      d.slot = next_slot++;
      live.emplace(d.id, d.slot);
      prog.directives.push_back(std::move(d));
    } else if (op == "calloc" && parts.size() == 4) {
      if (!parse_u64(parts[1], d.nmemb) || d.nmemb == 0 ||
          !parse_u64(parts[2], d.size) || d.size == 0) {
        err(line_no, "bad calloc operands");
        continue;
      }
      if (!valid_id(parts[3])) {
        err(line_no, "bad id");
        continue;
      }
      d.kind = DirectiveKind::Calloc;
      d.id = std::string(parts[3]);
      if (live.count(d.id)) {
        err(line_no, "id redefined while live: " + d.id);
        continue;
      }
      d.slot = next_slot++;
      live.emplace(d.id, d.slot);
      prog.directives.push_back(std::move(d));
    } else if (op == "free" && parts.size() == 2) {
      d.kind = DirectiveKind::Free;
      d.id = std::string(parts[1]);
      auto it = live.find(d.id);
      if (it == live.end()) {
        err(line_no, "free of unknown or dead id: " + d.id);
        continue;
      }
      d.slot = it->second;
      live.erase(it);
      prog.directives.push_back(std::move(d));
    } else if (op == "realloc" && parts.size() == 4) {
      if (!parse_u64(parts[2], d.size) || d.size == 0) {
        err(line_no, "bad realloc size");
        continue;
      }
      if (!valid_id(parts[1]) || !valid_id(parts[3])) {
        err(line_no, "bad id");
        continue;
      }
      d.kind = DirectiveKind::Realloc;
      d.old_id = std::string(parts[1]);
      d.id = std::string(parts[3]);
      auto it = live.find(d.old_id);
      if (it == live.end()) {
        err(line_no, "realloc of unknown or dead id: " + d.old_id);
        continue;
      }
      d.old_slot = it->second;
      live.erase(it);
      if (live.count(d.id)) {
        err(line_no, "id redefined while live: " + d.id);
        continue;
      }
      d.slot = next_slot++;
      live.emplace(d.id, d.slot);
      prog.directives.push_back(std::move(d));
    } else if ((op == "fst" || op == "snd") && parts.size() == 2) {
      if (!parse_u64(parts[1], d.size) || d.size == 0) {
        err(line_no, "bad marker size");
        continue;
      }
      if (op == "fst") {
        d.kind = DirectiveKind::Fst;
        if (fst_line) {
          err(line_no, "duplicate fst directive");
          continue;
        }
        if (snd_line) {
          err(line_no, "fst must precede snd");
          continue;
        }
        fst_line = line_no;
      } else {
        d.kind = DirectiveKind::Snd;
        if (snd_line) {
          err(line_no, "duplicate snd directive");
          continue;
        }
        if (!fst_line) {
          err(line_no, "snd before fst");
          continue;
        }
        snd_line = line_no;
      }
      prog.directives.push_back(std::move(d));
    } else {
      err(line_no, "unknown directive: " + std::string(op));
    }
  }

  switch (opts.markers) {
    case MarkerPolicy::Required:
      if (!fst_line || !snd_line) err(0, "program needs one fst and one snd");
      break;
    case MarkerPolicy::Forbidden:
      if (fst_line || snd_line)
        err(fst_line ? fst_line : snd_line, "fst/snd not allowed in this trace");
      break;
    case MarkerPolicy::Optional:
      if (static_cast<bool>(fst_line) != static_cast<bool>(snd_line))
        err(fst_line ? fst_line : snd_line, "fst and snd must appear together");
      break;
  }

  if (!errs.empty()) return out;
  prog.address_slots = static_cast<uint32_t>(next_slot);
  prog.capture_slots = static_cast<uint32_t>(next_capture);
  prog.has_markers = fst_line && snd_line;
  out.program = std::move(prog);
  return out;
}

ParseOutcome parse_directives(const std::string& text) {
  return parse_trace(text, ParseOptions{});
}

std::string serialize(const Directive& d) {
  char buf[160];
  switch (d.kind) {
    case DirectiveKind::Malloc:
      snprintf(buf, sizeof buf, "<malloc %llu %s>\n",
               static_cast<unsigned long long>(d.size), d.id.c_str());
      break;
    case DirectiveKind::Calloc:
      snprintf(buf, sizeof buf, "<calloc %llu %llu %s>\n",
               static_cast<unsigned long long>(d.nmemb),
               static_cast<unsigned long long>(d.size), d.id.c_str());
      break;
    case DirectiveKind::Free:
      snprintf(buf, sizeof buf, "<free %s>\n", d.id.c_str());
      break;
    case DirectiveKind::Realloc:
      snprintf(buf, sizeof buf, "<realloc %s %llu %s>\n", d.old_id.c_str(),
               static_cast<unsigned long long>(d.size), d.id.c_str());
      break;
    case DirectiveKind::Fst:
      snprintf(buf, sizeof buf, "<fst %llu>\n",
               static_cast<unsigned long long>(d.size));
      break;
    case DirectiveKind::Snd:
      snprintf(buf, sizeof buf, "<snd %llu>\n",
               static_cast<unsigned long long>(d.size));
      break;
    case DirectiveKind::RecordAlloc:
      snprintf(buf, sizeof buf, "#X-SHRIKE <RECORD-ALLOC %llu %s>\n",
               static_cast<unsigned long long>(d.offset), d.id.c_str());
      break;
    case DirectiveKind::RequireDistance:
      snprintf(buf, sizeof buf, "#X-SHRIKE <REQUIRE-DISTANCE %s %s %lld>\n",
               d.old_id.c_str(), d.id2.c_str(), static_cast<long long>(d.dist));
      break;
  }
  return buf;
}

std::string serialize(const DriverProgram& p) {
  std::string out;
  out.reserve(p.directives.size() * 16);
  for (const Directive& d : p.directives) out += serialize(d);
  return out;
}

namespace {

struct ArmedCapture {
  uint64_t remaining;
  int32_t cap;
};

}  // namespace

DriverResult execute_from(ArenaState st, const DriverProgram& p, size_t from,
                          const ExecOptions& opts) {
  DriverResult res;

  thread_local std::vector<uint64_t> slots;
  slots.assign(p.address_slots, 0);
  std::vector<uint64_t> caps(p.capture_slots, 0);
  std::vector<uint8_t> cap_set(p.capture_slots, 0);
  std::vector<ArmedCapture> armed;

  auto on_alloc = [&](uint64_t addr) {
    if (armed.empty()) return;
    size_t w = 0;
    for (size_t i = 0; i < armed.size(); ++i) {
      if (armed[i].remaining == 0) {
        caps[armed[i].cap] = addr;
        cap_set[armed[i].cap] = 1;
      } else {
        armed[w++] = ArmedCapture{armed[i].remaining - 1, armed[i].cap};
      }
    }
    armed.resize(w);
  };

  for (size_t i = from; i < p.directives.size(); ++i) {
    const Directive& d = p.directives[i];
    switch (d.kind) {
      case DirectiveKind::Malloc: {
        auto r = st.alloc(d.size);
        if (!r) {
          res.failure = ExecFailure{i, r.error().message};
          goto done;
        }
        slots[d.slot] = r.value();
        on_alloc(r.value());
        break;
      }
      case DirectiveKind::Calloc: {
        auto r = st.calloc_op(d.nmemb, d.size);
        if (!r) {
          res.failure = ExecFailure{i, r.error().message};
          goto done;
        }
        slots[d.slot] = r.value();
        on_alloc(r.value());
        break;
      }
      case DirectiveKind::Free: {
        auto r = st.dealloc(slots[d.slot]);
        if (!r) {
          res.failure = ExecFailure{i, r.error().message};
          goto done;
        }
        break;
      }
      case DirectiveKind::Realloc: {
        auto r = st.realloc_op(slots[d.old_slot], d.size);
        if (!r) {
          res.failure = ExecFailure{i, r.error().message};
          goto done;
        }
        slots[d.slot] = r.value();
        on_alloc(r.value());
        break;
      }
      case DirectiveKind::Fst: {
        auto r = st.alloc(d.size);
        if (!r) {
          res.failure = ExecFailure{i, r.error().message};
          goto done;
        }
        res.addr_fst = r.value();
        on_alloc(r.value());
        break;
      }
      case DirectiveKind::Snd: {
        auto r = st.alloc(d.size);
        if (!r) {
          res.failure = ExecFailure{i, r.error().message};
          goto done;
        }
        res.addr_snd = r.value();
        on_alloc(r.value());
        break;
      }
      case DirectiveKind::RecordAlloc:
        armed.push_back(ArmedCapture{d.offset, d.slot});
        break;
      case DirectiveKind::RequireDistance:
        break;  // evaluated after the run
    }
  }
done:
  if (res.addr_fst && res.addr_snd) {
    res.distance =
        static_cast<int64_t>(*res.addr_fst) - static_cast<int64_t>(*res.addr_snd);
    res.cross_region = (*res.addr_fst >= kMappedBase) != (*res.addr_snd >= kMappedBase);
  }
  for (const Directive& d : p.directives) {
    if (d.kind == DirectiveKind::RecordAlloc && cap_set[d.slot])
      res.captures.emplace_back(d.id, caps[d.slot]);
    if (d.kind == DirectiveKind::RequireDistance) {
      CheckOutcome c;
      c.id_x = d.old_id;
      c.id_y = d.id2;
      c.want = d.dist;
      if (cap_set[d.old_slot] && cap_set[d.slot2])
        c.got = static_cast<int64_t>(caps[d.old_slot]) -
                static_cast<int64_t>(caps[d.slot2]);
      c.passed = c.got && *c.got == c.want;
      res.checks_passed = res.checks_passed && c.passed;
      res.checks.push_back(std::move(c));
    }
  }
  if (opts.want_snapshot) res.final_snapshot = st.heap_snapshot();
  return res;
}

DriverResult execute(const DriverProgram& p, const AllocatorConfig& cfg,
                     const ExecOptions& opts) {
  return execute_from(ArenaState(cfg), p, 0, opts);
}

Result<ArenaState> apply_program(ArenaState st, const DriverProgram& p, size_t from,
                                 size_t to) {
  std::vector<uint64_t> slots(p.address_slots, 0);
  to = std::min(to, p.directives.size());
  for (size_t i = from; i < to; ++i) {
    const Directive& d = p.directives[i];
    Result<uint64_t> r = Error{""};
    switch (d.kind) {
      case DirectiveKind::Malloc:
      case DirectiveKind::Fst:
      case DirectiveKind::Snd:
        r = st.alloc(d.size);
        break;
      case DirectiveKind::Calloc:
        r = st.calloc_op(d.nmemb, d.size);
        break;
      case DirectiveKind::Realloc:
        r = st.realloc_op(slots[d.old_slot], d.size);
        break;
      case DirectiveKind::Free: {
        auto f = st.dealloc(slots[d.slot]);
        if (!f.ok())
          return Error{"directive " + std::to_string(i) + ": " + f.error().message};
        continue;
      }
      case DirectiveKind::RecordAlloc:
      case DirectiveKind::RequireDistance:
        continue;
    }
    if (!r.ok())
      return Error{"directive " + std::to_string(i) + ": " + r.error().message};
    if (d.slot >= 0) slots[d.slot] = r.value();
  }
  return st;
}

Result<ExternalRun> run_external(const std::string& driver_path,
                                 const DriverProgram& p,
                                 std::chrono::milliseconds timeout) {
  char path[] = "/tmp/heapsieve-trace-XXXXXX";
  int tfd = mkstemp(path);
  if (tfd < 0) return Result<ExternalRun>::failure("cannot create temp trace file");
  std::string text = serialize(p);
  size_t off = 0;
  while (off < text.size()) {
    ssize_t w = write(tfd, text.data() + off, text.size() - off);
    if (w < 0) {
      close(tfd);
      unlink(path);
      return Result<ExternalRun>::failure("cannot write temp trace file");
    }
    off += static_cast<size_t>(w);
  }
  close(tfd);

  int outp[2], errp[2];
  if (pipe(outp) != 0 || pipe(errp) != 0) {
    unlink(path);
    return Result<ExternalRun>::failure("pipe failed");
  }
  pid_t pid = fork();
  if (pid < 0) {
    unlink(path);
    return Result<ExternalRun>::failure("fork failed");
  }
  if (pid == 0) {
    dup2(outp[1], STDOUT_FILENO);
    dup2(errp[1], STDERR_FILENO);
    close(outp[0]);
    close(outp[1]);
    close(errp[0]);
    close(errp[1]);
    execlp(driver_path.c_str(), driver_path.c_str(), path, nullptr);
    _exit(127);
  }
  close(outp[1]);
  close(errp[1]);

  std::string out_text, err_text;
  bool timed_out = false;
  int grace_rounds = 20;  // drain budget once the child has been killed
  auto deadline = std::chrono::steady_clock::now() + timeout;
  struct pollfd fds[2] = {{outp[0], POLLIN, 0}, {errp[0], POLLIN, 0}};
  bool open_fd[2] = {true, true};
  char buf[4096];
  while (open_fd[0] || open_fd[1]) {
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0 && !timed_out) {
      timed_out = true;
      kill(pid, SIGKILL);
    }
    if (timed_out && --grace_rounds < 0) break;
    int rc = poll(fds, 2, timed_out ? 100 : static_cast<int>(left.count()) + 1);
    if (rc < 0 && errno == EINTR) continue;
    for (int i = 0; i < 2; ++i) {
      if (!open_fd[i] || !(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
      ssize_t n = read(fds[i].fd, buf, sizeof buf);
      if (n > 0) {
        (i == 0 ? out_text : err_text).append(buf, static_cast<size_t>(n));
      } else {
        open_fd[i] = false;
        fds[i].fd = -1;
      }
    }
    if (rc == 0 && timed_out) break;
  }
  close(outp[0]);
  close(errp[0]);
  int status = 0;
  waitpid(pid, &status, 0);
  unlink(path);

  if (timed_out) return Result<ExternalRun>::failure("external driver timed out");
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
    return Result<ExternalRun>::failure(
        "external driver failed (status " +
        std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1) +
        "): " + err_text);

  ExternalRun run;
  run.raw_stdout = out_text;
  size_t eol = out_text.find('\n');
  std::string_view first(out_text.data(),
                         eol == std::string::npos ? out_text.size() : eol);
  first = trim(first);
  size_t pos = 0;
  if (parse_i64(first, run.distance)) {
    run.has_distance = true;
    pos = (eol == std::string::npos) ? out_text.size() : eol + 1;
  } else if (!first.empty() && split_ws(first)[0] == "CHECK") {
    // Layout-check traces have no fst/snd, so line 1 is already a CHECK line.
    run.has_distance = false;
  } else {
    return Result<ExternalRun>::failure("external driver output is not a distance: " +
                                        std::string(first));
  }
  while (pos < out_text.size()) {
    size_t nl = out_text.find('\n', pos);
    std::string_view line(out_text.data() + pos,
                          (nl == std::string::npos ? out_text.size() : nl) - pos);
    pos = (nl == std::string::npos) ? out_text.size() : nl + 1;
    line = trim(line);
    auto parts = split_ws(line);
    if (parts.size() == 4 && parts[0] == "CHECK") {
      CheckOutcome c;
      c.id_x = std::string(parts[1]);
      c.id_y = std::string(parts[2]);
      int64_t v;
      if (parse_i64(parts[3], v)) c.got = v;
      run.check_lines.push_back(std::move(c));
    }
  }
  return run;
}

}  // namespace heapsieve
