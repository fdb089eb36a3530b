#pragma once

// Runs candidate programs against unit tests in throwaway subprocess
// sandboxes and classifies each run into one of the four situations.
//
// Isolation is a separate process group with its own scratch directory,
// rlimits (address space, CPU, file size, no core dumps), a scrubbed
// environment, and a private network namespace when the kernel allows an
// unprivileged one. This is not a security boundary: candidate code is
// untrusted and should only be run on a disposable machine or container.
//
// POSIX only.

#include <fcntl.h>
#include <poll.h>
#include <sched.h>
#include <signal.h>
#include <sys/resource.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "rrtf/common.hpp"
#include "rrtf/datamodel.hpp"

namespace rrtf {

// ---------------------------------------------------------------------------
// Code extraction

/// Returns the concatenation (newline-joined, in order) of every fenced code
/// block in raw_text, or raw_text itself when it contains no fence. An
/// unterminated final fence runs to the end of the text.
inline std::string extract_code(std::string_view raw_text) {
  constexpr std::string_view kFence = "```";
  auto open = raw_text.find(kFence);
  if (open == std::string_view::npos) return std::string(raw_text);

  std::vector<std::string_view> blocks;
  while (open != std::string_view::npos) {
    auto body = open + kFence.size();
    const auto close = raw_text.find(kFence, body);
    const auto eol = raw_text.find('\n', body);
    // The rest of the opening line is an info string ("```python").
    if (eol != std::string_view::npos && (close == std::string_view::npos || eol < close)) body = eol + 1;
    auto end = close == std::string_view::npos ? raw_text.size() : close;
    auto block = raw_text.substr(body, end - body);
    // Drop the line break (and any fence indentation) before the closing fence.
    const auto last_nl = block.find_last_of('\n');
    if (last_nl != std::string_view::npos &&
        block.find_first_not_of(" \t", last_nl + 1) == std::string_view::npos)
      block = block.substr(0, last_nl);
    blocks.push_back(block);
    if (close == std::string_view::npos) break;
    open = raw_text.find(kFence, close + kFence.size());
  }
  std::string out;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (i) out += '\n';
    out += blocks[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

struct SandboxLimits {
  int wall_timeout_ms = 10000;
  int memory_limit_mb = 512;
  int max_output_bytes = 65536;

  void validate() const {
    if (wall_timeout_ms <= 0 || memory_limit_mb <= 0 || max_output_bytes <= 0)
      throw ConfigError("sandbox limits must be strictly positive");
  }
};

/// How to check and run a program in the candidate language. "{file}" in an
/// argument is replaced by the program file name (relative to the sandbox
/// directory). An empty check_args skips the compile phase.
struct RunnerSpec {
  std::string program = "python3";
  std::vector<std::string> check_args = {
      "-I", "-B", "-c", "import sys; compile(open(sys.argv[1], encoding='utf-8').read(), sys.argv[1], 'exec')",
      "{file}"};
  std::vector<std::string> run_args = {"-I", "-B", "{file}"};
  std::string file_name = "candidate.py";
  std::string test_separator = "\n\n";
};

struct SandboxOptions {
  std::filesystem::path root = std::filesystem::temp_directory_path() / "rrtf-sandbox";
  bool keep_failures = false;
};

inline constexpr std::string_view kTimeoutMarker = "[timeout]";

// ---------------------------------------------------------------------------
// Subprocess

struct ProcessResult {
  int exit_code = -1;
  int term_signal = 0;
  bool timed_out = false;
  std::string out;
  std::string err;
  std::int64_t wall_ms = 0;

  bool ok() const { return !timed_out && term_signal == 0 && exit_code == 0; }
};

/// Resolves a program name against PATH; empty result when not found.
inline std::filesystem::path find_executable(const std::string& program) {
  namespace fs = std::filesystem;
  auto runnable = [](const fs::path& p) { return ::access(p.c_str(), X_OK) == 0 && !fs::is_directory(p); };
  if (program.find('/') != std::string::npos) return runnable(program) ? fs::path(program) : fs::path{};
  const char* path = std::getenv("PATH");
  std::string_view dirs = path ? path : "/usr/local/bin:/usr/bin:/bin";
  while (!dirs.empty()) {
    const auto colon = dirs.find(':');
    const auto dir = dirs.substr(0, colon);
    if (!dir.empty()) {
      const auto candidate = fs::path(std::string(dir)) / program;
      if (runnable(candidate)) return candidate;
    }
    if (colon == std::string_view::npos) break;
    dirs.remove_prefix(colon + 1);
  }
  return {};
}

namespace detail {

inline void set_limit(int resource, rlim_t value) {
  rlimit rl{value, value};
  ::setrlimit(resource, &rl);
}

}  // namespace detail

/// Runs argv[0] (an absolute path) in cwd with the given limits. Captures at
/// most limits.max_output_bytes of each stream; the rest is drained.
inline ProcessResult run_process(const std::vector<std::string>& argv, const std::filesystem::path& cwd,
                                 const SandboxLimits& limits) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();

  // Everything the child needs is prepared before fork; after fork only
  // async-signal-safe calls are made.
  std::vector<char*> cargv;
  for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
  cargv.push_back(nullptr);
  const std::string home = "HOME=" + cwd.string();
  std::vector<std::string> env_storage = {"PATH=/usr/local/bin:/usr/bin:/bin", home, "LANG=C.UTF-8",
                                          "PYTHONDONTWRITEBYTECODE=1", "PYTHONHASHSEED=0"};
  std::vector<char*> cenv;
  for (auto& e : env_storage) cenv.push_back(e.data());
  cenv.push_back(nullptr);
  const std::string cwd_str = cwd.string();
  const auto mem_bytes = static_cast<rlim_t>(limits.memory_limit_mb) * 1024 * 1024;
  const auto cpu_seconds = static_cast<rlim_t>(limits.wall_timeout_ms / 1000 + 2);
  const auto fsize = static_cast<rlim_t>(std::max(limits.max_output_bytes, 1 << 20)) * 16;

  int out_pipe[2], err_pipe[2], exec_pipe[2];
  if (::pipe2(out_pipe, O_CLOEXEC) != 0 || ::pipe2(err_pipe, O_CLOEXEC) != 0 || ::pipe2(exec_pipe, O_CLOEXEC) != 0)
    throw Error(std::string("pipe failed: ") + std::strerror(errno));

  const pid_t pid = ::fork();
  if (pid < 0) throw Error(std::string("fork failed: ") + std::strerror(errno));
  if (pid == 0) {
    ::setpgid(0, 0);
    const int devnull = ::open("/dev/null", O_RDONLY);
    if (devnull >= 0) ::dup2(devnull, STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::dup2(err_pipe[1], STDERR_FILENO);
    if (::chdir(cwd_str.c_str()) != 0) ::_exit(126);
    // Best effort: fails without user-namespace support, which is fine.
    if (::unshare(CLONE_NEWUSER | CLONE_NEWNET) != 0) (void)::unshare(CLONE_NEWNET);
    detail::set_limit(RLIMIT_AS, mem_bytes);
    detail::set_limit(RLIMIT_CPU, cpu_seconds);
    detail::set_limit(RLIMIT_FSIZE, fsize);
    detail::set_limit(RLIMIT_CORE, 0);
    ::execve(cargv[0], cargv.data(), cenv.data());
    const int code = errno;
    (void)!::write(exec_pipe[1], &code, sizeof code);
    ::_exit(127);
  }
  ::setpgid(pid, pid);
  ::close(out_pipe[1]);
  ::close(err_pipe[1]);
  ::close(exec_pipe[1]);

  ProcessResult result;
  const auto cap = static_cast<std::size_t>(limits.max_output_bytes);
  const auto deadline = start + std::chrono::milliseconds(limits.wall_timeout_ms);
  pollfd fds[2] = {{out_pipe[0], POLLIN, 0}, {err_pipe[0], POLLIN, 0}};
  std::string* sinks[2] = {&result.out, &result.err};
  int open_fds = 2;
  char buf[8192];
  bool child_done = false;
  int status = 0;
  while (open_fds > 0 || !child_done) {
    if (!child_done && ::waitpid(pid, &status, WNOHANG) == pid) child_done = true;
    const auto now = clock::now();
    if (now >= deadline) {
      result.timed_out = !child_done;
      break;
    }
    if (open_fds == 0) {
      // Output closed but the child has not exited yet.
      ::usleep(1000);
      continue;
    }
    const auto wait_ms = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count();
    const int rc = ::poll(fds, 2, static_cast<int>(std::min<long long>(wait_ms, child_done ? 50 : 20)));
    if (rc < 0 && errno != EINTR) break;
    for (int i = 0; i < 2; ++i) {
      if (fds[i].fd < 0 || !(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
      const auto n = ::read(fds[i].fd, buf, sizeof buf);
      if (n <= 0) {
        ::close(fds[i].fd);
        fds[i].fd = -1;
        --open_fds;
        continue;
      }
      auto& sink = *sinks[i];
      if (sink.size() < cap) sink.append(buf, std::min(static_cast<std::size_t>(n), cap - sink.size()));
    }
    // A finished child whose descendants keep the pipes open: stop reading.
    if (child_done && rc == 0) break;
  }
  // Kill whatever remains of the process group, then reap.
  ::kill(-pid, SIGKILL);
  if (!child_done) ::waitpid(pid, &status, 0);
  for (auto& f : fds)
    if (f.fd >= 0) ::close(f.fd);

  int exec_errno = 0;
  const bool exec_failed = ::read(exec_pipe[0], &exec_errno, sizeof exec_errno) == sizeof exec_errno;
  ::close(exec_pipe[0]);
  if (exec_failed)
    throw ConfigError("cannot execute '" + argv.front() + "': " + std::strerror(exec_errno));

  if (!result.timed_out) {
    if (WIFEXITED(status)) result.exit_code = WEXITSTATUS(status);
    if (WIFSIGNALED(status)) result.term_signal = WTERMSIG(status);
  }
  result.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(clock::now() - start).count();
  return result;
}

// ---------------------------------------------------------------------------
// Classification

namespace detail {

inline std::vector<std::string> expand_args(const std::filesystem::path& program, const std::vector<std::string>& args,
                                            const std::string& file) {
  std::vector<std::string> out{program.string()};
  for (const auto& a : args) {
    std::string s = a;
    for (auto pos = s.find("{file}"); pos != std::string::npos; pos = s.find("{file}", pos + file.size()))
      s.replace(pos, 6, file);
    out.push_back(std::move(s));
  }
  return out;
}

inline void write_file(const std::filesystem::path& p, std::string_view content) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  os.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!os) throw Error("cannot write sandbox file '" + p.string() + "'");
}

inline std::filesystem::path make_sandbox_dir(const std::filesystem::path& root) {
  std::filesystem::create_directories(root);
  std::string templ = (root / "run-XXXXXX").string();
  if (::mkdtemp(templ.data()) == nullptr)
    throw Error("cannot create sandbox directory under '" + root.string() + "': " + std::strerror(errno));
  return templ;
}

inline std::string describe_failure(const ProcessResult& r, const SandboxLimits& limits) {
  std::string s;
  if (r.timed_out)
    s = std::string(kTimeoutMarker) + " exceeded " + std::to_string(limits.wall_timeout_ms) + " ms\n";
  else if (r.term_signal != 0)
    s = "[signal " + std::to_string(r.term_signal) + "]\n";
  else
    s = "[exit " + std::to_string(r.exit_code) + "]\n";
  return s + r.err;
}

}  // namespace detail

/// Runs one candidate: an optional compile/syntax check, then every test in
/// its own fresh process. Throws ConfigError if the runner is missing.
///
///   check fails                     -> CompileError
///   no test passes (incl. timeouts) -> RuntimeError
///   some tests pass                 -> PartialPass
///   every test passes               -> AllPass
inline ExecutionOutcome run_candidate(std::string_view code, const std::vector<TestCase>& tests,
                                      const SandboxLimits& limits, const RunnerSpec& runner = {},
                                      const SandboxOptions& sandbox = {}) {
  limits.validate();
  if (tests.empty()) throw ContractError("run_candidate requires at least one test case");
  const auto program = find_executable(runner.program);
  if (program.empty()) throw ConfigError("runner executable '" + runner.program + "' not found on PATH");

  const auto start = std::chrono::steady_clock::now();
  const auto dir = detail::make_sandbox_dir(sandbox.root);
  const auto cap = static_cast<std::size_t>(limits.max_output_bytes);
  auto elapsed = [&] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
  };

  ExecutionOutcome outcome;
  try {
    bool compiled = true;
    if (!runner.check_args.empty()) {
      const auto check_dir = dir / "check";
      std::filesystem::create_directory(check_dir);
      detail::write_file(check_dir / runner.file_name, code);
      const auto r = run_process(detail::expand_args(program, runner.check_args, runner.file_name), check_dir, limits);
      if (!r.ok()) {
        compiled = false;
        auto msg = truncate_output(detail::describe_failure(r, limits), cap);
        const auto total = static_cast<int>(tests.size());
        outcome = r.timed_out ? ExecutionOutcome::runtime_error(std::move(msg), elapsed(), total)
                              : ExecutionOutcome::compile_error(std::move(msg), elapsed(), total);
      }
    }
    if (compiled) {
      int passed = 0;
      std::string diagnostics;
      for (std::size_t i = 0; i < tests.size(); ++i) {
        const auto test_dir = dir / ("test-" + std::to_string(i));
        std::filesystem::create_directory(test_dir);
        std::string source(code);
        source += runner.test_separator;
        source += tests[i].code;
        source += '\n';
        detail::write_file(test_dir / runner.file_name, source);
        const auto r = run_process(detail::expand_args(program, runner.run_args, runner.file_name), test_dir, limits);
        if (r.ok()) {
          ++passed;
        } else if (diagnostics.size() < cap) {
          diagnostics += "test " + std::to_string(i) + ": " + detail::describe_failure(r, limits);
          if (!diagnostics.empty() && diagnostics.back() != '\n') diagnostics += '\n';
        }
      }
      const int total = static_cast<int>(tests.size());
      auto msg = truncate_output(diagnostics, cap);
      if (passed == 0)
        outcome = ExecutionOutcome::runtime_error(std::move(msg), elapsed(), total);
      else if (passed < total)
        outcome = ExecutionOutcome::partial_pass(passed, total, elapsed(), std::move(msg));
      else
        outcome = ExecutionOutcome::all_pass(total, elapsed(), std::move(msg));
    }
  } catch (...) {
    std::error_code ec;
    std::filesystem::remove_all(dir, ec);
    throw;
  }
  if (!(sandbox.keep_failures && outcome.situation() != Situation::AllPass)) {
    std::error_code ec;
    std::filesystem::remove_all(dir, ec);
  }
  return outcome;
}

/// Executes every candidate against its problem's tests on a bounded worker
/// pool. The result has one record per candidate, in input order.
/// Unresolvable problems or problems without tests yield an error record.
inline std::vector<OutcomeRecord> execute_batch(const std::vector<CandidateResponse>& candidates,
                                                const std::map<std::string, ProgrammingProblem>& problems,
                                                const SandboxLimits& limits, std::size_t workers,
                                                const RunnerSpec& runner = {}, const SandboxOptions& sandbox = {}) {
  limits.validate();
  if (workers < 1) throw ConfigError("workers must be positive");
  if (find_executable(runner.program).empty())
    throw ConfigError("runner executable '" + runner.program + "' not found on PATH");

  std::vector<OutcomeRecord> results(candidates.size());
  parallel_for(candidates.size(), workers, [&](std::size_t i) {
    const auto& cand = candidates[i];
    auto& rec = results[i];
    rec.candidate_id = cand.id;
    const auto it = problems.find(cand.problem_id);
    if (it == problems.end()) {
      rec.error = "unknown problem_id '" + cand.problem_id + "'";
      return;
    }
    if (it->second.tests.empty()) {
      rec.error = "problem '" + cand.problem_id + "' has no tests";
      return;
    }
    rec.outcome = run_candidate(cand.extracted_code, it->second.tests, limits, runner, sandbox);
  });
  return results;
}

}  // namespace rrtf
