#include "selfprobe/executor.hpp"

#include <fcntl.h>
#include <poll.h>
#include <sched.h>
#include <signal.h>
#include <sys/resource.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <thread>

#include "selfprobe/error.hpp"
#include "selfprobe/parallel.hpp"

extern char** environ;

namespace selfprobe::executor {

namespace {

std::atomic<bool> g_cancel{false};

using Clock = std::chrono::steady_clock;

std::int64_t elapsed_ms(Clock::time_point start) {
    return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start).count();
}

bool is_executable(const std::filesystem::path& p) {
    struct stat st {};
    return ::stat(p.c_str(), &st) == 0 && S_ISREG(st.st_mode) && ::access(p.c_str(), X_OK) == 0;
}

std::optional<std::filesystem::path> resolve_executable(const std::string& name) {
    if (name.find('/') != std::string::npos) {
        if (is_executable(name)) return std::filesystem::path(name);
        return std::nullopt;
    }
    const char* path_env = std::getenv("PATH");
    std::string path = path_env ? path_env : "/usr/local/bin:/usr/bin:/bin";
    std::stringstream ss(path);
    std::string dir;
    while (std::getline(ss, dir, ':')) {
        if (dir.empty()) dir = ".";
        auto candidate = std::filesystem::path(dir) / name;
        if (is_executable(candidate)) return candidate;
    }
    return std::nullopt;
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
    for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
        s.replace(pos, from.size(), to);
    }
}

class ScratchDir {
public:
    explicit ScratchDir(const std::filesystem::path& root) {
        std::filesystem::create_directories(root);
        std::string tmpl = (root / "sp-XXXXXX").string();
        if (::mkdtemp(tmpl.data()) == nullptr) {
            throw Error(ErrorCode::SandboxUnavailable,
                        "cannot create scratch directory under " + root.string() + ": " + std::strerror(errno));
        }
        path_ = tmpl;
    }
    ~ScratchDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    ScratchDir(const ScratchDir&) = delete;
    ScratchDir& operator=(const ScratchDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
};

class Fd {
public:
    Fd() = default;
    explicit Fd(int fd) : fd_(fd) {}
    ~Fd() { reset(); }
    Fd(Fd&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
    Fd& operator=(Fd&& other) noexcept {
        if (this != &other) {
            reset();
            fd_ = std::exchange(other.fd_, -1);
        }
        return *this;
    }
    void reset() {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }
    [[nodiscard]] int get() const noexcept { return fd_; }

private:
    int fd_ = -1;
};

std::pair<Fd, Fd> make_pipe() {
    int fds[2];
    if (::pipe2(fds, O_CLOEXEC) != 0) {
        throw Error(ErrorCode::SandboxUnavailable, std::string("pipe2 failed: ") + std::strerror(errno));
    }
    return {Fd(fds[0]), Fd(fds[1])};
}

/// Resident set size in MiB, or nullopt when /proc is unavailable.
std::optional<long> resident_mb(pid_t pid) {
    std::ifstream statm("/proc/" + std::to_string(pid) + "/statm");
    long size = 0, resident = 0;
    if (!(statm >> size >> resident)) return std::nullopt;
    return resident * (::sysconf(_SC_PAGESIZE) / 1024) / 1024;
}

bool reap(pid_t pid, int& wstatus, bool block) {
    for (;;) {
        pid_t r = ::waitpid(pid, &wstatus, block ? 0 : WNOHANG);
        if (r == pid) return true;
        if (r == 0) return false;
        if (errno != EINTR) return true;  // already reaped; nothing to wait for
    }
}

struct RunResult {
    enum class Kind { exited, signaled, timed_out, launch_failed, memory_exceeded, cancelled } kind;
    int code = 0;
    std::int64_t duration_ms = 0;
    std::string output;
};

RunResult run_program(const std::vector<std::string>& argv, const std::filesystem::path& exe,
                      const std::filesystem::path& workdir, const SandboxPolicy& policy) {
    std::vector<char*> cargv;
    cargv.reserve(argv.size() + 1);
    for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
    cargv.push_back(nullptr);
    const std::string exe_str = exe.string();
    const std::string dir_str = workdir.string();
    const rlim_t mem_bytes = static_cast<rlim_t>(policy.memory_limit_mb) * 1024 * 1024;

    auto [out_r, out_w] = make_pipe();
    auto [err_r, err_w] = make_pipe();

    const auto start = Clock::now();
    pid_t pid = ::fork();
    if (pid < 0) {
        return {RunResult::Kind::launch_failed, errno, 0, std::string("fork failed: ") + std::strerror(errno)};
    }
    if (pid == 0) {
        // Child: only async-signal-safe calls from here to exec.
        ::setpgid(0, 0);
        int devnull = ::open("/dev/null", O_RDONLY);
        if (devnull >= 0) ::dup2(devnull, STDIN_FILENO);
        ::dup2(out_w.get(), STDOUT_FILENO);
        ::dup2(out_w.get(), STDERR_FILENO);
        struct rlimit mem {mem_bytes, mem_bytes};
        ::setrlimit(RLIMIT_AS, &mem);
        struct rlimit core {0, 0};
        ::setrlimit(RLIMIT_CORE, &core);
        if (!policy.network_allowed) ::unshare(CLONE_NEWNET);  // best effort; needs privileges
        if (::chdir(dir_str.c_str()) == 0) {
            ::execve(exe_str.c_str(), cargv.data(), environ);
        }
        int e = errno;
        ssize_t ignored = ::write(err_w.get(), &e, sizeof e);
        (void)ignored;
        ::_exit(127);
    }
    ::setpgid(pid, pid);  // also set from the parent to avoid racing the child
    out_w.reset();
    err_w.reset();

    int exec_errno = 0;
    ssize_t n;
    do {
        n = ::read(err_r.get(), &exec_errno, sizeof exec_errno);
    } while (n < 0 && errno == EINTR);
    if (n == static_cast<ssize_t>(sizeof exec_errno)) {
        int ws = 0;
        reap(pid, ws, true);
        return {RunResult::Kind::launch_failed, exec_errno, elapsed_ms(start),
                std::string("exec failed: ") + std::strerror(exec_errno)};
    }

    RunResult result{RunResult::Kind::exited, 0, 0, {}};
    bool out_open = true;
    int wstatus = 0;
    bool exited = false;
    char buf[4096];
    const auto deadline = start + std::chrono::milliseconds(policy.time_limit_ms);

    auto drain = [&] {
        for (;;) {
            ssize_t got = ::read(out_r.get(), buf, sizeof buf);
            if (got > 0) {
                if (result.output.size() < kCapturedOutputLimit) {
                    result.output.append(buf, std::min<std::size_t>(static_cast<std::size_t>(got),
                                                                    kCapturedOutputLimit - result.output.size()));
                }
                continue;
            }
            if (got == 0) out_open = false;
            return;
        }
    };

    while (!exited) {
        if (reap(pid, wstatus, false)) {
            exited = true;
            break;
        }
        auto now = Clock::now();
        if (now >= deadline) {
            result.kind = RunResult::Kind::timed_out;
            break;
        }
        if (g_cancel.load()) {
            result.kind = RunResult::Kind::cancelled;
            break;
        }
        if (auto rss = resident_mb(pid); rss && *rss > policy.memory_limit_mb) {
            result.kind = RunResult::Kind::memory_exceeded;
            break;
        }
        auto wait = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count();
        int timeout = static_cast<int>(std::clamp<std::int64_t>(wait, 1, 10));
        if (out_open) {
            pollfd pfd{out_r.get(), POLLIN, 0};
            int pr = ::poll(&pfd, 1, timeout);
            if (pr > 0) {
                ::fcntl(out_r.get(), F_SETFL, O_NONBLOCK);
                drain();
            }
        } else {
            std::this_thread::sleep_for(std::chrono::milliseconds(timeout));
        }
    }

    if (!exited) {
        ::kill(-pid, SIGTERM);
        const auto hard_deadline = Clock::now() + std::chrono::milliseconds(kKillGraceMs);
        while (!reap(pid, wstatus, false) && Clock::now() < hard_deadline) {
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
        }
        ::kill(-pid, SIGKILL);
        reap(pid, wstatus, true);
    } else {
        ::kill(-pid, SIGKILL);  // stray descendants left in the group
    }
    result.duration_ms = elapsed_ms(start);

    if (out_open) {
        ::fcntl(out_r.get(), F_SETFL, O_NONBLOCK);
        drain();
    }

    if (result.kind == RunResult::Kind::exited) {
        if (WIFEXITED(wstatus)) {
            result.code = WEXITSTATUS(wstatus);
        } else if (WIFSIGNALED(wstatus)) {
            result.kind = RunResult::Kind::signaled;
            result.code = WTERMSIG(wstatus);
        }
    }
    return result;
}

}  // namespace

void SandboxPolicy::validate() const {
    if (time_limit_ms <= 0) throw Error(ErrorCode::InvalidArgument, "time_limit_ms must be > 0");
    if (memory_limit_mb <= 0) throw Error(ErrorCode::InvalidArgument, "memory_limit_mb must be > 0");
    if (interpreter_command.find_first_not_of(" \t") == std::string::npos) {
        throw Error(ErrorCode::InvalidArgument, "interpreter_command is empty");
    }
    if (program_filename.empty() || program_filename.find('/') != std::string::npos) {
        throw Error(ErrorCode::InvalidArgument, "program_filename must be a bare file name");
    }
}

std::vector<std::string> expand_command(const SandboxPolicy& policy, const std::filesystem::path& program,
                                        const std::filesystem::path& workdir) {
    std::vector<std::string> argv;
    std::istringstream in(policy.interpreter_command);
    std::string word;
    while (in >> word) {
        replace_all(word, "{program}", program.string());
        replace_all(word, "{workdir}", workdir.string());
        argv.push_back(word);
    }
    return argv;
}

void check_sandbox(const SandboxPolicy& policy) {
    policy.validate();
    std::istringstream in(policy.interpreter_command);
    std::string first;
    in >> first;
    if (first.find('{') != std::string::npos || !resolve_executable(first)) {
        throw Error(ErrorCode::SandboxUnavailable, "interpreter '" + first + "' cannot be resolved");
    }
}

ExecutionOutcome execute_one(const Candidate& candidate, const TestCase& test, const SandboxPolicy& policy) {
    if (candidate.problem_id != test.problem_id) {
        throw Error(ErrorCode::MismatchedProblem,
                    "candidate " + candidate.id + " is for " + candidate.problem_id + ", test " + test.id + " for " +
                        test.problem_id);
    }
    check_sandbox(policy);
    if (g_cancel.load()) throw Error(ErrorCode::Cancelled, "execution cancelled");

    ScratchDir scratch(policy.scratch_root);
    const auto program = scratch.path() / policy.program_filename;
    {
        std::ofstream out(program, std::ios::binary);
        out << candidate.source_code << "\n\n" << test.harness_code << "\n";
        if (!out) throw Error(ErrorCode::SandboxUnavailable, "cannot write " + program.string());
    }
    const auto argv = expand_command(policy, program, scratch.path());
    const auto exe = resolve_executable(argv.front());
    if (!exe) throw Error(ErrorCode::SandboxUnavailable, "interpreter '" + argv.front() + "' cannot be resolved");

    RunResult run = run_program(argv, *exe, scratch.path(), policy);

    ExecutionOutcome outcome;
    outcome.candidate_id = candidate.id;
    outcome.test_id = test.id;
    outcome.ordinal = test.ordinal;
    outcome.duration_ms = run.duration_ms;
    if (!run.output.empty()) {
        // The scratch path is random; masking it keeps outcomes reproducible.
        const std::string where = scratch.path().string();
        for (auto pos = run.output.find(where); pos != std::string::npos; pos = run.output.find(where, pos)) {
            run.output.replace(pos, where.size(), "{workdir}");
        }
        outcome.captured_output = std::move(run.output);
    }

    using Kind = RunResult::Kind;
    switch (run.kind) {
        case Kind::exited:
            if (run.code == 0) {
                outcome.status = ExecStatus::pass;
            } else if (std::find(policy.error_exit_codes.begin(), policy.error_exit_codes.end(), run.code) !=
                       policy.error_exit_codes.end()) {
                outcome.status = ExecStatus::error;
            } else {
                outcome.status = ExecStatus::fail;
            }
            break;
        case Kind::timed_out:
            outcome.status = ExecStatus::timeout;
            outcome.duration_ms = std::max<std::int64_t>(outcome.duration_ms, policy.time_limit_ms);
            break;
        case Kind::cancelled:
            throw Error(ErrorCode::Cancelled, "execution cancelled");
        case Kind::signaled:
        case Kind::launch_failed:
        case Kind::memory_exceeded:
            outcome.status = ExecStatus::error;
            break;
    }
    return outcome;
}

std::vector<ExecutionOutcome> execute_pool(const std::vector<Candidate>& candidates,
                                           const std::vector<TestCase>& tests, const SandboxPolicy& policy,
                                           int parallelism) {
    if (parallelism < 1) throw Error(ErrorCode::InvalidArgument, "parallelism must be >= 1");
    const std::string* problem_id = nullptr;
    auto check_problem = [&](const std::string& pid, const std::string& who) {
        if (!problem_id) {
            problem_id = &pid;
        } else if (*problem_id != pid) {
            throw Error(ErrorCode::MismatchedProblem, who + " belongs to " + pid + ", pool is for " + *problem_id);
        }
    };
    for (const auto& c : candidates) check_problem(c.problem_id, "candidate " + c.id);
    for (const auto& t : tests) check_problem(t.problem_id, "test " + t.id);
    check_sandbox(policy);

    const std::size_t total = candidates.size() * tests.size();
    std::vector<std::optional<ExecutionOutcome>> slots(total);
    parallel_for(total, static_cast<std::size_t>(parallelism), [&](std::size_t i) {
        slots[i] = execute_one(candidates[i / tests.size()], tests[i % tests.size()], policy);
    });

    std::vector<ExecutionOutcome> outcomes;
    outcomes.reserve(total);
    for (auto& slot : slots) outcomes.push_back(std::move(*slot));
    std::sort(outcomes.begin(), outcomes.end(), [](const ExecutionOutcome& a, const ExecutionOutcome& b) {
        return std::tie(a.candidate_id, a.ordinal) < std::tie(b.candidate_id, b.ordinal);
    });
    return outcomes;
}

ExecutionSignature signature_of(const std::vector<ExecutionOutcome>& outcomes, std::size_t suite_size) {
    if (outcomes.size() != suite_size) {
        throw Error(ErrorCode::IncompleteOutcomes, "expected " + std::to_string(suite_size) + " outcomes, got " +
                                                       std::to_string(outcomes.size()));
    }
    std::vector<int> seen(suite_size, 0);
    std::vector<bool> bits(suite_size, false);
    for (const auto& o : outcomes) {
        if (o.candidate_id != outcomes.front().candidate_id) {
            throw Error(ErrorCode::IncompleteOutcomes, "outcomes span more than one candidate");
        }
        if (o.ordinal < 0 || static_cast<std::size_t>(o.ordinal) >= suite_size || seen[o.ordinal]++ > 0) {
            throw Error(ErrorCode::IncompleteOutcomes,
                        "ordinal " + std::to_string(o.ordinal) + " out of range or duplicated");
        }
        bits[o.ordinal] = o.status == ExecStatus::pass;
    }
    return ExecutionSignature(bits);
}

double execution_success_rate(const std::vector<ExecutionOutcome>& outcomes) {
    if (outcomes.empty()) throw Error(ErrorCode::EmptyOutcomes, "no outcomes");
    auto executed = std::count_if(outcomes.begin(), outcomes.end(),
                                  [](const ExecutionOutcome& o) { return !is_bottom(o.status); });
    return static_cast<double>(executed) / static_cast<double>(outcomes.size());
}

double pass_fraction(const std::vector<ExecutionOutcome>& outcomes) {
    if (outcomes.empty()) throw Error(ErrorCode::EmptyOutcomes, "no outcomes");
    auto passed = std::count_if(outcomes.begin(), outcomes.end(),
                                [](const ExecutionOutcome& o) { return o.status == ExecStatus::pass; });
    return static_cast<double>(passed) / static_cast<double>(outcomes.size());
}

void request_cancel() noexcept { g_cancel.store(true); }
void reset_cancel() noexcept { g_cancel.store(false); }
bool cancel_requested() noexcept { return g_cancel.load(); }

}  // namespace selfprobe::executor
