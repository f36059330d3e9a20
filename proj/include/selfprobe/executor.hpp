#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include "selfprobe/core.hpp"

namespace selfprobe::executor {

/// How one (candidate, test) program is run. The candidate source and the test
/// harness are concatenated into a single file inside a fresh scratch
/// directory, which is removed afterwards.
struct SandboxPolicy {
    int time_limit_ms = 5000;
    int memory_limit_mb = 512;
    /// Whitespace-separated argv; `{program}` expands to the program file path
    /// and `{workdir}` to the scratch directory.
    std::string interpreter_command = "python3 {program}";
    std::string program_filename = "main.py";
    bool network_allowed = false;
    /// Root under which per-execution scratch directories are created.
    std::filesystem::path scratch_root = std::filesystem::temp_directory_path();
    /// Exit codes that a harness uses to report "could not execute" rather than
    /// "wrong answer"; they map to status=error instead of fail.
    std::vector<int> error_exit_codes;

    /// Throws Error{InvalidArgument} when a limit is not positive or the
    /// command template is empty.
    void validate() const;
};

/// Delay between the termination signal and the hard kill of a timed-out run.
inline constexpr int kKillGraceMs = 500;

/// Expands the interpreter template into argv for the given program file.
std::vector<std::string> expand_command(const SandboxPolicy& policy, const std::filesystem::path& program,
                                        const std::filesystem::path& workdir);

/// Throws Error{SandboxUnavailable} when the interpreter cannot be resolved
/// (not an executable path and not found on PATH).
void check_sandbox(const SandboxPolicy& policy);

/// Runs candidate + harness once. Throws Error{MismatchedProblem} when the two
/// belong to different problems and Error{SandboxUnavailable} when the
/// interpreter does not resolve. Safe to call concurrently.
ExecutionOutcome execute_one(const Candidate& candidate, const TestCase& test, const SandboxPolicy& policy);

/// Runs every candidate against every test on `parallelism` workers. Returns
/// |candidates| * |tests| outcomes sorted by (candidate_id, ordinal).
std::vector<ExecutionOutcome> execute_pool(const std::vector<Candidate>& candidates,
                                           const std::vector<TestCase>& tests, const SandboxPolicy& policy,
                                           int parallelism);

/// Bit j = 1 iff the outcome at ordinal j passed. Outcomes must belong to one
/// candidate and cover ordinals 0..suite_size-1 exactly once; otherwise
/// Error{IncompleteOutcomes}.
ExecutionSignature signature_of(const std::vector<ExecutionOutcome>& outcomes, std::size_t suite_size);

/// Fraction of outcomes that are not error/timeout. Error{EmptyOutcomes} on empty input.
double execution_success_rate(const std::vector<ExecutionOutcome>& outcomes);

/// Fraction of outcomes with status=pass. Error{EmptyOutcomes} on empty input.
double pass_fraction(const std::vector<ExecutionOutcome>& outcomes);

/// Process-wide cancellation flag. Once set, running executions are killed and
/// pending ones are not started (execute_pool throws Error{Cancelled}).
void request_cancel() noexcept;
void reset_cancel() noexcept;
[[nodiscard]] bool cancel_requested() noexcept;

}  // namespace selfprobe::executor
