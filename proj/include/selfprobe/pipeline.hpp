#pragma once

// One self-training iteration end to end: generate problems, tests and
// solutions, execute, select, and emit the SFT dataset. Training itself is
// external; this module only produces and bookkeeps the data.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "selfprobe/consensus.hpp"
#include "selfprobe/core.hpp"
#include "selfprobe/executor.hpp"
#include "selfprobe/genclient.hpp"
#include "selfprobe/jsonl.hpp"

namespace selfprobe::pipeline {

struct PipelineConfig {
    int problems_per_iteration = 10;
    int tests_per_problem = 100;
    int candidates_per_problem = 128;
    consensus::SelectionConfig selection{};
    executor::SandboxPolicy sandbox{};
    int max_iterations = 6;
    int early_stop_patience = 2;
    std::filesystem::path output_root = "runs";
    int problem_parallelism = 4;     // problems processed at once
    int execution_parallelism = 0;   // executions per problem; 0: hardware concurrency

    /// Throws InvalidArgument unless every count is >= 1 and the nested
    /// selection and sandbox settings are valid.
    void validate() const;
};

enum class BackendKind { stub, http };

struct ValidationConfig {
    bool enabled = true;
    /// Held-out corpus for the http backend. The stub backend brings its own.
    std::optional<std::filesystem::path> problems_path;
    std::optional<std::filesystem::path> tests_path;
};

struct AnalyzerSection {
    std::optional<std::filesystem::path> data_dir;
    int workers = 0;
};

/// Everything a run needs, as read from the single config document with
/// sections pipeline / selection / sandbox / generation / stub / validation /
/// analyzer. Secrets are never part of it: the generation section only names
/// the environment variable that holds the key.
struct RunConfig {
    PipelineConfig pipeline{};
    BackendKind backend = BackendKind::stub;
    genclient::GenEndpointConfig generation{};
    std::optional<std::filesystem::path> templates_dir;
    genclient::StubOptions stub{};
    ValidationConfig validation{};
    AnalyzerSection analyzer{};

    void validate() const;
};

/// Unknown sections or keys throw InvalidArgument, bad values ParseError or
/// InvalidArgument. With the stub backend and no explicit error_exit_codes,
/// the sandbox treats the stub harness's error exit code as an execution error.
RunConfig run_config_from_json(const json& document);
RunConfig load_run_config(const std::filesystem::path& path);
json to_json(const RunConfig& cfg);
/// Hex hash over the canonical JSON form.
std::string config_hash(const RunConfig& cfg);

/// Applies a global seed to every seeded component (stub replies and
/// selection draws).
void apply_seed(RunConfig& cfg, std::uint64_t seed);

std::unique_ptr<genclient::Backend> make_backend(const RunConfig& cfg);
genclient::TemplateSet load_templates(const RunConfig& cfg);

// ---------------------------------------------------------------------------
// Stage helpers shared by the loop and the single-stage commands

/// Selection view of one problem's pool. `outcomes` may hold other problems'
/// outcomes; candidates without a complete outcome set throw IncompleteOutcomes.
std::vector<consensus::PoolMember> build_pool(const std::vector<Candidate>& candidates,
                                              const std::vector<TestCase>& tests,
                                              const std::vector<ExecutionOutcome>& outcomes);

/// Selection for every problem with at least one test, in problem order.
/// Each problem's draws use a seed derived from cfg.rng_seed and its id.
std::vector<SelectionResult> select_corpus(const Corpus& corpus, const std::vector<ExecutionOutcome>& outcomes,
                                           const consensus::SelectionConfig& cfg);

/// One record per accepted selection, in selection order. Throws
/// UnknownCandidate when a selection names a candidate or problem not in the corpus.
std::vector<SftRecord> build_sft(const std::vector<Problem>& problems, const std::vector<Candidate>& candidates,
                                 const std::vector<SelectionResult>& selections, int iteration);

// ---------------------------------------------------------------------------
// Iterations

/// Held-out problems scored with one greedy sample each.
struct Validator {
    Corpus held_out;
    executor::SandboxPolicy sandbox;
};

/// Fraction of held-out problems whose temperature-0 sample passes every test.
double validation_score(const Validator& validator, genclient::Backend& backend,
                        const genclient::TemplateSet& templates, const genclient::GenEndpointConfig& gen,
                        int iteration);

/// Builds the validator a config asks for, or nothing when validation is off.
std::optional<Validator> make_validator(const RunConfig& cfg);

struct ProblemFailure {
    std::string problem_id;
    std::string reason;
};

struct IterationOutcome {
    IterationRecord record;
    std::vector<ProblemFailure> failures;  // problems dropped mid-iteration
    std::vector<SelectionResult> rejected;
    int problems_dropped = 0;              // malformed generation replies
    bool selected_mean_below_pool = false; // mean_e of selected < pool mean (logged)

    [[nodiscard]] bool partial() const noexcept { return !failures.empty(); }
};

std::filesystem::path iteration_dir(const std::filesystem::path& output_root, int iteration);
inline constexpr const char* kDoneMarker = "DONE";
inline constexpr const char* kPartialMarker = "PARTIAL";

/// Runs iteration t into `{output_root}/iter-{t}/`. Throws IterationExists
/// when the directory already exists; prior iterations are never touched.
/// Any exception leaves a PARTIAL marker and no DONE marker, and nothing is
/// appended to iterations.jsonl.
IterationOutcome run_iteration(int t, const PipelineConfig& cfg, genclient::Backend& backend,
                               const genclient::TemplateSet& templates, const genclient::GenEndpointConfig& gen,
                               const Validator* validator = nullptr);

/// True once validation_score has failed to beat its running maximum for
/// `patience` consecutive scored records. Unscored records are skipped.
/// Throws PreconditionViolated for an empty list.
bool should_stop(const std::vector<IterationRecord>& records, int patience);

struct LoopOutcome {
    std::vector<IterationOutcome> iterations;
    bool stopped_early = false;
};

/// Iterations first..first+count-1 (count defaults to max_iterations),
/// stopping early per should_stop.
LoopOutcome run_loop(const PipelineConfig& cfg, genclient::Backend& backend, const genclient::TemplateSet& templates,
                     const genclient::GenEndpointConfig& gen, const Validator* validator, int first = 0,
                     std::optional<int> count = std::nullopt);

/// Writes `{output_root}/sft-consolidated.jsonl` from the listed iterations in
/// ascending order. With dedup, exact (instruction, response) duplicates keep
/// the earliest record. Throws PreconditionViolated for an empty list and
/// IncompleteIteration for a directory without DONE.
std::filesystem::path consolidate_dataset(const std::filesystem::path& output_root, std::vector<int> iterations,
                                          bool dedup);

/// Records appended so far, in file order.
std::vector<IterationRecord> read_iteration_log(const std::filesystem::path& output_root);

/// 0 success, 2 partial, 3 fatal.
inline constexpr int kExitOk = 0;
inline constexpr int kExitPartial = 2;
inline constexpr int kExitFatal = 3;

}  // namespace selfprobe::pipeline
