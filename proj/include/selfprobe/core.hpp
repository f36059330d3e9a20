#pragma once

// Shared domain model. Every type here is an immutable-after-construction
// value; nothing holds references into other objects, so copies can be handed
// to worker threads freely.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace selfprobe {

enum class Difficulty { easy, medium, hard };
enum class ExecStatus { pass, fail, error, timeout };
enum class SelectionStrategy { consensus, random, cluster, low_ppl, success_rate };
enum class RejectionReason { all_filtered, no_nontrivial_cluster, empty_pool };

std::string_view to_string(Difficulty d) noexcept;
std::string_view to_string(ExecStatus s) noexcept;
std::string_view to_string(SelectionStrategy s) noexcept;
std::string_view to_string(RejectionReason r) noexcept;

// Parsers throw Error{InvalidArgument} on unknown names.
Difficulty parse_difficulty(std::string_view name);
ExecStatus parse_exec_status(std::string_view name);
SelectionStrategy parse_selection_strategy(std::string_view name);
RejectionReason parse_rejection_reason(std::string_view name);

/// Executions that produced no verdict (the bottom outcome).
constexpr bool is_bottom(ExecStatus s) noexcept {
    return s == ExecStatus::error || s == ExecStatus::timeout;
}

struct Problem {
    std::string id;
    std::string title;
    std::string description;
    std::string function_signature;
    Difficulty difficulty = Difficulty::medium;
    double difficulty_rating = 5.0;  // [0, 10]
    std::optional<std::string> skeleton;
    std::optional<std::string> category;
    int iteration_born = 0;

    bool operator==(const Problem&) const = default;
};

struct TestCase {
    std::string id;
    std::string problem_id;
    std::string harness_code;
    int ordinal = 0;  // position in the suite; defines signature bit order

    bool operator==(const TestCase&) const = default;
};

struct SamplingMeta {
    double temperature = 0.0;
    double top_p = 1.0;
    int sample_index = 0;

    bool operator==(const SamplingMeta&) const = default;
};

struct Candidate {
    std::string id;
    std::string problem_id;
    std::string source_code;
    std::optional<std::vector<double>> token_logprobs;  // natural log, each <= 0
    SamplingMeta sampling_meta;
    int iteration_born = 0;

    bool operator==(const Candidate&) const = default;
};

/// captured_output is capped at this many bytes.
inline constexpr std::size_t kCapturedOutputLimit = 4096;

struct ExecutionOutcome {
    std::string candidate_id;
    std::string test_id;
    int ordinal = 0;
    ExecStatus status = ExecStatus::error;
    std::int64_t duration_ms = 0;
    std::optional<std::string> captured_output;

    bool operator==(const ExecutionOutcome&) const = default;
};

/// Ordered pass bit-vector over a problem's test suite. Bit j is set iff the
/// candidate passed the test with ordinal j. Ordering is lexicographic over the
/// bits, which coincides with ordering of the "0101" text form.
class ExecutionSignature {
public:
    ExecutionSignature() = default;
    explicit ExecutionSignature(const std::vector<bool>& bits);

    /// Accepts a string of '0'/'1'; throws Error{InvalidArgument} otherwise.
    static ExecutionSignature from_string(std::string_view text);
    static ExecutionSignature all_ones(std::size_t m) { return from_string(std::string(m, '1')); }

    [[nodiscard]] std::size_t size() const noexcept { return bits_.size(); }
    [[nodiscard]] bool operator[](std::size_t j) const noexcept { return bits_[j] == '1'; }
    [[nodiscard]] bool all_pass() const noexcept;
    [[nodiscard]] std::size_t pass_count() const noexcept;
    [[nodiscard]] const std::string& str() const noexcept { return bits_; }

    /// Appends one bit; used when a test is added to an existing suite.
    void push_back(bool bit) { bits_.push_back(bit ? '1' : '0'); }

    auto operator<=>(const ExecutionSignature&) const = default;

private:
    std::string bits_;
};

struct QualityScores {
    double e = 0.0;                // execution success rate
    int s = 1;                     // consensus strength (own cluster size)
    std::optional<double> f;       // perplexity, >= 1 when present

    bool operator==(const QualityScores&) const = default;
};

struct ConsensusCluster {
    ExecutionSignature signature;
    std::vector<std::string> member_ids;

    [[nodiscard]] std::size_t size() const noexcept { return member_ids.size(); }
    bool operator==(const ConsensusCluster&) const = default;
};

struct SelectionResult {
    std::string problem_id;
    SelectionStrategy strategy = SelectionStrategy::consensus;
    std::optional<std::string> selected;
    std::optional<ConsensusCluster> cluster;
    std::optional<QualityScores> scores;
    std::optional<RejectionReason> rejection_reason;

    [[nodiscard]] bool accepted() const noexcept { return selected.has_value(); }
    bool operator==(const SelectionResult&) const = default;
};

struct SftRecord {
    std::string instruction;
    std::string response;
    std::string problem_id;
    std::string candidate_id;
    int iteration = 0;
    SelectionStrategy selection_strategy = SelectionStrategy::consensus;
    QualityScores quality;

    bool operator==(const SftRecord&) const = default;
};

struct IterationRecord {
    int iteration = 0;
    int problems_count = 0;
    int candidates_count = 0;
    int selected_count = 0;
    double mean_e = 0.0;        // over selected candidates
    double mean_f = 0.0;        // over selected candidates that carry f; 0 when none do
    double pool_mean_e = 0.0;   // over every executed candidate
    std::string dataset_path;
    std::optional<double> validation_score;

    bool operator==(const IterationRecord&) const = default;
};

/// The instruction text of an SFT pair: description followed by the entry-point contract.
std::string make_instruction(const Problem& problem);

// ---------------------------------------------------------------------------
// Corpus integrity

struct Corpus {
    std::vector<Problem> problems;
    std::vector<TestCase> tests;
    std::vector<Candidate> candidates;

    bool operator==(const Corpus&) const = default;
};

enum class ViolationKind {
    duplicate_id,
    dangling_problem_id,
    ordinal_gap,
    duplicate_ordinal,
    empty_field,
    out_of_range,
};

std::string_view to_string(ViolationKind k) noexcept;

struct Violation {
    ViolationKind kind;
    std::string subject_id;
    std::string message;
};

struct ValidationReport {
    std::vector<Violation> violations;
    [[nodiscard]] bool ok() const noexcept { return violations.empty(); }
};

/// Referential-integrity and invariant check. Violations are returned as
/// data; this never throws.
ValidationReport validate_corpus(const std::vector<Problem>& problems,
                                 const std::vector<TestCase>& tests,
                                 const std::vector<Candidate>& candidates);

// ---------------------------------------------------------------------------
// Identifiers

/// 64-bit FNV-1a. Stable across platforms; used for content addressing and
/// for config hashes recorded in manifests and reports.
std::uint64_t content_hash(std::string_view data) noexcept;
std::string hex64(std::uint64_t value);

/// `{stage}-{counter}-{first 8 hex digits of content_hash(content)}`.
std::string make_id(std::string_view stage, std::size_t counter, std::string_view content);

/// Mixes a base seed with a stream index (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept;

}  // namespace selfprobe
