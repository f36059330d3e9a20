#pragma once

// Problem, test and solution generation (framework stages 1-5) behind a
// pluggable chat backend, plus ingestion of pre-generated corpora.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "selfprobe/core.hpp"

namespace selfprobe::genclient {

enum class Stage { problem_gen, difficulty_rating, skeleton_gen, test_gen, solution_sampling };

std::string_view to_string(Stage s) noexcept;
inline constexpr Stage kAllStages[] = {Stage::problem_gen, Stage::difficulty_rating, Stage::skeleton_gen,
                                       Stage::test_gen, Stage::solution_sampling};

struct GenEndpointConfig {
    std::string base_url = "http://localhost:8000/v1";
    std::string model_name = "default";
    std::string api_key_env = "SELFPROBE_API_KEY";
    int request_timeout_ms = 60000;
    int max_retries = 3;
    int retry_backoff_ms = 500;  // first retry delay; doubles each attempt
    double temperature = 0.8;          // solution sampling
    double problem_temperature = 1.0;  // problem generation
    double top_p = 0.95;
    bool want_logprobs = true;
    int max_in_flight = 8;

    void validate() const;
};

// ---------------------------------------------------------------------------
// Templates

struct StageTemplate {
    Stage stage;
    std::string template_text;
};

/// Placeholders each stage's renderer fills in.
std::vector<std::string> required_placeholders(Stage stage);

/// One template per stage, loaded from `<dir>/<stage>.txt`. Rendering replaces
/// `{description}`, `{signature}`, `{skeleton}` and `{count}`; any other
/// braces are left untouched so code examples survive.
class TemplateSet {
public:
    /// Throws FileUnreadable for a missing file and InvalidArgument when a
    /// template lacks one of its stage's required placeholders.
    static TemplateSet load(const std::filesystem::path& dir);
    static TemplateSet from_templates(std::vector<StageTemplate> templates);

    [[nodiscard]] std::string render(Stage stage, const std::map<std::string, std::string>& vars) const;
    [[nodiscard]] const StageTemplate& get(Stage stage) const;
    /// Hash over all template texts, for run manifests.
    [[nodiscard]] std::uint64_t fingerprint() const;

private:
    std::vector<StageTemplate> templates_;
};

/// Directory of the templates shipped with the project.
std::filesystem::path default_templates_dir();

// ---------------------------------------------------------------------------
// Backends

struct ChatMessage {
    std::string role;
    std::string content;
};

/// Out-of-band request details. The HTTP backend ignores them; the stub
/// backend uses them to answer deterministically.
struct RequestContext {
    int iteration = 0;
    int index = 0;  // problem index or sample index
    std::optional<Problem> problem;
};

struct ChatRequest {
    Stage stage = Stage::problem_gen;
    std::vector<ChatMessage> messages;
    double temperature = 1.0;
    double top_p = 1.0;
    bool logprobs = false;
    RequestContext context;
};

struct ChatResponse {
    std::string content;
    std::optional<std::vector<double>> token_logprobs;
};

class Backend {
public:
    virtual ~Backend() = default;
    /// Throws EndpointUnreachable (after retries), AuthFailure,
    /// QuotaExhausted, RequestRejected or ParseError (malformed body).
    virtual ChatResponse complete(const ChatRequest& request) = 0;
    [[nodiscard]] virtual std::string name() const = 0;
};

/// OpenAI-compatible `/chat/completions` client. The credential is read from
/// the environment variable named in the config at construction and is never
/// included in errors or logs.
class HttpChatBackend final : public Backend {
public:
    explicit HttpChatBackend(GenEndpointConfig cfg);
    ChatResponse complete(const ChatRequest& request) override;
    [[nodiscard]] std::string name() const override { return "http"; }

    /// Request body as sent on the wire (exposed for tests).
    [[nodiscard]] std::string request_body(const ChatRequest& request) const;

private:
    GenEndpointConfig cfg_;
    std::string host_;         // scheme://host[:port]
    std::string path_prefix_;  // e.g. /v1
    std::optional<std::string> api_key_;
};

struct StubOptions {
    std::uint64_t seed = 0;
    /// Probability that a sampled solution is a correct variant, before the
    /// per-iteration improvement.
    double base_correct_rate = 0.5;
    double correct_rate_step = 0.08;  // added per iteration
    double max_correct_rate = 0.9;
    /// Fraction of problem_gen replies that come back as garbage.
    double malformed_rate = 0.0;
};

/// Deterministic offline backend built on a small bank of Python problems,
/// each with reference tests, correct variants and buggy variants. Replies are
/// a pure function of (seed, stage, iteration, index, problem).
class StubBackend final : public Backend {
public:
    explicit StubBackend(StubOptions options = {});
    ChatResponse complete(const ChatRequest& request) override;
    [[nodiscard]] std::string name() const override { return "stub"; }

    /// Held-out problems (never emitted by problem_gen) with their suites.
    [[nodiscard]] Corpus held_out_corpus() const;
    [[nodiscard]] double correct_rate(int iteration) const;
    /// Number of problems problem_gen cycles through.
    [[nodiscard]] std::size_t bank_size() const;

private:
    StubOptions options_;
};

/// Exit codes a harness produced by the stub uses for "the call raised".
inline constexpr int kHarnessErrorExitCode = 3;

// ---------------------------------------------------------------------------
// Response parsing. Each parser returns nullopt/empty for unparseable input;
// nothing is repaired.

struct FencedBlock {
    std::string language;
    std::string body;
};

std::vector<FencedBlock> extract_fenced_blocks(const std::string& text);

struct ProblemDraft {
    std::string title;
    std::string description;
    std::string function_signature;
    std::optional<std::string> category;
};

std::optional<ProblemDraft> parse_problem_payload(const std::string& text);
std::optional<std::pair<Difficulty, double>> parse_difficulty_payload(const std::string& text);
std::optional<std::string> parse_skeleton_payload(const std::string& text);
std::vector<std::string> parse_tests_payload(const std::string& text);
std::optional<std::string> parse_solution_payload(const std::string& text);

// ---------------------------------------------------------------------------
// Stage operations

struct GeneratedProblems {
    std::vector<Problem> problems;
    int drop_count = 0;
};

struct GeneratedTests {
    std::vector<TestCase> tests;
    int duplicates_dropped = 0;
    bool parse_failure = false;
};

struct Absence {
    int sample_index = 0;
    std::string reason;
};

struct SampledSolutions {
    std::vector<Candidate> candidates;
    std::vector<Absence> absences;
};

/// Stages 1-3. Returns at most `count` problems; malformed replies at any
/// stage drop the problem and are counted. count < 1 throws PreconditionViolated.
GeneratedProblems generate_problems(int count, Backend& backend, const TemplateSet& templates,
                                    const GenEndpointConfig& cfg, int iteration = 0);

/// Stage 4. Dense ordinals 0..m-1 after exact-text dedup; m <= target_count.
GeneratedTests generate_tests(const Problem& problem, int target_count, Backend& backend,
                              const TemplateSet& templates, const GenEndpointConfig& cfg, int iteration = 0);

/// Stage 5. Requests that fail after retries, or whose reply is unparseable,
/// become absences. AuthFailure and QuotaExhausted propagate.
SampledSolutions sample_solutions(const Problem& problem, int n, Backend& backend, const TemplateSet& templates,
                                  const GenEndpointConfig& cfg, int iteration = 0);

struct IngestResult {
    Corpus corpus;
    ValidationReport report;
};

/// Reads the three line-delimited files and validates the result.
IngestResult ingest_files(const std::filesystem::path& problems_path, const std::filesystem::path& tests_path,
                          const std::filesystem::path& candidates_path);

}  // namespace selfprobe::genclient
