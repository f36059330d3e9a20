#pragma once

// Corpus diagnostics: lexical entropy, problem complexity and semantic
// coverage, syntax profiles of candidate code, perplexity stratification and
// full-versus-filtered comparisons. Outputs are plot-ready data files.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "selfprobe/core.hpp"

namespace selfprobe::analyzer {

/// Lowercases and splits on every non-alphanumeric byte; empty pieces are dropped.
std::vector<std::string> tokenize_text(std::string_view text);

/// Shannon entropy in bits of the token frequency distribution. Throws
/// EmptyText when the text has no tokens.
double lexical_entropy(std::string_view text);

/// Entropy in bits of a count distribution; zero counts are skipped and an
/// all-zero input has entropy 0.
double distribution_entropy(const std::vector<double>& counts);

// ---------------------------------------------------------------------------
// Problem-level scores

struct ComplexityWeights {
    double w_params = 0.25;
    double w_length = 0.25;
    double w_keywords = 0.25;
    double w_constraints = 0.25;
    double cap_params = 5;
    double cap_length = 200;  // description tokens
    double cap_keywords = 5;
    double cap_constraints = 4;
    std::vector<std::string> algorithmic_keywords;
    std::vector<std::string> constraint_phrases;

    /// Throws InvalidArgument unless weights are >= 0 and sum to 1 within 1e-9
    /// and every cap is positive.
    void validate() const;
};

struct ComplexityComponents {
    int params = 0;
    int tokens = 0;
    int keyword_hits = 0;     // distinct algorithmic keywords present
    int constraint_hits = 0;  // phrase occurrences
};

/// Number of parameters in a `def name(...)` signature, excluding self/cls and
/// bare `*` / `/` markers.
int count_parameters(std::string_view function_signature);

ComplexityComponents complexity_components(const Problem& problem, const ComplexityWeights& weights);

/// 10 * sum of weight * min(1, component / cap).
double complexity_score(const Problem& problem, const ComplexityWeights& weights);
double complexity_score(const ComplexityComponents& c, const ComplexityWeights& weights);

struct TaxonomyCategory {
    std::string name;
    std::map<std::string, double> keywords;  // lowercase single tokens -> weight
};

struct SemanticTaxonomy {
    std::vector<TaxonomyCategory> categories;

    /// Throws InvalidArgument unless there are exactly 7 categories with
    /// non-empty lowercase keyword lists and non-negative weights.
    void validate() const;
    [[nodiscard]] std::size_t term_count() const;
};

struct SemanticCoverage {
    double score = 0.0;                          // clamped to [0, 10]
    std::map<std::string, double> per_category;  // every category, zero when unmatched
};

/// Whole-token matches against the tokenized description; each keyword counts once.
SemanticCoverage semantic_coverage(const Problem& problem, const SemanticTaxonomy& taxonomy);

// ---------------------------------------------------------------------------
// Syntax profiles

enum class Construct {
    function_def,
    conditional,
    loop,
    call,
    assignment,
    return_stmt,
    comparison,
    boolean_op,
    arithmetic_op,
    literal,
    identifier,
    exception_handler,
    comprehension,
    import_stmt,
    other,
};
inline constexpr std::size_t kConstructCount = 15;
std::string_view to_string(Construct c) noexcept;

struct SyntaxProfile {
    std::array<int, kConstructCount> node_histogram{};
    int cyclomatic = 1;
    int lines = 0;

    [[nodiscard]] int count(Construct c) const { return node_histogram[static_cast<std::size_t>(c)]; }
    [[nodiscard]] int total_nodes() const;
};

/// Token-level profile of Python source. Throws ParseFailure for an
/// unterminated string, unbalanced brackets, a compound statement header
/// without its colon, or a character outside the language.
///
/// Cyclomatic complexity is 1 plus: if/elif and conditional expressions,
/// for/while heads (including comprehension loops), `and`/`or`, and except
/// clauses.
SyntaxProfile syntax_profile(std::string_view source_code);

// ---------------------------------------------------------------------------
// Statistics

/// Sample Pearson correlation, clamped to [-1, 1]. Throws DegenerateInput
/// for mismatched or short inputs and for zero variance.
double pearson_r(const std::vector<double>& xs, const std::vector<double>& ys);

struct Summary {
    std::size_t count = 0;
    double mean = 0.0;
    double std = 0.0;  // population
    double min = 0.0;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double max = 0.0;
};

/// Quartiles use linear interpolation between order statistics. An empty
/// input yields an all-zero summary.
Summary summarize(std::vector<double> values);

struct HistogramSpec {
    double min = 0.0;
    double max = 1.0;
    int bins = 10;
};

struct Histogram {
    HistogramSpec spec;
    std::vector<std::size_t> counts;  // out-of-range values land in the end bins
    std::vector<double> cdf;          // cumulative fraction at each bin's upper edge
};

Histogram histogram(const std::vector<double>& values, const HistogramSpec& spec);

// ---------------------------------------------------------------------------
// Candidate-level analyses

struct ScoredCandidate {
    std::string candidate_id;
    std::optional<double> f;
    double pass_fraction = 0.0;
};

struct StratificationReport {
    Summary perplexity;
    double threshold = 1.05;
    double high_success_threshold = 0.8;
    // Contingency of (f <= threshold) x (pass_fraction >= high_success_threshold).
    std::size_t low_f_high_success = 0;
    std::size_t low_f_low_success = 0;
    std::size_t high_f_high_success = 0;
    std::size_t high_f_low_success = 0;
    double high_success_below_fraction = 0.0;  // among high-success candidates
    double below_fraction = 0.0;               // among all scored candidates
};

/// Candidates without f are ignored. Throws NoScoredCandidates when none remain.
StratificationReport stratify_by_perplexity(const std::vector<ScoredCandidate>& candidates, double threshold = 1.05,
                                            double high_success_threshold = 0.8);

struct DatasetItem {
    std::string candidate_id;
    std::string source_code;
    double pass_fraction = 0.0;
    bool error_free = true;  // no error or timeout outcome
    std::optional<SyntaxProfile> profile;
    std::map<std::string, double> semantic;  // per-category scores of the item's problem
};

struct DatasetQuality {
    long long size = 0;
    double success_rate = 0.0;     // fraction passing every test
    double error_free_rate = 0.0;
    double uniqueness_ratio = 0.0;  // distinct source texts / size
    double structural_entropy = 0.0;
    double semantic_entropy = 0.0;
};

struct ComparisonReport {
    DatasetQuality full;
    DatasetQuality filtered;
    DatasetQuality delta;  // filtered - full, field by field (size included)
};

DatasetQuality dataset_quality(const std::vector<DatasetItem>& items);

/// Throws EmptyDataset when either side is empty.
ComparisonReport compare_filtered(const std::vector<DatasetItem>& full, const std::vector<DatasetItem>& filtered);

// ---------------------------------------------------------------------------
// Whole-corpus report

struct AnalyzerConfig {
    ComplexityWeights weights;
    SemanticTaxonomy taxonomy;
    double perplexity_threshold = 1.05;
    double high_success_threshold = 0.8;
    HistogramSpec entropy_histogram{0.0, 8.0, 32};
    HistogramSpec perplexity_histogram{1.0, 1.2, 40};
    int workers = 0;  // 0: hardware concurrency

    /// Loads `analyzer.json` and `taxonomy.json` from a directory.
    static AnalyzerConfig load(const std::filesystem::path& data_dir);
    /// Hash over the canonical form of every setting that affects results.
    [[nodiscard]] std::uint64_t hash() const;
    void validate() const;
};

/// Directory of the data files shipped with the project.
std::filesystem::path default_data_dir();

struct CorpusInput {
    std::vector<Problem> problems;
    std::vector<Candidate> candidates;
    std::vector<ExecutionOutcome> executions;
    std::vector<SelectionResult> selections;
};

/// Per-item values kept for the plot files.
struct ProblemPoint {
    std::string problem_id;
    std::optional<double> entropy;  // absent for token-free descriptions
    double complexity = 0.0;
    double semantic = 0.0;
};

struct CandidatePoint {
    std::string candidate_id;
    std::optional<double> perplexity;
    std::optional<double> pass_fraction;  // absent without executions
    std::optional<int> cyclomatic;        // absent when unprofiled
    std::optional<int> lines;
};

struct DiversityReport {
    std::string config_hash;
    Summary entropy;
    Histogram entropy_histogram;
    Summary complexity;
    Summary semantic;
    std::map<std::string, double> semantic_category_share;  // share of total semantic score
    std::optional<double> correlation_r;                     // complexity vs semantic
    std::array<long long, kConstructCount> ast_node_histogram{};
    std::size_t profiled = 0;
    std::size_t unprofiled = 0;
    Summary cyclomatic;
    Summary length;
    Summary perplexity;
    Histogram perplexity_histogram;
    std::optional<StratificationReport> stratification;
    std::optional<ComparisonReport> comparison;

    std::vector<ProblemPoint> problem_points;
    std::vector<CandidatePoint> candidate_points;
};

/// Problems feed entropy, complexity and semantic statistics; candidates feed
/// syntax and perplexity statistics; executions supply pass fractions; a
/// non-empty selection list defines the filtered set for the comparison.
DiversityReport analyze(const CorpusInput& input, const AnalyzerConfig& config);

/// Reads whichever of problems/candidates/executions/selections .jsonl exist
/// in `dir`. Throws FileUnreadable when none does.
CorpusInput load_corpus_dir(const std::filesystem::path& dir);

/// Writes report.json, entropy_hist.csv, complexity_vs_semantic.csv,
/// ppl_vs_success.csv and ast_hist.csv into out_dir. Returns the paths written.
std::vector<std::filesystem::path> write_report(const DiversityReport& report, const std::filesystem::path& out_dir);

}  // namespace selfprobe::analyzer
