#include "selfprobe/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>
#include <unordered_map>

#include "selfprobe/error.hpp"
#include "selfprobe/parallel.hpp"

namespace selfprobe::pipeline {

namespace fs = std::filesystem;

void PipelineConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v < 1) throw Error(ErrorCode::InvalidArgument, std::string(name) + " must be >= 1");
    };
    positive(problems_per_iteration, "problems_per_iteration");
    positive(tests_per_problem, "tests_per_problem");
    positive(candidates_per_problem, "candidates_per_problem");
    positive(max_iterations, "max_iterations");
    positive(early_stop_patience, "early_stop_patience");
    positive(problem_parallelism, "problem_parallelism");
    if (execution_parallelism < 0) throw Error(ErrorCode::InvalidArgument, "execution_parallelism must be >= 0");
    if (output_root.empty()) throw Error(ErrorCode::InvalidArgument, "output_root must not be empty");
    selection.validate();
    sandbox.validate();
}

void RunConfig::validate() const {
    pipeline.validate();
    generation.validate();
    if (stub.malformed_rate < 0 || stub.malformed_rate > 1) {
        throw Error(ErrorCode::InvalidArgument, "stub.malformed_rate must lie in [0, 1]");
    }
    if (validation.enabled && backend == BackendKind::http && (!validation.problems_path || !validation.tests_path)) {
        throw Error(ErrorCode::InvalidArgument,
                    "validation with the http backend needs validation.problems_path and validation.tests_path");
    }
}

// ---------------------------------------------------------------------------
// Config document

namespace {

/// Strict view of one JSON object: every key must be consumed by a getter.
class Section {
public:
    Section(const json& doc, std::string name) : name_(std::move(name)) {
        if (doc.is_null()) return;
        if (!doc.is_object()) throw Error(ErrorCode::InvalidArgument, "section '" + name_ + "' must be an object");
        obj_ = doc;
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!obj_.contains(key)) return;
        try {
            out = obj_.at(key).get<T>();
        } catch (const json::exception&) {
            throw Error(ErrorCode::InvalidArgument, name_ + "." + key + " has the wrong type");
        }
    }

    template <typename T>
    void get(const char* key, std::optional<T>& out) {
        seen_.insert(key);
        if (!obj_.contains(key) || obj_.at(key).is_null()) return;
        T v{};
        get(key, v);
        out = std::move(v);
    }

    void get(const char* key, fs::path& out) {
        std::string s = out.string();
        get(key, s);
        out = s;
    }

    [[nodiscard]] bool has(const char* key) const { return obj_.contains(key); }

    void finish() const {
        for (const auto& [k, v] : obj_.items()) {
            if (!seen_.count(k)) throw Error(ErrorCode::InvalidArgument, "unknown key " + name_ + "." + k);
        }
    }

private:
    std::string name_;
    json obj_ = json::object();
    std::set<std::string> seen_;
};

std::string backend_name(BackendKind k) { return k == BackendKind::stub ? "stub" : "http"; }

}  // namespace

RunConfig run_config_from_json(const json& doc) {
    if (!doc.is_object()) throw Error(ErrorCode::InvalidArgument, "config must be a JSON object");
    static const std::set<std::string> sections = {"pipeline", "selection",  "sandbox", "generation",
                                                   "stub",     "validation", "analyzer"};
    for (const auto& [k, v] : doc.items()) {
        if (!sections.count(k)) throw Error(ErrorCode::InvalidArgument, "unknown config section '" + k + "'");
    }
    auto section = [&](const char* name) { return Section(doc.contains(name) ? doc.at(name) : json(), name); };

    RunConfig cfg;
    {
        auto s = section("pipeline");
        auto& p = cfg.pipeline;
        s.get("problems_per_iteration", p.problems_per_iteration);
        s.get("tests_per_problem", p.tests_per_problem);
        s.get("candidates_per_problem", p.candidates_per_problem);
        s.get("max_iterations", p.max_iterations);
        s.get("early_stop_patience", p.early_stop_patience);
        s.get("output_root", p.output_root);
        s.get("problem_parallelism", p.problem_parallelism);
        s.get("execution_parallelism", p.execution_parallelism);
        s.finish();
    }
    {
        auto s = section("selection");
        auto& sel = cfg.pipeline.selection;
        std::optional<std::string> strategy;
        s.get("rho", sel.rho);
        s.get("tau", sel.tau);
        s.get("strategy", strategy);
        s.get("success_rate_threshold", sel.success_rate_threshold);
        s.get("rng_seed", sel.rng_seed);
        s.finish();
        if (strategy) sel.strategy = parse_selection_strategy(*strategy);
    }
    {
        auto s = section("generation");
        auto& g = cfg.generation;
        std::string backend = backend_name(cfg.backend);
        s.get("backend", backend);
        if (backend == "stub") {
            cfg.backend = BackendKind::stub;
        } else if (backend == "http") {
            cfg.backend = BackendKind::http;
        } else {
            throw Error(ErrorCode::InvalidArgument, "generation.backend must be 'stub' or 'http'");
        }
        s.get("templates_dir", cfg.templates_dir);
        s.get("base_url", g.base_url);
        s.get("model_name", g.model_name);
        s.get("api_key_env", g.api_key_env);
        s.get("request_timeout_ms", g.request_timeout_ms);
        s.get("max_retries", g.max_retries);
        s.get("retry_backoff_ms", g.retry_backoff_ms);
        s.get("temperature", g.temperature);
        s.get("problem_temperature", g.problem_temperature);
        s.get("top_p", g.top_p);
        s.get("want_logprobs", g.want_logprobs);
        s.get("max_in_flight", g.max_in_flight);
        s.finish();
    }
    {
        auto s = section("sandbox");
        auto& sb = cfg.pipeline.sandbox;
        s.get("time_limit_ms", sb.time_limit_ms);
        s.get("memory_limit_mb", sb.memory_limit_mb);
        s.get("interpreter_command", sb.interpreter_command);
        s.get("program_filename", sb.program_filename);
        s.get("network_allowed", sb.network_allowed);
        s.get("scratch_root", sb.scratch_root);
        const bool explicit_codes = s.has("error_exit_codes");
        s.get("error_exit_codes", sb.error_exit_codes);
        s.finish();
        if (!explicit_codes && cfg.backend == BackendKind::stub) {
            sb.error_exit_codes = {genclient::kHarnessErrorExitCode};
        }
    }
    {
        auto s = section("stub");
        auto& st = cfg.stub;
        s.get("seed", st.seed);
        s.get("base_correct_rate", st.base_correct_rate);
        s.get("correct_rate_step", st.correct_rate_step);
        s.get("max_correct_rate", st.max_correct_rate);
        s.get("malformed_rate", st.malformed_rate);
        s.finish();
    }
    {
        auto s = section("validation");
        s.get("enabled", cfg.validation.enabled);
        s.get("problems_path", cfg.validation.problems_path);
        s.get("tests_path", cfg.validation.tests_path);
        s.finish();
    }
    {
        auto s = section("analyzer");
        s.get("data_dir", cfg.analyzer.data_dir);
        s.get("workers", cfg.analyzer.workers);
        s.finish();
    }
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::FileUnreadable, path.string());
    auto doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw Error(ErrorCode::ParseError, path.string() + ": not valid JSON");
    return run_config_from_json(doc);
}

json to_json(const RunConfig& c) {
    auto opt_path = [](const std::optional<fs::path>& p) { return p ? json(p->string()) : json(nullptr); };
    const auto& p = c.pipeline;
    const auto& g = c.generation;
    json j;
    j["pipeline"] = {{"problems_per_iteration", p.problems_per_iteration},
                     {"tests_per_problem", p.tests_per_problem},
                     {"candidates_per_problem", p.candidates_per_problem},
                     {"max_iterations", p.max_iterations},
                     {"early_stop_patience", p.early_stop_patience},
                     {"output_root", p.output_root.string()},
                     {"problem_parallelism", p.problem_parallelism},
                     {"execution_parallelism", p.execution_parallelism}};
    j["selection"] = {{"rho", p.selection.rho},
                      {"tau", p.selection.tau},
                      {"strategy", std::string(to_string(p.selection.strategy))},
                      {"success_rate_threshold", p.selection.success_rate_threshold},
                      {"rng_seed", p.selection.rng_seed}};
    j["sandbox"] = {{"time_limit_ms", p.sandbox.time_limit_ms},
                    {"memory_limit_mb", p.sandbox.memory_limit_mb},
                    {"interpreter_command", p.sandbox.interpreter_command},
                    {"program_filename", p.sandbox.program_filename},
                    {"network_allowed", p.sandbox.network_allowed},
                    {"scratch_root", p.sandbox.scratch_root.string()},
                    {"error_exit_codes", p.sandbox.error_exit_codes}};
    j["generation"] = {{"backend", backend_name(c.backend)},
                       {"templates_dir", opt_path(c.templates_dir)},
                       {"base_url", g.base_url},
                       {"model_name", g.model_name},
                       {"api_key_env", g.api_key_env},
                       {"request_timeout_ms", g.request_timeout_ms},
                       {"max_retries", g.max_retries},
                       {"retry_backoff_ms", g.retry_backoff_ms},
                       {"temperature", g.temperature},
                       {"problem_temperature", g.problem_temperature},
                       {"top_p", g.top_p},
                       {"want_logprobs", g.want_logprobs},
                       {"max_in_flight", g.max_in_flight}};
    j["stub"] = {{"seed", c.stub.seed},
                 {"base_correct_rate", c.stub.base_correct_rate},
                 {"correct_rate_step", c.stub.correct_rate_step},
                 {"max_correct_rate", c.stub.max_correct_rate},
                 {"malformed_rate", c.stub.malformed_rate}};
    j["validation"] = {{"enabled", c.validation.enabled},
                       {"problems_path", opt_path(c.validation.problems_path)},
                       {"tests_path", opt_path(c.validation.tests_path)}};
    j["analyzer"] = {{"data_dir", opt_path(c.analyzer.data_dir)}, {"workers", c.analyzer.workers}};
    return j;
}

std::string config_hash(const RunConfig& cfg) { return hex64(content_hash(to_json(cfg).dump())); }

void apply_seed(RunConfig& cfg, std::uint64_t seed) {
    cfg.stub.seed = seed;
    cfg.pipeline.selection.rng_seed = seed;
}

std::unique_ptr<genclient::Backend> make_backend(const RunConfig& cfg) {
    if (cfg.backend == BackendKind::stub) return std::make_unique<genclient::StubBackend>(cfg.stub);
    return std::make_unique<genclient::HttpChatBackend>(cfg.generation);
}

genclient::TemplateSet load_templates(const RunConfig& cfg) {
    return genclient::TemplateSet::load(cfg.templates_dir.value_or(genclient::default_templates_dir()));
}

// ---------------------------------------------------------------------------
// Stage helpers

std::vector<consensus::PoolMember> build_pool(const std::vector<Candidate>& candidates,
                                              const std::vector<TestCase>& tests,
                                              const std::vector<ExecutionOutcome>& outcomes) {
    std::unordered_map<std::string, std::vector<const ExecutionOutcome*>> by_candidate;
    for (const auto& o : outcomes) by_candidate[o.candidate_id].push_back(&o);
    std::vector<consensus::PoolMember> pool;
    pool.reserve(candidates.size());
    for (const auto& c : candidates) {
        std::vector<ExecutionOutcome> mine;
        if (auto it = by_candidate.find(c.id); it != by_candidate.end()) {
            for (const auto* o : it->second) mine.push_back(*o);
        }
        std::sort(mine.begin(), mine.end(), [](const auto& a, const auto& b) { return a.ordinal < b.ordinal; });
        consensus::PoolMember m;
        m.candidate_id = c.id;
        m.signature = executor::signature_of(mine, tests.size());
        m.e = executor::execution_success_rate(mine);
        m.pass_fraction = executor::pass_fraction(mine);
        if (c.token_logprobs && !c.token_logprobs->empty()) m.f = consensus::perplexity(*c.token_logprobs);
        std::string key;
        for (const auto& o : mine) {
            key += to_string(o.status);
            key += '\x1f';
            key += o.captured_output.value_or("");
            key += '\x1e';
        }
        m.output_key = content_hash(key);
        pool.push_back(std::move(m));
    }
    return pool;
}

std::vector<SelectionResult> select_corpus(const Corpus& corpus, const std::vector<ExecutionOutcome>& outcomes,
                                           const consensus::SelectionConfig& cfg) {
    cfg.validate();
    std::map<std::string, std::vector<TestCase>> tests;
    std::map<std::string, std::vector<Candidate>> cands;
    for (const auto& t : corpus.tests) tests[t.problem_id].push_back(t);
    for (const auto& c : corpus.candidates) cands[c.problem_id].push_back(c);
    std::vector<SelectionResult> out;
    for (const auto& p : corpus.problems) {
        const auto& suite = tests[p.id];
        if (suite.empty()) continue;
        auto local = cfg;
        local.rng_seed = derive_seed(cfg.rng_seed, content_hash(p.id));
        out.push_back(consensus::select(p.id, build_pool(cands[p.id], suite, outcomes), local));
    }
    return out;
}

std::vector<SftRecord> build_sft(const std::vector<Problem>& problems, const std::vector<Candidate>& candidates,
                                 const std::vector<SelectionResult>& selections, int iteration) {
    std::unordered_map<std::string, const Problem*> pmap;
    std::unordered_map<std::string, const Candidate*> cmap;
    for (const auto& p : problems) pmap[p.id] = &p;
    for (const auto& c : candidates) cmap[c.id] = &c;
    std::vector<SftRecord> out;
    for (const auto& s : selections) {
        if (!s.selected) continue;
        const auto pit = pmap.find(s.problem_id);
        const auto cit = cmap.find(*s.selected);
        if (pit == pmap.end()) throw Error(ErrorCode::UnknownCandidate, "selection names unknown problem " + s.problem_id);
        if (cit == cmap.end()) throw Error(ErrorCode::UnknownCandidate, "selection names unknown candidate " + *s.selected);
        SftRecord r;
        r.instruction = make_instruction(*pit->second);
        r.response = cit->second->source_code;
        r.problem_id = s.problem_id;
        r.candidate_id = *s.selected;
        r.iteration = iteration;
        r.selection_strategy = s.strategy;
        if (s.scores) r.quality = *s.scores;
        out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Validation

double validation_score(const Validator& v, genclient::Backend& backend, const genclient::TemplateSet& templates,
                        const genclient::GenEndpointConfig& gen, int iteration) {
    if (v.held_out.problems.empty()) throw Error(ErrorCode::PreconditionViolated, "held-out set is empty");
    auto greedy = gen;
    greedy.temperature = 0.0;
    std::map<std::string, std::vector<TestCase>> suites;
    for (const auto& t : v.held_out.tests) suites[t.problem_id].push_back(t);
    int solved = 0;
    for (const auto& p : v.held_out.problems) {
        const auto& suite = suites[p.id];
        if (suite.empty()) continue;
        auto sample = genclient::sample_solutions(p, 1, backend, templates, greedy, iteration);
        if (sample.candidates.empty()) continue;
        const auto outcomes = executor::execute_pool(sample.candidates, suite, v.sandbox, 1);
        if (executor::pass_fraction(outcomes) == 1.0) ++solved;
    }
    return static_cast<double>(solved) / static_cast<double>(v.held_out.problems.size());
}

std::optional<Validator> make_validator(const RunConfig& cfg) {
    if (!cfg.validation.enabled) return std::nullopt;
    Validator v;
    v.sandbox = cfg.pipeline.sandbox;
    if (cfg.backend == BackendKind::stub) {
        v.held_out = genclient::StubBackend(cfg.stub).held_out_corpus();
    } else {
        v.held_out.problems = read_jsonl<Problem>(*cfg.validation.problems_path);
        v.held_out.tests = read_jsonl<TestCase>(*cfg.validation.tests_path);
    }
    return v;
}

// ---------------------------------------------------------------------------
// Iterations

fs::path iteration_dir(const fs::path& output_root, int iteration) {
    return output_root / ("iter-" + std::to_string(iteration));
}

namespace {

std::mutex& log_mutex() {
    static std::mutex m;
    return m;
}

void append_record(const fs::path& output_root, const IterationRecord& record) {
    std::lock_guard lock(log_mutex());
    std::ofstream out(output_root / "iterations.jsonl", std::ios::binary | std::ios::app);
    if (!out) throw Error(ErrorCode::FileUnreadable, (output_root / "iterations.jsonl").string());
    out << json(record).dump() << '\n';
    out.flush();
    if (!out) throw Error(ErrorCode::FileUnreadable, "could not append to iterations.jsonl");
}

/// Errors that end the run. Anything else fails only the problem at hand.
bool fatal(ErrorCode code) {
    switch (code) {
        case ErrorCode::AuthFailure:
        case ErrorCode::QuotaExhausted:
        case ErrorCode::SandboxUnavailable:
        case ErrorCode::Cancelled:
        case ErrorCode::InvalidArgument:
            return true;
        default:
            return false;
    }
}

struct ProblemWork {
    std::vector<TestCase> tests;
    std::vector<Candidate> candidates;
    std::vector<ExecutionOutcome> outcomes;
    std::optional<SelectionResult> selection;
    std::optional<std::string> failure;
    double pool_e_sum = 0.0;
};

}  // namespace

IterationOutcome run_iteration(int t, const PipelineConfig& cfg, genclient::Backend& backend,
                               const genclient::TemplateSet& templates, const genclient::GenEndpointConfig& gen,
                               const Validator* validator) {
    if (t < 0) throw Error(ErrorCode::PreconditionViolated, "iteration must be >= 0");
    cfg.validate();
    const fs::path dir = iteration_dir(cfg.output_root, t);
    fs::create_directories(cfg.output_root);
    if (!fs::create_directory(dir)) throw Error(ErrorCode::IterationExists, dir.string() + " already exists");

    try {
        IterationOutcome outcome;
        auto generated = genclient::generate_problems(cfg.problems_per_iteration, backend, templates, gen, t);
        outcome.problems_dropped = generated.drop_count;
        const auto& problems = generated.problems;
        const int exec_workers = cfg.execution_parallelism > 0
                                     ? cfg.execution_parallelism
                                     : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

        std::vector<ProblemWork> work(problems.size());
        parallel_for(problems.size(), static_cast<std::size_t>(cfg.problem_parallelism), [&](std::size_t i) {
            const Problem& p = problems[i];
            ProblemWork& w = work[i];
            try {
                auto tests = genclient::generate_tests(p, cfg.tests_per_problem, backend, templates, gen, t);
                if (tests.tests.empty()) {
                    w.failure = tests.parse_failure ? "test generation reply was unparseable" : "no tests generated";
                    return;
                }
                w.tests = std::move(tests.tests);
                auto sols = genclient::sample_solutions(p, cfg.candidates_per_problem, backend, templates, gen, t);
                w.candidates = std::move(sols.candidates);
                if (w.candidates.empty()) {
                    w.failure = "every solution sample failed";
                    return;
                }
                w.outcomes = executor::execute_pool(w.candidates, w.tests, cfg.sandbox, exec_workers);
                const auto pool = build_pool(w.candidates, w.tests, w.outcomes);
                for (const auto& m : pool) w.pool_e_sum += m.e;
                auto local = cfg.selection;
                local.rng_seed = derive_seed(cfg.selection.rng_seed, content_hash(p.id));
                w.selection = consensus::select(p.id, pool, local);
            } catch (const Error& e) {
                if (fatal(e.code())) throw;
                w.failure = std::string(to_string(e.code())) + ": " + e.what();
            }
        });

        std::vector<TestCase> all_tests;
        std::vector<Candidate> all_candidates;
        std::vector<ExecutionOutcome> all_outcomes;
        std::vector<SelectionResult> selections;
        double pool_e_sum = 0.0;
        std::size_t executed = 0;
        for (std::size_t i = 0; i < problems.size(); ++i) {
            auto& w = work[i];
            if (w.failure) {
                outcome.failures.push_back({problems[i].id, *w.failure});
                spdlog::warn("iteration {}: problem {} failed: {}", t, problems[i].id, *w.failure);
            }
            all_tests.insert(all_tests.end(), w.tests.begin(), w.tests.end());
            all_candidates.insert(all_candidates.end(), w.candidates.begin(), w.candidates.end());
            all_outcomes.insert(all_outcomes.end(), w.outcomes.begin(), w.outcomes.end());
            if (w.selection) {
                pool_e_sum += w.pool_e_sum;
                executed += w.candidates.size();
                if (!w.selection->accepted()) {
                    outcome.rejected.push_back(*w.selection);
                    spdlog::info("iteration {}: problem {} rejected ({})", t, problems[i].id,
                                 to_string(w.selection->rejection_reason.value_or(RejectionReason::empty_pool)));
                }
                selections.push_back(std::move(*w.selection));
            }
        }
        const auto sft = build_sft(problems, all_candidates, selections, t);

        auto& rec = outcome.record;
        rec.iteration = t;
        rec.problems_count = static_cast<int>(problems.size());
        rec.candidates_count = static_cast<int>(all_candidates.size());
        rec.selected_count = static_cast<int>(sft.size());
        double e_sum = 0.0;
        double f_sum = 0.0;
        int f_count = 0;
        for (const auto& r : sft) {
            e_sum += r.quality.e;
            if (r.quality.f) {
                f_sum += *r.quality.f;
                ++f_count;
            }
        }
        rec.mean_e = sft.empty() ? 0.0 : e_sum / static_cast<double>(sft.size());
        rec.mean_f = f_count == 0 ? 0.0 : f_sum / f_count;
        rec.pool_mean_e = executed == 0 ? 0.0 : pool_e_sum / static_cast<double>(executed);
        rec.dataset_path = (fs::path("iter-" + std::to_string(t)) / "sft.jsonl").string();
        if (!sft.empty() && rec.mean_e < rec.pool_mean_e) {
            outcome.selected_mean_below_pool = true;
            spdlog::warn("iteration {}: selected mean e {} is below the pool mean {}", t, rec.mean_e, rec.pool_mean_e);
        }
        if (validator) rec.validation_score = validation_score(*validator, backend, templates, gen, t);

        write_jsonl(dir / "problems.jsonl", problems);
        write_jsonl(dir / "tests.jsonl", all_tests);
        write_jsonl(dir / "candidates.jsonl", all_candidates);
        write_jsonl(dir / "executions.jsonl", all_outcomes);
        write_jsonl(dir / "selections.jsonl", selections);
        write_jsonl(dir / "sft.jsonl", sft);
        write_text_atomic(dir / kDoneMarker, "");
        append_record(cfg.output_root, rec);
        spdlog::info("iteration {}: {} problems, {} candidates, {} selected", t, rec.problems_count,
                     rec.candidates_count, rec.selected_count);
        return outcome;
    } catch (const std::exception& e) {
        std::error_code ec;
        if (!fs::exists(dir / kDoneMarker, ec)) {
            std::ofstream(dir / kPartialMarker, std::ios::binary) << e.what() << '\n';
        }
        throw;
    }
}

bool should_stop(const std::vector<IterationRecord>& records, int patience) {
    if (records.empty()) throw Error(ErrorCode::PreconditionViolated, "should_stop needs at least one record");
    if (patience < 1) throw Error(ErrorCode::PreconditionViolated, "patience must be >= 1");
    std::optional<double> best;
    int stale = 0;
    for (const auto& r : records) {
        if (!r.validation_score) continue;
        if (!best || *r.validation_score > *best) {
            best = r.validation_score;
            stale = 0;
        } else {
            ++stale;
        }
    }
    return stale >= patience;
}

LoopOutcome run_loop(const PipelineConfig& cfg, genclient::Backend& backend, const genclient::TemplateSet& templates,
                     const genclient::GenEndpointConfig& gen, const Validator* validator, int first,
                     std::optional<int> count) {
    const int n = count.value_or(cfg.max_iterations);
    if (n < 1) throw Error(ErrorCode::PreconditionViolated, "iteration count must be >= 1");
    LoopOutcome loop;
    for (int t = first; t < first + n; ++t) {
        loop.iterations.push_back(run_iteration(t, cfg, backend, templates, gen, validator));
        if (t + 1 < first + n && should_stop(read_iteration_log(cfg.output_root), cfg.early_stop_patience)) {
            spdlog::info("stopping after iteration {}: validation score stopped improving", t);
            loop.stopped_early = true;
            break;
        }
    }
    return loop;
}

fs::path consolidate_dataset(const fs::path& output_root, std::vector<int> iterations, bool dedup) {
    if (iterations.empty()) throw Error(ErrorCode::PreconditionViolated, "no iterations to consolidate");
    std::sort(iterations.begin(), iterations.end());
    iterations.erase(std::unique(iterations.begin(), iterations.end()), iterations.end());
    std::vector<std::vector<SftRecord>> parts;
    for (int t : iterations) {
        const auto dir = iteration_dir(output_root, t);
        if (!fs::exists(dir / kDoneMarker)) {
            throw Error(ErrorCode::IncompleteIteration, dir.string() + " is missing or incomplete");
        }
        parts.push_back(read_jsonl<SftRecord>(dir / "sft.jsonl"));
    }
    std::vector<SftRecord> merged;
    std::set<std::pair<std::string, std::string>> seen;
    for (auto& part : parts) {
        for (auto& r : part) {
            if (dedup && !seen.emplace(r.instruction, r.response).second) continue;
            merged.push_back(std::move(r));
        }
    }
    const auto path = output_root / "sft-consolidated.jsonl";
    write_jsonl(path, merged);
    return path;
}

std::vector<IterationRecord> read_iteration_log(const fs::path& output_root) {
    const auto path = output_root / "iterations.jsonl";
    if (!fs::exists(path)) return {};
    return read_jsonl<IterationRecord>(path);
}

}  // namespace selfprobe::pipeline
