#include "selfprobe/cli.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/base_sink.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <csignal>
#include <ctime>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <thread>

#include "selfprobe/analyzer.hpp"
#include "selfprobe/consensus.hpp"
#include "selfprobe/error.hpp"
#include "selfprobe/executor.hpp"
#include "selfprobe/pipeline.hpp"
#include "selfprobe/theorylab.hpp"

#ifndef SELFPROBE_VERSION
#define SELFPROBE_VERSION "0.0.0"
#endif

namespace selfprobe::cli {

namespace fs = std::filesystem;
using pipeline::RunConfig;

namespace {

/// One JSON object per log line on stderr.
class JsonStderrSink final : public spdlog::sinks::base_sink<std::mutex> {
protected:
    void sink_it_(const spdlog::details::log_msg& msg) override {
        const auto t = std::chrono::system_clock::to_time_t(msg.time);
        std::tm tm{};
        gmtime_r(&t, &tm);
        char stamp[32];
        std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm);
        const auto level = spdlog::level::to_string_view(msg.level);
        json line = {{"time", stamp},
                     {"level", std::string(level.data(), level.size())},
                     {"message", std::string(msg.payload.data(), msg.payload.size())}};
        std::cerr << line.dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
    }
    void flush_() override { std::cerr.flush(); }
};

void configure_logging(const std::string& verbosity, bool json_logs) {
    std::shared_ptr<spdlog::logger> logger;
    if (json_logs) {
        logger = std::make_shared<spdlog::logger>("selfprobe", std::make_shared<JsonStderrSink>());
    } else {
        logger = std::make_shared<spdlog::logger>("selfprobe", std::make_shared<spdlog::sinks::stderr_color_sink_mt>());
    }
    if (verbosity == "quiet") {
        logger->set_level(spdlog::level::err);
    } else if (verbosity == "debug") {
        logger->set_level(spdlog::level::debug);
    } else {
        logger->set_level(spdlog::level::info);
    }
    spdlog::set_default_logger(logger);
}

/// Thrown for bad flag values discovered after parsing; maps to exit 64.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Globals {
    std::optional<std::string> config_path;
    std::optional<std::string> output_root;
    std::optional<std::uint64_t> seed;
    std::string verbosity = "normal";
    bool json_logs = false;
};

RunConfig resolve_config(const Globals& g) {
    RunConfig cfg = g.config_path ? pipeline::load_run_config(*g.config_path)
                                  : pipeline::run_config_from_json(json::object());
    if (g.output_root) cfg.pipeline.output_root = *g.output_root;
    if (g.seed) pipeline::apply_seed(cfg, *g.seed);
    return cfg;
}

void write_manifest(const RunConfig& cfg, const std::string& command, const std::vector<std::string>& args) {
    const fs::path root = cfg.pipeline.output_root;
    fs::create_directories(root);
    json m;
    m["command"] = command;
    m["args"] = args;
    m["config"] = pipeline::to_json(cfg);
    m["config_hash"] = pipeline::config_hash(cfg);
    m["seeds"] = {{"stub", cfg.stub.seed}, {"selection", cfg.pipeline.selection.rng_seed}};
    m["versions"] = {{"selfprobe", SELFPROBE_VERSION}, {"compiler", __VERSION__}, {"cplusplus", __cplusplus}};
    write_text_atomic(root / "manifest.json", m.dump(2) + "\n");
}

fs::path input_or_default(const std::optional<std::string>& flag, const RunConfig& cfg, const char* name) {
    return flag ? fs::path(*flag) : cfg.pipeline.output_root / name;
}

template <typename T>
std::map<std::string, std::vector<T>> by_problem(const std::vector<T>& items) {
    std::map<std::string, std::vector<T>> out;
    for (const auto& it : items) out[it.problem_id].push_back(it);
    return out;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

std::vector<int> complete_iterations(const fs::path& root) {
    std::vector<int> out;
    if (!fs::exists(root)) return out;
    for (const auto& entry : fs::directory_iterator(root)) {
        const auto name = entry.path().filename().string();
        if (!entry.is_directory() || name.rfind("iter-", 0) != 0) continue;
        try {
            std::size_t used = 0;
            const int t = std::stoi(name.substr(5), &used);
            if (used == name.size() - 5 && fs::exists(entry.path() / pipeline::kDoneMarker)) out.push_back(t);
        } catch (const std::exception&) {
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

extern "C" void on_interrupt(int) { executor::request_cancel(); }

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Self-bootstrapping code data: generate, execute, select and analyze.", "selfprobe"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Expand all help");

    Globals g;
    app.add_option("--config", g.config_path, "Config document (JSON)")->check(CLI::ExistingFile);
    app.add_option("--output-root", g.output_root, "Directory every output is written under");
    app.add_option("--seed", g.seed, "Seed for every seeded component");
    app.add_option("--verbosity", g.verbosity, "quiet, normal or debug")
        ->check(CLI::IsMember({"quiet", "normal", "debug"}));
    app.add_flag("--json-logs", g.json_logs, "One JSON object per log line");

    // Shared per-command flag storage.
    std::optional<int> count;
    std::optional<int> iteration;
    std::optional<std::string> problems_in, tests_in, candidates_in, executions_in, selections_in, input_dir;
    std::optional<double> temperature, rho, p_opt, mean, concentration;
    std::optional<int> tau, parallelism, time_limit, n_opt, k_opt, m_opt, trials, pool_size, iterations_opt, start;
    std::optional<std::string> strategy;
    std::optional<std::string> data_dir;
    std::vector<int> iteration_list;
    bool no_dedup = false;
    bool sweep = false;
    int lift_pools = 0;
    long long pk_n = 0, pk_c = 0, pk_k = 0;

    auto* gen_problems = app.add_subcommand("gen-problems", "Generate problems (stages 1-3) into problems.jsonl");
    gen_problems->add_option("--count", count, "Number of problems")->check(CLI::PositiveNumber);
    gen_problems->add_option("--iteration", iteration, "Iteration index passed to the backend")
        ->check(CLI::NonNegativeNumber);

    auto* gen_tests = app.add_subcommand("gen-tests", "Generate test suites into tests.jsonl");
    gen_tests->add_option("--problems", problems_in, "Problems file (default: output root)");
    gen_tests->add_option("--count", count, "Tests per problem")->check(CLI::PositiveNumber);
    gen_tests->add_option("--iteration", iteration)->check(CLI::NonNegativeNumber);

    auto* gen_solutions = app.add_subcommand("gen-solutions", "Sample candidate solutions into candidates.jsonl");
    gen_solutions->add_option("--problems", problems_in, "Problems file (default: output root)");
    gen_solutions->add_option("--count", count, "Samples per problem")->check(CLI::PositiveNumber);
    gen_solutions->add_option("--iteration", iteration)->check(CLI::NonNegativeNumber);
    gen_solutions->add_option("--temperature", temperature)->check(CLI::NonNegativeNumber);

    auto* execute = app.add_subcommand("execute", "Run every candidate against its suite into executions.jsonl");
    execute->add_option("--tests", tests_in);
    execute->add_option("--candidates", candidates_in);
    execute->add_option("--parallelism", parallelism)->check(CLI::PositiveNumber);
    execute->add_option("--time-limit-ms", time_limit)->check(CLI::PositiveNumber);

    auto* select = app.add_subcommand("select", "Select one candidate per problem into selections.jsonl");
    select->add_option("--problems", problems_in);
    select->add_option("--tests", tests_in);
    select->add_option("--candidates", candidates_in);
    select->add_option("--executions", executions_in);
    select->add_option("--strategy", strategy, "consensus, random, cluster, low_ppl or success_rate");
    select->add_option("--rho", rho, "Reliability threshold in (0, 1]");
    select->add_option("--tau", tau, "Smallest non-trivial cluster size");

    auto* build_sft = app.add_subcommand("build-sft", "Turn accepted selections into sft.jsonl");
    build_sft->add_option("--problems", problems_in);
    build_sft->add_option("--candidates", candidates_in);
    build_sft->add_option("--selections", selections_in);
    build_sft->add_option("--iteration", iteration)->check(CLI::NonNegativeNumber);

    auto* iterate = app.add_subcommand("iterate", "Run full iterations with early stopping");
    iterate->add_option("--iterations", iterations_opt, "Iterations to run (default: max_iterations)")
        ->check(CLI::PositiveNumber);
    iterate->add_option("--start", start, "First iteration (default: after the last logged one)")
        ->check(CLI::NonNegativeNumber);

    auto* consolidate = app.add_subcommand("consolidate", "Merge iterations into sft-consolidated.jsonl");
    consolidate->add_option("--iterations", iteration_list, "Comma-separated list (default: every complete one)")
        ->delimiter(',');
    consolidate->add_flag("--no-dedup", no_dedup, "Keep exact duplicate pairs");

    auto* analyze = app.add_subcommand("analyze", "Diversity and quality report into analysis/");
    analyze->add_option("--input", input_dir, "Corpus directory (default: output root)");
    analyze->add_option("--data-dir", data_dir, "Directory with analyzer.json and taxonomy.json");
    analyze->add_option("--workers", parallelism)->check(CLI::PositiveNumber);

    auto* sim_theorem = app.add_subcommand("simulate-theorem", "Monte Carlo check of the consensus guarantee");
    sim_theorem->add_flag("--sweep", sweep, "Run the default grid");
    sim_theorem->add_option("--n", n_opt)->check(CLI::PositiveNumber);
    sim_theorem->add_option("--k", k_opt)->check(CLI::PositiveNumber);
    sim_theorem->add_option("--p", p_opt);
    sim_theorem->add_option("--m", m_opt, "Tests (default: the minimum from the bound)")->check(CLI::NonNegativeNumber);
    sim_theorem->add_option("--trials", trials)->check(CLI::PositiveNumber);

    auto* sim_dynamics = app.add_subcommand("simulate-dynamics", "Quality-lift dynamics on synthetic pools");
    sim_dynamics->add_option("--iterations", iterations_opt)->check(CLI::PositiveNumber);
    sim_dynamics->add_option("--pool-size", pool_size)->check(CLI::PositiveNumber);
    sim_dynamics->add_option("--mean", mean, "Initial quality mean in (0, 1)");
    sim_dynamics->add_option("--concentration", concentration);
    sim_dynamics->add_option("--lift-pools", lift_pools, "Also run the one-shot lift test on this many pools")
        ->check(CLI::NonNegativeNumber);

    auto* passk = app.add_subcommand("passk", "Unbiased pass@k from n samples with c correct");
    passk->add_option("--n", pk_n)->required();
    passk->add_option("--c", pk_c)->required();
    passk->add_option("--k", pk_k)->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        if (!args.empty()) err << "error: " << e.what() << "\n";
        err << app.help();
        return kExitUsage;
    }

    configure_logging(g.verbosity, g.json_logs);
    CLI::App* cmd = app.get_subcommands().front();
    const std::string name = cmd->get_name();

    // Phase 1: resolve and validate everything. No file is written here.
    RunConfig cfg;
    try {
        if (name == "passk") {
            const double v = consensus::pass_at_k(pk_n, pk_c, pk_k);
            out << fmt_double(v) << "\n";
            return 0;
        }
        cfg = resolve_config(g);
        auto& pc = cfg.pipeline;
        if (rho) pc.selection.rho = *rho;
        if (tau) pc.selection.tau = *tau;
        if (strategy) pc.selection.strategy = parse_selection_strategy(*strategy);
        if (time_limit) pc.sandbox.time_limit_ms = *time_limit;
        if (temperature) cfg.generation.temperature = *temperature;
        if (data_dir) cfg.analyzer.data_dir = *data_dir;
        if (name == "analyze" && parallelism) cfg.analyzer.workers = *parallelism;
        if (name == "execute" && parallelism) pc.execution_parallelism = *parallelism;
        if (name == "gen-problems" && count) pc.problems_per_iteration = *count;
        if (name == "gen-tests" && count) pc.tests_per_problem = *count;
        if (name == "gen-solutions" && count) pc.candidates_per_problem = *count;
        cfg.validate();
        if (p_opt && !(*p_opt > 0.0 && *p_opt < 1.0)) throw UsageError("--p must lie in (0, 1)");
        if (mean && !(*mean > 0.0 && *mean < 1.0)) throw UsageError("--mean must lie in (0, 1)");
        if (concentration && !(*concentration > 0.0)) throw UsageError("--concentration must be > 0");
        if (n_opt && k_opt && *k_opt > *n_opt) throw UsageError("--k must not exceed --n");
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const Error& e) {
        const bool usage = e.code() == ErrorCode::InvalidArgument || e.code() == ErrorCode::InvalidCounts ||
                           e.code() == ErrorCode::InvalidParams;
        err << "error: " << e.what() << "\n";
        return usage ? kExitUsage : pipeline::kExitFatal;
    }

    // Phase 2: run.
    const fs::path root = cfg.pipeline.output_root;
    const auto& pc = cfg.pipeline;
    try {
        write_manifest(cfg, name, args);
        const int it = iteration.value_or(0);

        if (name == "gen-problems") {
            auto backend = pipeline::make_backend(cfg);
            const auto res = genclient::generate_problems(pc.problems_per_iteration, *backend,
                                                          pipeline::load_templates(cfg), cfg.generation, it);
            write_jsonl(root / "problems.jsonl", res.problems);
            out << res.problems.size() << " problems written, " << res.drop_count << " dropped\n";
            return res.drop_count > 0 ? pipeline::kExitPartial : pipeline::kExitOk;
        }
        if (name == "gen-tests") {
            auto backend = pipeline::make_backend(cfg);
            const auto templates = pipeline::load_templates(cfg);
            const auto problems = read_jsonl<Problem>(input_or_default(problems_in, cfg, "problems.jsonl"));
            std::vector<TestCase> all;
            int empty = 0;
            for (const auto& p : problems) {
                auto res = genclient::generate_tests(p, pc.tests_per_problem, *backend, templates, cfg.generation, it);
                if (res.tests.empty()) {
                    ++empty;
                    spdlog::warn("problem {}: no tests", p.id);
                }
                all.insert(all.end(), res.tests.begin(), res.tests.end());
            }
            write_jsonl(root / "tests.jsonl", all);
            out << all.size() << " tests written for " << problems.size() << " problems\n";
            return empty > 0 ? pipeline::kExitPartial : pipeline::kExitOk;
        }
        if (name == "gen-solutions") {
            auto backend = pipeline::make_backend(cfg);
            const auto templates = pipeline::load_templates(cfg);
            const auto problems = read_jsonl<Problem>(input_or_default(problems_in, cfg, "problems.jsonl"));
            std::vector<Candidate> all;
            std::size_t absences = 0;
            for (const auto& p : problems) {
                auto res = genclient::sample_solutions(p, pc.candidates_per_problem, *backend, templates,
                                                       cfg.generation, it);
                absences += res.absences.size();
                all.insert(all.end(), res.candidates.begin(), res.candidates.end());
            }
            write_jsonl(root / "candidates.jsonl", all);
            out << all.size() << " candidates written, " << absences << " samples absent\n";
            return absences > 0 ? pipeline::kExitPartial : pipeline::kExitOk;
        }
        if (name == "execute") {
            const auto tests = by_problem(read_jsonl<TestCase>(input_or_default(tests_in, cfg, "tests.jsonl")));
            const auto cands = read_jsonl<Candidate>(input_or_default(candidates_in, cfg, "candidates.jsonl"));
            executor::check_sandbox(pc.sandbox);
            const int workers = pc.execution_parallelism > 0
                                    ? pc.execution_parallelism
                                    : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
            std::vector<ExecutionOutcome> all;
            std::size_t skipped = 0;
            for (const auto& [pid, group] : by_problem(cands)) {
                const auto t = tests.find(pid);
                if (t == tests.end()) {
                    skipped += group.size();
                    continue;
                }
                auto res = executor::execute_pool(group, t->second, pc.sandbox, workers);
                all.insert(all.end(), res.begin(), res.end());
            }
            write_jsonl(root / "executions.jsonl", all);
            out << all.size() << " outcomes written, " << skipped << " candidates without tests\n";
            return skipped > 0 ? pipeline::kExitPartial : pipeline::kExitOk;
        }
        if (name == "select") {
            Corpus corpus;
            corpus.problems = read_jsonl<Problem>(input_or_default(problems_in, cfg, "problems.jsonl"));
            corpus.tests = read_jsonl<TestCase>(input_or_default(tests_in, cfg, "tests.jsonl"));
            corpus.candidates = read_jsonl<Candidate>(input_or_default(candidates_in, cfg, "candidates.jsonl"));
            const auto outcomes =
                read_jsonl<ExecutionOutcome>(input_or_default(executions_in, cfg, "executions.jsonl"));
            const auto selections = pipeline::select_corpus(corpus, outcomes, pc.selection);
            write_jsonl(root / "selections.jsonl", selections);
            std::size_t accepted = 0;
            for (const auto& s : selections) accepted += s.accepted() ? 1 : 0;
            out << accepted << " of " << selections.size() << " problems selected\n";
            return pipeline::kExitOk;
        }
        if (name == "build-sft") {
            const auto problems = read_jsonl<Problem>(input_or_default(problems_in, cfg, "problems.jsonl"));
            const auto cands = read_jsonl<Candidate>(input_or_default(candidates_in, cfg, "candidates.jsonl"));
            const auto sels = read_jsonl<SelectionResult>(input_or_default(selections_in, cfg, "selections.jsonl"));
            const auto sft = pipeline::build_sft(problems, cands, sels, it);
            write_jsonl(root / "sft.jsonl", sft);
            out << sft.size() << " records written\n";
            return pipeline::kExitOk;
        }
        if (name == "iterate") {
            auto backend = pipeline::make_backend(cfg);
            const auto templates = pipeline::load_templates(cfg);
            const auto validator = pipeline::make_validator(cfg);
            int first = 0;
            if (start) {
                first = *start;
            } else {
                for (const auto& r : pipeline::read_iteration_log(root)) first = std::max(first, r.iteration + 1);
            }
            const auto loop = pipeline::run_loop(pc, *backend, templates, cfg.generation,
                                                 validator ? &*validator : nullptr, first, iterations_opt);
            bool partial = false;
            for (const auto& o : loop.iterations) {
                partial = partial || o.partial();
                out << json(o.record).dump() << "\n";
            }
            return partial ? pipeline::kExitPartial : pipeline::kExitOk;
        }
        if (name == "consolidate") {
            auto list = iteration_list.empty() ? complete_iterations(root) : iteration_list;
            const auto path = pipeline::consolidate_dataset(root, list, !no_dedup);
            out << path.string() << "\n";
            return pipeline::kExitOk;
        }
        if (name == "analyze") {
            auto acfg = analyzer::AnalyzerConfig::load(cfg.analyzer.data_dir.value_or(analyzer::default_data_dir()));
            acfg.workers = cfg.analyzer.workers;
            const auto input = analyzer::load_corpus_dir(input_dir ? fs::path(*input_dir) : root);
            const auto report = analyzer::analyze(input, acfg);
            for (const auto& p : analyzer::write_report(report, root / "analysis")) out << p.string() << "\n";
            return pipeline::kExitOk;
        }
        if (name == "simulate-theorem") {
            std::vector<theorylab::SweepRow> rows;
            const std::uint64_t seed = g.seed.value_or(0);
            if (sweep) {
                theorylab::SweepSpec spec;
                if (trials) spec.trials = *trials;
                spec.rng_seed = seed;
                rows = theorylab::run_sweep(spec);
            } else {
                theorylab::ConsensusSimParams p;
                if (n_opt) p.n = *n_opt;
                if (k_opt) p.k = *k_opt;
                if (p_opt) p.p = *p_opt;
                if (trials) p.trials = *trials;
                p.rng_seed = seed;
                const int bound = theorylab::min_tests_bound(p.n, p.k, p.p);
                p.m = m_opt.value_or(bound);
                rows.push_back({p, bound, theorylab::simulate_consensus(p)});
            }
            std::string csv = "n,k,p,m,min_tests,trials,empirical,bound,standard_error,vacuous,bound_satisfied\n";
            for (const auto& r : rows) {
                const auto& q = r.params;
                const auto& s = r.report;
                csv += std::to_string(q.n) + "," + std::to_string(q.k) + "," + fmt_double(q.p) + "," +
                       std::to_string(q.m) + "," + std::to_string(r.min_tests) + "," + std::to_string(s.trials) + "," +
                       fmt_double(s.empirical_correct_rate) + "," + fmt_double(s.bound) + "," +
                       fmt_double(s.standard_error) + "," + (s.vacuous ? "true" : "false") + "," +
                       (s.bound_satisfied ? "true" : "false") + "\n";
            }
            write_text_atomic(root / "theorem.csv", csv);
            out << csv;
            return pipeline::kExitOk;
        }
        if (name == "simulate-dynamics") {
            theorylab::DynamicsSimParams p;
            if (iterations_opt) p.iterations = *iterations_opt;
            if (pool_size) p.pool_size = *pool_size;
            if (mean) p.initial_quality_mean = *mean;
            if (concentration) p.initial_quality_concentration = *concentration;
            p.rng_seed = g.seed.value_or(0);
            p.model.selection = pc.selection;
            const auto trace = theorylab::simulate_dynamics(p);
            std::string lines;
            for (const auto& r : trace) {
                lines += json{{"iteration", r.iteration},
                              {"mean_quality", r.mean_quality},
                              {"delta", r.delta},
                              {"selected_count", r.selected_count}}
                             .dump() +
                         "\n";
            }
            write_text_atomic(root / "dynamics.jsonl", lines);
            out << lines;
            if (lift_pools > 0) {
                theorylab::QualityLiftParams lp;
                lp.pools = lift_pools;
                lp.quality_mean = p.initial_quality_mean;
                lp.quality_concentration = p.initial_quality_concentration;
                lp.rng_seed = p.rng_seed;
                lp.model = p.model;
                const auto lr = theorylab::simulate_quality_lift(lp);
                const json j = {{"pools", lift_pools},
                                {"accepted_pools", lr.accepted_pools},
                                {"rejected_pools", lr.rejected_pools},
                                {"mean_delta", lr.mean_delta},
                                {"t_statistic", lr.t_statistic},
                                {"p_value", lr.p_value}};
                write_text_atomic(root / "quality_lift.json", j.dump(2) + "\n");
                out << j.dump() << "\n";
            }
            return pipeline::kExitOk;
        }
    } catch (const Error& e) {
        if (e.code() == ErrorCode::Cancelled) {
            std::error_code ec;
            fs::create_directories(root, ec);
            std::ofstream(root / pipeline::kPartialMarker) << name << ": cancelled\n";
        }
        spdlog::error("{}: {}", to_string(e.code()), e.what());
        err << "error: " << e.what() << "\n";
        return pipeline::kExitFatal;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        err << "error: " << e.what() << "\n";
        return pipeline::kExitFatal;
    }
    err << app.help();
    return kExitUsage;
}

int main_entry(int argc, char** argv) {
    std::signal(SIGINT, on_interrupt);
    std::signal(SIGTERM, on_interrupt);
    std::vector<std::string> args(argv + 1, argv + argc);
    return dispatch(args, std::cout, std::cerr);
}

}  // namespace selfprobe::cli
