#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "selfprobe/analyzer.hpp"
#include "selfprobe/cli.hpp"
#include "selfprobe/consensus.hpp"
#include "selfprobe/jsonl.hpp"
#include "selfprobe/theorylab.hpp"

namespace py = pybind11;
using namespace selfprobe;

namespace {

py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }


consensus::PoolMember member_from(const py::dict& d) {
    consensus::PoolMember m;
    m.candidate_id = d["candidate_id"].cast<std::string>();
    m.signature = ExecutionSignature::from_string(d["signature"].cast<std::string>());
    m.e = d["e"].cast<double>();
    if (d.contains("f") && !d["f"].is_none()) m.f = d["f"].cast<double>();
    if (d.contains("pass_fraction")) m.pass_fraction = d["pass_fraction"].cast<double>();
    if (d.contains("output_key") && !d["output_key"].is_none()) m.output_key = d["output_key"].cast<std::uint64_t>();
    return m;
}

py::dict report_dict(const theorylab::SimReport& r) {
    py::dict d;
    d["empirical_correct_rate"] = r.empirical_correct_rate;
    d["bound"] = r.bound;
    d["bound_satisfied"] = r.bound_satisfied;
    d["vacuous"] = r.vacuous;
    d["standard_error"] = r.standard_error;
    d["trials"] = r.trials;
    d["correct_trials"] = r.correct_trials;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Native core: selection, estimators, simulations and code analysis.";
    py::register_exception<Error>(m, "Error", PyExc_ValueError);

    m.def("pass_at_k", &consensus::pass_at_k, py::arg("n"), py::arg("c"), py::arg("k"));
    m.def("perplexity", &consensus::perplexity, py::arg("token_logprobs"));

    m.def(
        "select",
        [](const std::string& problem_id, const py::list& pool, double rho, int tau, const std::string& strategy,
           std::uint64_t seed) {
            std::vector<consensus::PoolMember> members;
            for (const auto& item : pool) members.push_back(member_from(item.cast<py::dict>()));
            consensus::SelectionConfig cfg;
            cfg.rho = rho;
            cfg.tau = tau;
            cfg.strategy = parse_selection_strategy(strategy);
            cfg.rng_seed = seed;
            cfg.validate();
            return to_py(json(consensus::select(problem_id, members, cfg)));
        },
        py::arg("problem_id"), py::arg("pool"), py::arg("rho") = 0.8, py::arg("tau") = 2,
        py::arg("strategy") = "consensus", py::arg("seed") = 0,
        "Pool entries are dicts with candidate_id, signature ('0101'), e and optional f.");

    m.def("min_tests_bound", &theorylab::min_tests_bound, py::arg("n"), py::arg("k"), py::arg("p"));
    m.def("correctness_lower_bound", &theorylab::correctness_lower_bound, py::arg("n"), py::arg("m"), py::arg("p"),
          py::arg("delta") = 0.0);
    m.def(
        "simulate_consensus",
        [](int n, int k, double p, int tests, int trials, std::uint64_t seed) {
            theorylab::ConsensusSimParams params;
            params.n = n;
            params.k = k;
            params.p = p;
            params.m = tests;
            params.trials = trials;
            params.rng_seed = seed;
            theorylab::SimReport r;
            {
                py::gil_scoped_release release;
                r = theorylab::simulate_consensus(params);
            }
            return report_dict(r);
        },
        py::arg("n"), py::arg("k"), py::arg("p"), py::arg("m"), py::arg("trials") = 10000, py::arg("seed") = 0);
    m.def(
        "simulate_dynamics",
        [](double initial_mean, int pool_size, int iterations, std::uint64_t seed) {
            theorylab::DynamicsSimParams params;
            params.initial_quality_mean = initial_mean;
            params.pool_size = pool_size;
            params.iterations = iterations;
            params.rng_seed = seed;
            std::vector<theorylab::DynamicsRecord> trace;
            {
                py::gil_scoped_release release;
                trace = theorylab::simulate_dynamics(params);
            }
            py::list out;
            for (const auto& r : trace) {
                py::dict d;
                d["iteration"] = r.iteration;
                d["mean_quality"] = r.mean_quality;
                d["delta"] = r.delta;
                d["selected_count"] = r.selected_count;
                out.append(d);
            }
            return out;
        },
        py::arg("initial_mean") = 0.5, py::arg("pool_size") = 10000, py::arg("iterations") = 5, py::arg("seed") = 0);

    m.def("lexical_entropy", &analyzer::lexical_entropy, py::arg("text"));
    m.def("pearson_r", &analyzer::pearson_r, py::arg("xs"), py::arg("ys"));
    m.def(
        "syntax_profile",
        [](const std::string& source) {
            const auto p = analyzer::syntax_profile(source);
            py::dict hist;
            for (std::size_t i = 0; i < analyzer::kConstructCount; ++i) {
                hist[py::str(std::string(analyzer::to_string(static_cast<analyzer::Construct>(i))))] =
                    p.node_histogram[i];
            }
            py::dict d;
            d["node_histogram"] = hist;
            d["cyclomatic"] = p.cyclomatic;
            d["lines"] = p.lines;
            d["total_nodes"] = p.total_nodes();
            return d;
        },
        py::arg("source"));

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out;
            std::ostringstream err;
            int code = 0;
            {
                py::gil_scoped_release release;
                code = cli::dispatch(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs one command line; returns (exit_code, stdout, stderr).");

}
