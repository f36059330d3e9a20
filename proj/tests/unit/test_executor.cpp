#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/stat.h>

#include <random>

#include "selfprobe/error.hpp"
#include "selfprobe/executor.hpp"
#include "test_support.hpp"

using namespace selfprobe;
using namespace selfprobe::executor;
using selfprobe::testing::TempDir;

namespace {

Candidate cand(const std::string& id, const std::string& source, const std::string& pid = "p") {
    Candidate c;
    c.id = id;
    c.problem_id = pid;
    c.source_code = source;
    return c;
}

TestCase test(const std::string& id, int ordinal, const std::string& harness, const std::string& pid = "p") {
    return TestCase{id, pid, harness, ordinal};
}

SandboxPolicy sh_policy(const TempDir& scratch, int limit_ms = 2000) {
    SandboxPolicy p;
    p.interpreter_command = "/bin/sh {program}";
    p.program_filename = "main.sh";
    p.time_limit_ms = limit_ms;
    p.scratch_root = scratch.path();
    return p;
}

SandboxPolicy py_policy(const TempDir& scratch) {
    SandboxPolicy p;
    p.interpreter_command = "python3 {program}";
    p.scratch_root = scratch.path();
    return p;
}

ExecutionOutcome outcome(const std::string& cid, int ordinal, ExecStatus s) {
    return ExecutionOutcome{cid, "t" + std::to_string(ordinal), ordinal, s, 1, std::nullopt};
}

}  // namespace

TEST_CASE("execute_one: correct and wrong python candidates") {
    TempDir scratch;
    auto policy = py_policy(scratch);
    auto t = test("t0", 0, "assert add(2, 3) == 5");
    CHECK(execute_one(cand("good", "def add(a, b):\n    return a+b"), t, policy).status == ExecStatus::pass);
    auto bad = execute_one(cand("bad", "def add(a, b):\n    return a-b"), t, policy);
    CHECK(bad.status == ExecStatus::fail);
    REQUIRE(bad.captured_output.has_value());
    CHECK(bad.captured_output->find("AssertionError") != std::string::npos);
    CHECK(bad.captured_output->find(scratch.path().string()) == std::string::npos);
    CHECK(bad.captured_output->find("{workdir}") != std::string::npos);
    const auto again = execute_one(cand("bad", "def add(a, b):\n    return a-b"), t, policy);
    CHECK(again.captured_output == bad.captured_output);
    CHECK(std::filesystem::is_empty(scratch.path()));
}

TEST_CASE("execute_one: infinite loop times out") {
    TempDir scratch;
    auto policy = sh_policy(scratch, 100);
    auto o = execute_one(cand("loop", "while :; do :; done"), test("t0", 0, "exit 0"), policy);
    CHECK(o.status == ExecStatus::timeout);
    CHECK(o.duration_ms >= 100);
    CHECK(o.duration_ms < 100 + kKillGraceMs + 1000);
}

TEST_CASE("execute_one: crash signal and launch failure map to error") {
    TempDir scratch;
    auto policy = sh_policy(scratch);
    CHECK(execute_one(cand("crash", "kill -SEGV $$"), test("t0", 0, "exit 0"), policy).status == ExecStatus::error);

    // Executable bit set but not a valid program: execve fails at launch.
    auto bogus = scratch.path() / "bogus-interpreter";
    selfprobe::testing::write_file(bogus, std::string("\x7f" "ELF garbage", 12));
    ::chmod(bogus.c_str(), 0755);
    auto broken = policy;
    broken.interpreter_command = bogus.string() + " {program}";
    broken.scratch_root = scratch.path() / "runs";
    CHECK(execute_one(cand("c", "exit 0"), test("t0", 0, "exit 0"), broken).status == ExecStatus::error);
}

TEST_CASE("execute_one: declared error exit codes") {
    TempDir scratch;
    auto policy = sh_policy(scratch);
    policy.error_exit_codes = {3};
    CHECK(execute_one(cand("c", "exit 3"), test("t0", 0, ""), policy).status == ExecStatus::error);
    CHECK(execute_one(cand("c", "exit 4"), test("t0", 0, ""), policy).status == ExecStatus::fail);
}

TEST_CASE("execute_one: precondition and sandbox errors") {
    TempDir scratch;
    auto policy = sh_policy(scratch);
    try {
        (void)execute_one(cand("c", "exit 0", "p1"), test("t0", 0, "", "p2"), policy);
        FAIL("expected MismatchedProblem");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::MismatchedProblem);
    }
    policy.interpreter_command = "definitely-not-an-interpreter-xyz {program}";
    try {
        (void)execute_one(cand("c", "exit 0"), test("t0", 0, ""), policy);
        FAIL("expected SandboxUnavailable");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::SandboxUnavailable);
    }
    policy = sh_policy(scratch);
    policy.time_limit_ms = 0;
    CHECK_THROWS_AS(policy.validate(), Error);
}

TEST_CASE("captured output is truncated to 4 KiB") {
    TempDir scratch;
    auto o = execute_one(cand("c", "i=0; while [ $i -lt 2000 ]; do echo 0123456789; i=$((i+1)); done"),
                         test("t0", 0, "exit 0"), sh_policy(scratch));
    CHECK(o.status == ExecStatus::pass);
    REQUIRE(o.captured_output.has_value());
    CHECK(o.captured_output->size() == kCapturedOutputLimit);
}

TEST_CASE("executions share no filesystem state") {
    TempDir scratch;
    auto policy = sh_policy(scratch);
    auto writer = cand("w", "echo hi > marker.txt");
    auto t = test("t0", 0, "[ ! -e ../marker.txt ] && [ -e marker.txt ]");
    auto probe = cand("r", "[ -e marker.txt ] && exit 1");
    CHECK(execute_one(writer, t, policy).status == ExecStatus::pass);
    CHECK(execute_one(probe, test("t0", 0, "exit 0"), policy).status == ExecStatus::pass);
}

TEST_CASE("execute_pool: cardinality, order and all-pass signature") {
    TempDir scratch;
    auto policy = sh_policy(scratch);
    std::vector<Candidate> cands{cand("c2", "f() { echo $(($1 + $2)); }"), cand("c0", "f() { echo 0; }"),
                                 cand("c1", "f() { echo $(($1 * $2)); }")};
    std::vector<TestCase> tests{test("ta", 0, "[ \"$(f 2 3)\" = 5 ]"), test("tb", 1, "[ \"$(f 0 0)\" = 0 ]"),
                                test("tc", 2, "[ \"$(f 1 1)\" = 2 ]"), test("td", 3, "[ \"$(f 2 2)\" = 4 ]")};
    auto outcomes = execute_pool(cands, tests, policy, 3);
    REQUIRE(outcomes.size() == 12);
    for (std::size_t i = 1; i < outcomes.size(); ++i) {
        CHECK(std::tie(outcomes[i - 1].candidate_id, outcomes[i - 1].ordinal) <
              std::tie(outcomes[i].candidate_id, outcomes[i].ordinal));
    }
    std::vector<ExecutionOutcome> c2(outcomes.begin() + 8, outcomes.end());
    CHECK(signature_of(c2, 4).str() == "1111");
    std::vector<ExecutionOutcome> c1(outcomes.begin() + 4, outcomes.begin() + 8);
    CHECK(signature_of(c1, 4).str() == "0101");
    std::vector<ExecutionOutcome> c0(outcomes.begin(), outcomes.begin() + 4);
    CHECK(signature_of(c0, 4).str() == "0100");
}

TEST_CASE("execute_pool matches a sequential reference on a planted pool") {
    TempDir scratch;
    auto policy = sh_policy(scratch);
    // Candidate i answers x -> x*i; test j asserts f(j) == j*(j%5): candidate i passes test j iff i*j == j*(j%5).
    std::vector<Candidate> cands;
    for (int i = 0; i < 10; ++i) {
        cands.push_back(cand("c" + std::to_string(i), "f() { echo $(($1 * " + std::to_string(i) + ")); }"));
    }
    std::vector<TestCase> tests;
    for (int j = 0; j < 6; ++j) {
        tests.push_back(test("t" + std::to_string(j), j,
                             "[ \"$(f " + std::to_string(j) + ")\" = " + std::to_string(j * (j % 5)) + " ]"));
    }
    std::vector<ExecutionOutcome> reference;
    for (const auto& c : cands) {
        for (const auto& t : tests) reference.push_back(execute_one(c, t, policy));
    }
    std::sort(reference.begin(), reference.end(), [](const auto& a, const auto& b) {
        return std::tie(a.candidate_id, a.ordinal) < std::tie(b.candidate_id, b.ordinal);
    });
    auto parallel = execute_pool(cands, tests, policy, 4);
    REQUIRE(parallel.size() == reference.size());
    for (std::size_t i = 0; i < parallel.size(); ++i) {
        CHECK(parallel[i].candidate_id == reference[i].candidate_id);
        CHECK(parallel[i].ordinal == reference[i].ordinal);
        CHECK(parallel[i].status == reference[i].status);
        const int ci = std::stoi(parallel[i].candidate_id.substr(1));
        const int j = parallel[i].ordinal;
        CHECK((parallel[i].status == ExecStatus::pass) == (ci * j == j * (j % 5)));
    }
}

TEST_CASE("execute_pool rejects mixed problems and bad parallelism") {
    TempDir scratch;
    auto policy = sh_policy(scratch);
    CHECK_THROWS_AS(execute_pool({cand("a", "exit 0", "p1")}, {test("t", 0, "", "p2")}, policy, 1), Error);
    CHECK_THROWS_AS(execute_pool({cand("a", "exit 0")}, {test("t", 0, "")}, policy, 0), Error);
    CHECK(execute_pool({}, {}, policy, 2).empty());
}

TEST_CASE("signature_of examples") {
    CHECK(signature_of({outcome("c", 0, ExecStatus::pass), outcome("c", 1, ExecStatus::pass),
                        outcome("c", 2, ExecStatus::pass)},
                       3)
              .str() == "111");
    CHECK(signature_of({outcome("c", 2, ExecStatus::fail), outcome("c", 0, ExecStatus::pass),
                        outcome("c", 1, ExecStatus::error)},
                       3)
              .str() == "100");
}

TEST_CASE("property: signature bits are the elementwise pass map") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<ExecutionOutcome> outs;
        std::string expected;
        for (int j = 0; j < 20; ++j) {
            auto s = static_cast<ExecStatus>(rng() % 4);
            outs.push_back(outcome("c", j, s));
            expected.push_back(s == ExecStatus::pass ? '1' : '0');
        }
        std::shuffle(outs.begin(), outs.end(), rng);
        CHECK(signature_of(outs, 20).str() == expected);

        // Appending a test keeps the existing bits.
        auto s21 = static_cast<ExecStatus>(rng() % 4);
        outs.push_back(outcome("c", 20, s21));
        CHECK(signature_of(outs, 21).str() == expected + (s21 == ExecStatus::pass ? "1" : "0"));
    }
}

TEST_CASE("signature_of rejects incomplete coverage") {
    auto check_incomplete = [](const std::vector<ExecutionOutcome>& outs, std::size_t m) {
        try {
            (void)signature_of(outs, m);
            FAIL("expected IncompleteOutcomes");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::IncompleteOutcomes);
        }
    };
    check_incomplete({outcome("c", 0, ExecStatus::pass)}, 2);
    check_incomplete({outcome("c", 0, ExecStatus::pass), outcome("c", 0, ExecStatus::pass)}, 2);
    check_incomplete({outcome("c", 0, ExecStatus::pass), outcome("c", 5, ExecStatus::pass)}, 2);
    check_incomplete({outcome("c", 0, ExecStatus::pass), outcome("d", 1, ExecStatus::pass)}, 2);
}

TEST_CASE("execution_success_rate examples") {
    std::vector<ExecutionOutcome> outs;
    for (int j = 0; j < 100; ++j) outs.push_back(outcome("c", j, j < 21 ? ExecStatus::error : ExecStatus::fail));
    CHECK(execution_success_rate(outs) == doctest::Approx(0.79).epsilon(1e-15));

    std::vector<ExecutionOutcome> passes(5, outcome("c", 0, ExecStatus::pass));
    CHECK(execution_success_rate(passes) == 1.0);
    CHECK(pass_fraction(passes) == 1.0);

    std::vector<ExecutionOutcome> timeouts(5, outcome("c", 0, ExecStatus::timeout));
    CHECK(execution_success_rate(timeouts) == 0.0);

    try {
        (void)execution_success_rate({});
        FAIL("expected EmptyOutcomes");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyOutcomes);
    }
}
