#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "selfprobe/error.hpp"
#include "selfprobe/theorylab.hpp"

using namespace selfprobe;
using namespace selfprobe::theorylab;

namespace {

/// Smallest m >= 0 with m * (-log p) >= log(n/k), found by search in extended precision.
int search_min_tests(long long n, long long k, double p) {
    const long double need = std::log(static_cast<long double>(n) / static_cast<long double>(k));
    const long double step = -std::log(static_cast<long double>(p));
    int m = 0;
    while (static_cast<long double>(m) * step < need * (1.0L - 1e-12L)) ++m;
    return m;
}

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("min_tests_bound: examples") {
    CHECK(min_tests_bound(128, 16, 0.5) == 3);
    CHECK(min_tests_bound(50, 50, 0.3) == 0);
    CHECK(min_tests_bound(100, 1, 0.1) == 2);
    CHECK(code_of([] { min_tests_bound(10, 0, 0.5); }) == ErrorCode::InvalidParams);
    CHECK(code_of([] { min_tests_bound(10, 11, 0.5); }) == ErrorCode::InvalidParams);
    CHECK(code_of([] { min_tests_bound(10, 2, 1.0); }) == ErrorCode::InvalidParams);
    CHECK(code_of([] { min_tests_bound(10, 2, 0.0); }) == ErrorCode::InvalidParams);
}

TEST_CASE("min_tests_bound: matches search and is monotone") {
    const double ps[] = {0.01, 0.05, 0.1, 0.2, 0.25, 0.3, 0.5, 0.7, 0.9, 0.99};
    for (long long n : {2LL, 7LL, 50LL, 64LL, 100LL, 128LL, 1000LL}) {
        for (double p : ps) {
            int prev = std::numeric_limits<int>::max();
            for (long long k = 1; k <= n; k += (n > 100 ? 37 : 1)) {
                const int b = min_tests_bound(n, k, p);
                CHECK(b == search_min_tests(n, k, p));
                CHECK(b <= prev);  // non-increasing in k
                prev = b;
            }
        }
        for (long long k : {1LL, n / 2 + 1}) {
            int prev = -1;
            for (auto it = std::rbegin(ps); it != std::rend(ps); ++it) {  // -log p increasing
                const int b = min_tests_bound(n, k, *it);
                if (prev >= 0) CHECK(b <= prev);
                prev = b;
            }
        }
    }
}

TEST_CASE("correctness_lower_bound: examples and limits") {
    CHECK(correctness_lower_bound(100, 6, 0.1, 0.01) == doctest::Approx(0.98).epsilon(1e-12));
    CHECK(correctness_lower_bound(100, 2, 0.5, 0.0) == 0.0);
    double prev = -1.0;
    for (int m = 0; m < 60; ++m) {
        const double b = correctness_lower_bound(50, m, 0.25, 0.0);
        CHECK(b >= prev);
        prev = b;
    }
    CHECK(prev == doctest::Approx(1.0));
    CHECK(code_of([] { correctness_lower_bound(10, 3, 0.5, 1.0); }) == ErrorCode::InvalidParams);
    CHECK(code_of([] { correctness_lower_bound(10, 3, 1.5, 0.0); }) == ErrorCode::InvalidParams);
}

TEST_CASE("simulate_consensus: all correct is exactly 1") {
    ConsensusSimParams p;
    p.n = 20;
    p.k = 20;
    p.p = 0.5;
    p.m = 3;
    p.trials = 500;
    auto r = simulate_consensus(p);
    CHECK(r.empirical_correct_rate == 1.0);
    CHECK(r.correct_trials == 500);
}

TEST_CASE("simulate_consensus: two incorrect candidates match the closed form") {
    // n=4, k=2: the incorrect pair ties the correct cluster exactly when they
    // collide on every test, which happens with probability L^-m.
    for (auto [prob, m] : {std::pair{0.5, 1}, std::pair{0.5, 3}, std::pair{0.25, 2}}) {
        ConsensusSimParams p;
        p.n = 4;
        p.k = 2;
        p.p = prob;
        p.m = m;
        p.trials = 20000;
        p.rng_seed = 11;
        const double labels = std::ceil(1.0 / prob);
        const double expected = 1.0 - std::pow(labels, -m);
        const double se = std::sqrt(expected * (1 - expected) / p.trials);
        auto r = simulate_consensus(p);
        INFO("p=" << prob << " m=" << m);
        CHECK(std::abs(r.empirical_correct_rate - expected) <= 4 * se);
    }
}

TEST_CASE("simulate_consensus: respects the bound on the reference point") {
    ConsensusSimParams p;
    p.n = 100;
    p.k = 10;
    p.p = 0.1;
    p.m = 6;
    p.trials = 10000;
    p.rng_seed = 3;
    auto r = simulate_consensus(p);
    CHECK(r.bound == doctest::Approx(0.99).epsilon(1e-12));
    CHECK(!r.vacuous);
    CHECK(r.bound_satisfied);
    CHECK(r.empirical_correct_rate >= 0.98);
}

TEST_CASE("simulate_consensus: more tests help below the bound") {
    ConsensusSimParams p;
    p.n = 100;
    p.k = 10;
    p.p = 0.5;
    p.trials = 3000;
    p.rng_seed = 5;
    p.m = min_tests_bound(p.n, p.k, p.p) - 2;
    const double low = simulate_consensus(p).empirical_correct_rate;
    p.m += 4;
    const double high = simulate_consensus(p).empirical_correct_rate;
    CHECK(high > low + 0.1);
}

TEST_CASE("simulate_consensus: reproducible and independent of worker count") {
    ConsensusSimParams p;
    p.n = 50;
    p.k = 5;
    p.p = 0.25;
    p.m = 4;
    p.trials = 2000;
    p.rng_seed = 99;
    p.workers = 1;
    const auto a = simulate_consensus(p);
    p.workers = 4;
    const auto b = simulate_consensus(p);
    CHECK(a.correct_trials == b.correct_trials);
    p.rng_seed = 100;
    CHECK(simulate_consensus(p).trials == 2000);
    CHECK(code_of([&] {
              auto q = p;
              q.trials = 0;
              simulate_consensus(q);
          }) == ErrorCode::InvalidParams);
}

TEST_CASE("run_sweep: grid order and per-point seeds") {
    SweepSpec spec;
    spec.ns = {20};
    spec.ks = {2, 5};
    spec.ps = {0.5};
    spec.m_offsets = {0, 2};
    spec.trials = 200;
    auto rows = run_sweep(spec);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].params.k == 2);
    CHECK(rows[1].params.m == rows[0].params.m + 2);
    CHECK(rows[0].min_tests == min_tests_bound(20, 2, 0.5));
    CHECK(rows[0].params.rng_seed != rows[1].params.rng_seed);
    auto again = run_sweep(spec);
    for (std::size_t i = 0; i < rows.size(); ++i) CHECK(rows[i].report.correct_trials == again[i].report.correct_trials);
}

TEST_CASE("simulate_dynamics: point mass keeps its mean exactly") {
    DynamicsSimParams p;
    p.initial_quality_mean = 0.3;
    p.initial_quality_concentration = std::numeric_limits<double>::infinity();
    p.pool_size = 2000;
    p.iterations = 4;
    auto trace = simulate_dynamics(p);
    REQUIRE(trace.size() == 4);
    for (const auto& r : trace) {
        CHECK(r.mean_quality == 0.3);
        CHECK(r.delta == 0.0);
    }
}

TEST_CASE("simulate_dynamics: single iteration lifts, traces are non-decreasing") {
    DynamicsSimParams p;
    p.iterations = 1;
    auto one = simulate_dynamics(p);
    REQUIRE(one.size() == 1);
    CHECK(one[0].delta >= 0.0);

    p.iterations = 5;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        p.rng_seed = seed;
        auto trace = simulate_dynamics(p);
        REQUIRE(trace.size() == 5);
        for (std::size_t i = 0; i < trace.size(); ++i) {
            CHECK(trace[i].delta >= 0.0);
            if (i > 0) CHECK(trace[i].mean_quality >= trace[i - 1].mean_quality);
        }
        CHECK(trace.back().mean_quality > trace.front().mean_quality);
    }
    p.rng_seed = 3;
    auto a = simulate_dynamics(p);
    auto b = simulate_dynamics(p);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].mean_quality == b[i].mean_quality);
}

TEST_CASE("simulate_dynamics: invalid params") {
    DynamicsSimParams p;
    p.initial_quality_mean = 1.0;
    CHECK(code_of([&] { simulate_dynamics(p); }) == ErrorCode::InvalidParams);
    p.initial_quality_mean = 0.5;
    p.initial_quality_concentration = 0.0;
    CHECK(code_of([&] { simulate_dynamics(p); }) == ErrorCode::InvalidParams);
    p.initial_quality_concentration = 2.0;
    p.model.selection.rho = 0.0;
    CHECK(code_of([&] { simulate_dynamics(p); }) == ErrorCode::InvalidParams);
}

TEST_CASE("one_sided_t_test: reference values") {
    auto [t1, p1] = one_sided_t_test({1, 2, 3, 4, 5});
    CHECK(t1 == doctest::Approx(4.242640687119285).epsilon(1e-12));
    CHECK(p1 == doctest::Approx(0.0066177997818413475).epsilon(1e-9));
    auto [t2, p2] = one_sided_t_test({0.5, -0.2, 0.1, 0.3});
    CHECK(t2 == doctest::Approx(1.1721057015904899).epsilon(1e-12));
    CHECK(p2 == doctest::Approx(0.16288285526747626).epsilon(1e-9));
    CHECK(code_of([] { one_sided_t_test({1.0}); }) == ErrorCode::DegenerateInput);
    CHECK(code_of([] { one_sided_t_test({0.0, 0.0}); }) == ErrorCode::DegenerateInput);
}

TEST_CASE("simulate_quality_lift: selected quality beats the pool mean") {
    QualityLiftParams p;
    p.pools = 200;
    p.rng_seed = 1;
    auto r = simulate_quality_lift(p);
    CHECK(r.accepted_pools + r.rejected_pools == 200);
    CHECK(r.accepted_pools > 150);
    CHECK(r.mean_delta > 0.0);
    CHECK(r.p_value < 0.01);
}
