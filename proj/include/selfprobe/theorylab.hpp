#pragma once

// Monte Carlo checks of the consensus-convergence guarantee and simulations of
// the self-training quality lift.

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "selfprobe/consensus.hpp"

namespace selfprobe::theorylab {

/// Smallest suite size for which the largest cluster is provably correct:
/// ceil(log(n/k) / -log p). Throws InvalidParams unless 1 <= k <= n and 0 < p < 1.
int min_tests_bound(long long n, long long k, double p);

/// max(0, 1 - delta - n^2 p^m). Throws InvalidParams.
double correctness_lower_bound(long long n, int m, double p, double delta);

struct ConsensusSimParams {
    int n = 100;
    int k = 10;
    double p = 0.1;
    int m = 6;
    int trials = 10000;
    std::uint64_t rng_seed = 0;
    int workers = 0;  // 0: hardware concurrency; results do not depend on it

    void validate() const;
};

struct SimReport {
    double empirical_correct_rate = 0.0;
    double bound = 0.0;
    bool bound_satisfied = false;
    bool vacuous = false;           // n^2 p^m >= 1
    double standard_error = 0.0;    // binomial, evaluated at the bound
    int trials = 0;
    int correct_trials = 0;
};

/// Plants k all-correct candidates and n-k incorrect ones whose per-test
/// output label is uniform over ceil(1/p) symbols other than the correct one.
/// A trial succeeds when the correct cluster is strictly the largest.
SimReport simulate_consensus(const ConsensusSimParams& params);

struct SweepSpec {
    std::vector<int> ns{50, 100, 128};
    std::vector<int> ks{5, 10, 25};
    std::vector<double> ps{0.1, 0.25, 0.5};
    std::vector<int> m_offsets{0, 2, 6};  // added to min_tests_bound(n, k, p)
    int trials = 10000;
    std::uint64_t rng_seed = 0;
    int workers = 0;
};

struct SweepRow {
    ConsensusSimParams params;
    int min_tests = 0;
    SimReport report;
};

/// Every grid point, in (n, k, p, offset) order. Each point gets its own
/// seed derived from rng_seed and the point's coordinates.
std::vector<SweepRow> run_sweep(const SweepSpec& spec);

// ---------------------------------------------------------------------------
// Quality dynamics

enum class LiftEstimator { consensus_proxy };

/// Synthetic candidate pool: quality Q ~ Beta with the given mean and
/// concentration (infinite concentration is a point mass). Each synthetic
/// test passes with probability Q; otherwise it errors with probability
/// error_share and fails cleanly the rest of the time.
struct SyntheticPoolModel {
    int tests_per_candidate = 10;
    int candidates_per_problem = 100;
    double error_share = 0.5;
    consensus::SelectionConfig selection{};
};

struct DynamicsSimParams {
    double initial_quality_mean = 0.5;
    double initial_quality_concentration = 2.0;
    int pool_size = 10000;
    int iterations = 5;
    LiftEstimator lift_estimator = LiftEstimator::consensus_proxy;
    std::uint64_t rng_seed = 0;
    SyntheticPoolModel model{};

    void validate() const;
};

struct DynamicsRecord {
    int iteration = 0;
    double mean_quality = 0.0;  // quality mean of the pool drawn this iteration
    double delta = 0.0;         // next mean minus this mean
    int selected_count = 0;
};

/// Each iteration draws pool_size qualities around the current mean, splits
/// them into problems, runs hierarchical selection on the synthetic
/// signatures, and takes the mean quality of the winning clusters' members as
/// the next mean. An iteration that selects nothing keeps the mean.
std::vector<DynamicsRecord> simulate_dynamics(const DynamicsSimParams& params);

struct QualityLiftParams {
    double quality_mean = 0.5;
    double quality_concentration = 2.0;
    int pools = 1000;
    std::uint64_t rng_seed = 0;
    SyntheticPoolModel model{};

    void validate() const;
};

struct QualityLiftReport {
    std::vector<double> deltas;  // Q(selected) - mean Q of its pool, per accepted pool
    int accepted_pools = 0;
    int rejected_pools = 0;
    double mean_delta = 0.0;
    double t_statistic = 0.0;
    double p_value = 1.0;  // one-sided, H1: mean delta > 0
};

/// Draws independent pools, selects one candidate per pool hierarchically and
/// tests whether the selected quality exceeds the pool mean.
QualityLiftReport simulate_quality_lift(const QualityLiftParams& params);

/// One-sided one-sample t-test of mean > 0. Returns {t, p}. Throws
/// DegenerateInput for fewer than two values or zero variance with zero mean.
std::pair<double, double> one_sided_t_test(const std::vector<double>& values);

}  // namespace selfprobe::theorylab
