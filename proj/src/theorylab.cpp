#include "selfprobe/theorylab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <thread>

#include <boost/math/distributions/students_t.hpp>

#include "selfprobe/error.hpp"
#include "selfprobe/parallel.hpp"

namespace selfprobe::theorylab {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorCode::InvalidParams, what);
}

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::size_t worker_count(int requested) {
    if (requested > 0) return static_cast<std::size_t>(requested);
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Mean that is exact when every value is identical.
double stable_mean(const std::vector<double>& xs) {
    double m = 0.0;
    std::size_t k = 0;
    for (double x : xs) {
        ++k;
        m += (x - m) / static_cast<double>(k);
    }
    return m;
}

}  // namespace

int min_tests_bound(long long n, long long k, double p) {
    require(k >= 1 && k <= n, "min_tests_bound requires 1 <= k <= n");
    require(p > 0.0 && p < 1.0, "min_tests_bound requires 0 < p < 1");
    if (k == n) return 0;
    const double raw = std::log(static_cast<double>(n) / static_cast<double>(k)) / -std::log(p);
    // log ratios of exact powers can overshoot an integer by an ulp.
    return static_cast<int>(std::ceil(raw - 1e-9 * std::max(1.0, raw)));
}

double correctness_lower_bound(long long n, int m, double p, double delta) {
    require(n >= 1, "correctness_lower_bound requires n >= 1");
    require(m >= 0, "correctness_lower_bound requires m >= 0");
    require(p > 0.0 && p < 1.0, "correctness_lower_bound requires 0 < p < 1");
    require(delta >= 0.0 && delta < 1.0, "correctness_lower_bound requires 0 <= delta < 1");
    const double nn = static_cast<double>(n);
    return std::max(0.0, 1.0 - delta - nn * nn * std::pow(p, m));
}

void ConsensusSimParams::validate() const {
    require(k >= 1 && k <= n, "consensus simulation requires 1 <= k <= n");
    require(p > 0.0 && p < 1.0, "consensus simulation requires 0 < p < 1");
    require(m >= 1, "consensus simulation requires m >= 1");
    require(trials >= 1, "consensus simulation requires trials >= 1");
}

SimReport simulate_consensus(const ConsensusSimParams& params) {
    params.validate();
    const auto labels = static_cast<std::uint32_t>(std::ceil(1.0 / params.p - 1e-9));
    const int width = labels < 256 ? 1 : (labels < 65536 ? 2 : 4);
    const auto m = static_cast<std::size_t>(params.m);
    const std::string correct_key(m * static_cast<std::size_t>(width), '\0');

    std::vector<std::string> ids(static_cast<std::size_t>(params.n));
    for (int i = 0; i < params.n; ++i) ids[static_cast<std::size_t>(i)] = std::to_string(i);

    std::vector<std::uint8_t> success(static_cast<std::size_t>(params.trials), 0);
    parallel_for(success.size(), worker_count(params.workers), [&](std::size_t trial) {
        std::mt19937_64 rng(derive_seed(params.rng_seed, trial));
        std::uniform_int_distribution<std::uint32_t> label(1, labels);
        std::vector<std::pair<std::string, std::string>> items;
        items.reserve(ids.size());
        for (int i = 0; i < params.n; ++i) {
            if (i < params.k) {
                items.emplace_back(ids[static_cast<std::size_t>(i)], correct_key);
                continue;
            }
            std::string key(correct_key.size(), '\0');
            for (std::size_t j = 0; j < m; ++j) {
                const std::uint32_t v = label(rng);
                for (int b = 0; b < width; ++b) {
                    key[j * static_cast<std::size_t>(width) + static_cast<std::size_t>(b)] =
                        static_cast<char>((v >> (8 * b)) & 0xFF);
                }
            }
            items.emplace_back(ids[static_cast<std::size_t>(i)], std::move(key));
        }
        const auto clusters = consensus::group_by_key(items);
        const bool strict = clusters.size() == 1 || clusters[1].second.size() < clusters[0].second.size();
        success[trial] = clusters[0].first == correct_key && strict ? 1 : 0;
    });

    SimReport r;
    r.trials = params.trials;
    for (auto s : success) r.correct_trials += s;
    r.empirical_correct_rate = static_cast<double>(r.correct_trials) / static_cast<double>(r.trials);
    r.bound = correctness_lower_bound(params.n, params.m, params.p, 0.0);
    const double nn = static_cast<double>(params.n);
    r.vacuous = nn * nn * std::pow(params.p, params.m) >= 1.0;
    r.standard_error = std::sqrt(r.bound * (1.0 - r.bound) / static_cast<double>(r.trials));
    r.bound_satisfied = r.empirical_correct_rate >= r.bound - 3.0 * r.standard_error;
    return r;
}

std::vector<SweepRow> run_sweep(const SweepSpec& spec) {
    std::vector<SweepRow> rows;
    for (int n : spec.ns) {
        for (int k : spec.ks) {
            for (double p : spec.ps) {
                const int base = min_tests_bound(n, k, p);
                for (int offset : spec.m_offsets) {
                    SweepRow row;
                    row.min_tests = base;
                    row.params.n = n;
                    row.params.k = k;
                    row.params.p = p;
                    row.params.m = std::max(1, base + offset);
                    row.params.trials = spec.trials;
                    row.params.workers = spec.workers;
                    char coords[96];
                    std::snprintf(coords, sizeof coords, "%d|%d|%.17g|%d", n, k, p, row.params.m);
                    row.params.rng_seed = derive_seed(spec.rng_seed, content_hash(coords));
                    row.report = simulate_consensus(row.params);
                    rows.push_back(std::move(row));
                }
            }
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Synthetic pools

namespace {

void validate_model(const SyntheticPoolModel& model) {
    require(model.tests_per_candidate >= 1, "tests_per_candidate must be >= 1");
    require(model.candidates_per_problem >= 1, "candidates_per_problem must be >= 1");
    require(model.error_share >= 0.0 && model.error_share <= 1.0, "error_share must lie in [0, 1]");
    try {
        model.selection.validate();
    } catch (const Error& e) {
        throw Error(ErrorCode::InvalidParams, e.what());
    }
}

class QualityDraw {
public:
    QualityDraw(double mean, double concentration) : mean_(mean) {
        const double a = mean * concentration;
        const double b = (1.0 - mean) * concentration;
        point_mass_ = !std::isfinite(concentration) || !(a > 0.0) || !(b > 0.0);
        if (!point_mass_) {
            ga_ = std::gamma_distribution<double>(a, 1.0);
            gb_ = std::gamma_distribution<double>(b, 1.0);
        }
    }
    double operator()(std::mt19937_64& rng) {
        if (point_mass_) return mean_;
        const double x = ga_(rng);
        const double y = gb_(rng);
        if (!(x + y > 0.0)) return mean_;
        return x / (x + y);
    }

private:
    double mean_;
    bool point_mass_ = true;
    std::gamma_distribution<double> ga_;
    std::gamma_distribution<double> gb_;
};

std::string member_id(std::size_t i) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "c%08zu", i);
    return buf;
}

/// Executes qualities[i] against the synthetic suite. Ids sort in index order.
std::vector<consensus::PoolMember> synthetic_pool(const std::vector<double>& qualities, const SyntheticPoolModel& model,
                                                  std::mt19937_64& rng) {
    std::vector<consensus::PoolMember> pool;
    pool.reserve(qualities.size());
    const auto m = static_cast<std::size_t>(model.tests_per_candidate);
    for (std::size_t i = 0; i < qualities.size(); ++i) {
        std::vector<bool> bits(m);
        std::size_t executed = 0;
        std::size_t passed = 0;
        for (std::size_t j = 0; j < m; ++j) {
            const bool pass = unit(rng) < qualities[i];
            const bool error = !pass && unit(rng) < model.error_share;
            bits[j] = pass;
            passed += pass ? 1 : 0;
            executed += error ? 0 : 1;
        }
        consensus::PoolMember member;
        member.candidate_id = member_id(i);
        member.signature = ExecutionSignature(bits);
        member.e = static_cast<double>(executed) / static_cast<double>(m);
        member.pass_fraction = static_cast<double>(passed) / static_cast<double>(m);
        pool.push_back(std::move(member));
    }
    return pool;
}

std::size_t index_of(const std::string& id) { return static_cast<std::size_t>(std::stoull(id.substr(1))); }

}  // namespace

void DynamicsSimParams::validate() const {
    require(initial_quality_mean > 0.0 && initial_quality_mean < 1.0, "initial_quality_mean must lie in (0, 1)");
    require(initial_quality_concentration > 0.0, "initial_quality_concentration must be > 0");
    require(pool_size >= 1, "pool_size must be >= 1");
    require(iterations >= 1, "iterations must be >= 1");
    validate_model(model);
}

std::vector<DynamicsRecord> simulate_dynamics(const DynamicsSimParams& params) {
    params.validate();
    std::vector<DynamicsRecord> records;
    double mean = params.initial_quality_mean;
    const auto per = static_cast<std::size_t>(params.model.candidates_per_problem);
    for (int t = 0; t < params.iterations; ++t) {
        std::mt19937_64 rng(derive_seed(params.rng_seed, static_cast<std::uint64_t>(t)));
        QualityDraw draw(mean, params.initial_quality_concentration);
        std::vector<double> selected;
        for (std::size_t start = 0; start < static_cast<std::size_t>(params.pool_size); start += per) {
            const std::size_t size = std::min(per, static_cast<std::size_t>(params.pool_size) - start);
            std::vector<double> qualities(size);
            for (auto& q : qualities) q = draw(rng);
            const auto pool = synthetic_pool(qualities, params.model, rng);
            const auto result = consensus::select_hierarchical("synthetic", pool, params.model.selection);
            if (!result.cluster) continue;
            for (const auto& id : result.cluster->member_ids) selected.push_back(qualities[index_of(id)]);
        }
        DynamicsRecord rec;
        rec.iteration = t;
        rec.mean_quality = mean;
        rec.selected_count = static_cast<int>(selected.size());
        const double next = selected.empty() ? mean : stable_mean(selected);
        rec.delta = next - mean;
        records.push_back(rec);
        mean = next;
    }
    return records;
}

void QualityLiftParams::validate() const {
    require(quality_mean > 0.0 && quality_mean < 1.0, "quality_mean must lie in (0, 1)");
    require(quality_concentration > 0.0, "quality_concentration must be > 0");
    require(pools >= 1, "pools must be >= 1");
    validate_model(model);
}

std::pair<double, double> one_sided_t_test(const std::vector<double>& values) {
    if (values.size() < 2) throw Error(ErrorCode::DegenerateInput, "t-test needs at least two values");
    const double n = static_cast<double>(values.size());
    const double mean = stable_mean(values);
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    if (sd == 0.0) {
        if (mean == 0.0) throw Error(ErrorCode::DegenerateInput, "t-test on constant zero values");
        return mean > 0 ? std::pair{std::numeric_limits<double>::infinity(), 0.0}
                        : std::pair{-std::numeric_limits<double>::infinity(), 1.0};
    }
    const double t = mean / (sd / std::sqrt(n));
    const boost::math::students_t dist(n - 1.0);
    return {t, boost::math::cdf(boost::math::complement(dist, t))};
}

QualityLiftReport simulate_quality_lift(const QualityLiftParams& params) {
    params.validate();
    QualityLiftReport report;
    for (int i = 0; i < params.pools; ++i) {
        std::mt19937_64 rng(derive_seed(params.rng_seed, static_cast<std::uint64_t>(i)));
        QualityDraw draw(params.quality_mean, params.quality_concentration);
        std::vector<double> qualities(static_cast<std::size_t>(params.model.candidates_per_problem));
        for (auto& q : qualities) q = draw(rng);
        const auto pool = synthetic_pool(qualities, params.model, rng);
        const auto result = consensus::select_hierarchical("synthetic", pool, params.model.selection);
        if (!result.selected) {
            ++report.rejected_pools;
            continue;
        }
        ++report.accepted_pools;
        report.deltas.push_back(qualities[index_of(*result.selected)] - stable_mean(qualities));
    }
    report.mean_delta = report.deltas.empty() ? 0.0 : stable_mean(report.deltas);
    try {
        std::tie(report.t_statistic, report.p_value) = one_sided_t_test(report.deltas);
    } catch (const Error&) {
        report.t_statistic = 0.0;
        report.p_value = 1.0;
    }
    return report;
}

}  // namespace selfprobe::theorylab
