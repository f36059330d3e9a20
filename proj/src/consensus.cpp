#include "selfprobe/consensus.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace selfprobe::consensus {

namespace {

// Mean-e comparisons between clusters treat differences below this as ties,
// so the outcome does not depend on floating summation order.
constexpr double kMeanTieEpsilon = 1e-12;

SelectionResult rejected(const std::string& problem_id, SelectionStrategy strategy, RejectionReason reason) {
    SelectionResult r;
    r.problem_id = problem_id;
    r.strategy = strategy;
    r.rejection_reason = reason;
    return r;
}

double mean_e(const std::vector<const PoolMember*>& members) {
    std::vector<double> es;
    es.reserve(members.size());
    for (const auto* m : members) es.push_back(m->e);
    std::sort(es.begin(), es.end());
    return std::accumulate(es.begin(), es.end(), 0.0) / static_cast<double>(es.size());
}

double f_or_inf(const PoolMember& m) { return m.f.value_or(std::numeric_limits<double>::infinity()); }

std::vector<const PoolMember*> sorted_by_id(const std::vector<const PoolMember*>& members) {
    auto out = members;
    std::sort(out.begin(), out.end(),
              [](const PoolMember* a, const PoolMember* b) { return a->candidate_id < b->candidate_id; });
    return out;
}

const PoolMember* seeded_pick(const std::vector<const PoolMember*>& members, const SelectionConfig& cfg,
                              const std::string& problem_id) {
    auto ordered = sorted_by_id(members);
    std::mt19937_64 rng(derive_seed(cfg.rng_seed, content_hash(problem_id)));
    std::uniform_int_distribution<std::size_t> pick(0, ordered.size() - 1);
    return ordered[pick(rng)];
}

int signature_cluster_size(const PoolMember& who, const std::vector<PoolMember>& pool) {
    return static_cast<int>(std::count_if(pool.begin(), pool.end(),
                                          [&](const PoolMember& m) { return m.signature == who.signature; }));
}

ConsensusCluster signature_cluster_of(const PoolMember& who, const std::vector<PoolMember>& pool) {
    ConsensusCluster c;
    c.signature = who.signature;
    for (const auto& m : pool) {
        if (m.signature == who.signature) c.member_ids.push_back(m.candidate_id);
    }
    return c;
}

SelectionResult accepted(const std::string& problem_id, SelectionStrategy strategy, const PoolMember& chosen,
                         int s, std::optional<ConsensusCluster> cluster) {
    SelectionResult r;
    r.problem_id = problem_id;
    r.strategy = strategy;
    r.selected = chosen.candidate_id;
    r.cluster = std::move(cluster);
    r.scores = QualityScores{chosen.e, s, chosen.f};
    return r;
}

void check_lengths(const std::vector<PoolMember>& pool) {
    for (const auto& m : pool) {
        if (m.signature.size() != pool.front().signature.size()) {
            throw Error(ErrorCode::MixedSignatureLengths, "pool mixes signature lengths");
        }
    }
}

}  // namespace

void SelectionConfig::validate() const {
    if (!(rho > 0.0 && rho <= 1.0)) throw Error(ErrorCode::InvalidArgument, "rho must lie in (0, 1]");
    if (tau < 1) throw Error(ErrorCode::InvalidArgument, "tau must be >= 1");
    if (!(success_rate_threshold >= 0.0 && success_rate_threshold <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "success_rate_threshold must lie in [0, 1]");
    }
}

std::vector<ConsensusCluster> cluster_by_signature(
    const std::vector<std::pair<std::string, ExecutionSignature>>& pool) {
    for (const auto& [id, sig] : pool) {
        if (sig.size() != pool.front().second.size()) {
            throw Error(ErrorCode::MixedSignatureLengths,
                        "signature of " + id + " has length " + std::to_string(sig.size()) + ", expected " +
                            std::to_string(pool.front().second.size()));
        }
    }
    std::vector<ConsensusCluster> out;
    for (auto& [sig, members] : group_by_key(pool)) {
        out.push_back(ConsensusCluster{std::move(sig), std::move(members)});
    }
    return out;
}

int consensus_strength(const std::string& candidate_id, const std::vector<ConsensusCluster>& clusters) {
    for (const auto& c : clusters) {
        if (std::find(c.member_ids.begin(), c.member_ids.end(), candidate_id) != c.member_ids.end()) {
            return static_cast<int>(c.size());
        }
    }
    throw Error(ErrorCode::UnknownCandidate, candidate_id);
}

double perplexity(const std::vector<double>& token_logprobs) {
    if (token_logprobs.empty()) throw Error(ErrorCode::EmptyTokenList, "no token logprobs");
    double sum = 0.0;
    for (double lp : token_logprobs) {
        if (!(lp <= 0.0)) throw Error(ErrorCode::PositiveLogprob, "logprob " + std::to_string(lp) + " > 0");
        sum += lp;
    }
    return std::max(1.0, std::exp(-sum / static_cast<double>(token_logprobs.size())));
}

SelectionResult select_hierarchical(const std::string& problem_id, const std::vector<PoolMember>& pool,
                                    const SelectionConfig& cfg) {
    cfg.validate();
    const auto strategy = SelectionStrategy::consensus;
    if (pool.empty()) return rejected(problem_id, strategy, RejectionReason::empty_pool);
    check_lengths(pool);

    // Stage 1: reliability filter.
    std::vector<const PoolMember*> reliable;
    for (const auto& m : pool) {
        if (m.e >= cfg.rho) reliable.push_back(&m);
    }
    if (reliable.empty()) return rejected(problem_id, strategy, RejectionReason::all_filtered);

    // Stage 2: largest non-trivial cluster.
    std::map<ExecutionSignature, std::vector<const PoolMember*>> groups;
    for (const auto* m : reliable) groups[m->signature].push_back(m);

    const std::vector<const PoolMember*>* best = nullptr;
    const ExecutionSignature* best_sig = nullptr;
    double best_mean = 0.0;
    for (const auto& [sig, members] : groups) {  // ascending signature order
        if (static_cast<int>(members.size()) < cfg.tau) continue;
        const double mean = mean_e(members);
        const bool better = !best || members.size() > best->size() ||
                            (members.size() == best->size() && mean > best_mean + kMeanTieEpsilon);
        if (better) {
            best = &members;
            best_sig = &sig;
            best_mean = mean;
        }
    }
    if (!best) return rejected(problem_id, strategy, RejectionReason::no_nontrivial_cluster);

    // Stage 3: lexicographic argmax of (e, -f) inside the cluster.
    const PoolMember* chosen = nullptr;
    for (const auto* m : *best) {
        if (!chosen) {
            chosen = m;
            continue;
        }
        const double fm = f_or_inf(*m), fc = f_or_inf(*chosen);
        if (m->e > chosen->e || (m->e == chosen->e && (fm < fc || (fm == fc && m->candidate_id < chosen->candidate_id)))) {
            chosen = m;
        }
    }

    ConsensusCluster cluster{*best_sig, {}};
    for (const auto* m : *best) cluster.member_ids.push_back(m->candidate_id);
    return accepted(problem_id, strategy, *chosen, static_cast<int>(best->size()), std::move(cluster));
}

SelectionResult select_baseline(const std::string& problem_id, const std::vector<PoolMember>& pool,
                                const SelectionConfig& cfg) {
    cfg.validate();
    const auto strategy = cfg.strategy;
    if (strategy == SelectionStrategy::consensus) {
        throw Error(ErrorCode::InvalidArgument, "select_baseline does not handle the consensus strategy");
    }
    if (pool.empty()) return rejected(problem_id, strategy, RejectionReason::empty_pool);
    check_lengths(pool);

    std::vector<const PoolMember*> all;
    for (const auto& m : pool) all.push_back(&m);

    switch (strategy) {
        case SelectionStrategy::random: {
            std::vector<const PoolMember*> passing;
            for (const auto* m : all) {
                if (m->signature.all_pass()) passing.push_back(m);
            }
            const auto* chosen = seeded_pick(passing.empty() ? all : passing, cfg, problem_id);
            return accepted(problem_id, strategy, *chosen, signature_cluster_size(*chosen, pool),
                            signature_cluster_of(*chosen, pool));
        }
        case SelectionStrategy::cluster: {
            const bool have_outputs =
                std::all_of(pool.begin(), pool.end(), [](const PoolMember& m) { return m.output_key.has_value(); });
            if (!have_outputs) {
                std::vector<std::pair<std::string, ExecutionSignature>> keyed;
                for (const auto& m : pool) keyed.emplace_back(m.candidate_id, m.signature);
                const auto clusters = cluster_by_signature(keyed);
                std::vector<const PoolMember*> dominant;
                for (const auto* m : all) {
                    if (m->signature == clusters.front().signature) dominant.push_back(m);
                }
                const auto* chosen = seeded_pick(dominant, cfg, problem_id);
                return accepted(problem_id, strategy, *chosen, static_cast<int>(dominant.size()), clusters.front());
            }
            std::vector<std::pair<std::string, std::uint64_t>> keyed;
            for (const auto& m : pool) keyed.emplace_back(m.candidate_id, *m.output_key);
            const auto groups = group_by_key(keyed);
            std::vector<const PoolMember*> dominant;
            for (const auto* m : all) {
                if (*m->output_key == groups.front().first) dominant.push_back(m);
            }
            const auto* chosen = seeded_pick(dominant, cfg, problem_id);
            return accepted(problem_id, strategy, *chosen, static_cast<int>(dominant.size()), std::nullopt);
        }
        case SelectionStrategy::low_ppl: {
            const PoolMember* chosen = nullptr;
            for (const auto* m : all) {
                if (!m->f) continue;
                if (!chosen || *m->f < *chosen->f || (*m->f == *chosen->f && m->candidate_id < chosen->candidate_id)) {
                    chosen = m;
                }
            }
            if (!chosen) throw Error(ErrorCode::MissingLogprobs, "no candidate of " + problem_id + " carries logprobs");
            return accepted(problem_id, strategy, *chosen, signature_cluster_size(*chosen, pool),
                            signature_cluster_of(*chosen, pool));
        }
        case SelectionStrategy::success_rate: {
            std::vector<const PoolMember*> eligible;
            for (const auto* m : all) {
                if (m->pass_fraction >= cfg.success_rate_threshold) eligible.push_back(m);
            }
            if (eligible.empty()) return rejected(problem_id, strategy, RejectionReason::all_filtered);
            const auto* chosen = seeded_pick(eligible, cfg, problem_id);
            return accepted(problem_id, strategy, *chosen, signature_cluster_size(*chosen, pool),
                            signature_cluster_of(*chosen, pool));
        }
        case SelectionStrategy::consensus:
            break;
    }
    throw Error(ErrorCode::InvalidArgument, "unhandled strategy");
}

SelectionResult select(const std::string& problem_id, const std::vector<PoolMember>& pool,
                       const SelectionConfig& cfg) {
    if (cfg.strategy == SelectionStrategy::consensus) return select_hierarchical(problem_id, pool, cfg);
    return select_baseline(problem_id, pool, cfg);
}

double pass_at_k(long long n, long long c, long long k) {
    if (n < 0 || c < 0 || c > n || k < 1 || k > n) {
        throw Error(ErrorCode::InvalidCounts, "need 0 <= c <= n and 1 <= k <= n (n=" + std::to_string(n) +
                                                  ", c=" + std::to_string(c) + ", k=" + std::to_string(k) + ")");
    }
    if (n - c < k) return 1.0;
    // C(n-c, k) / C(n, k) = prod_{i=n-c+1}^{n} (1 - k / i)
    double miss = 1.0;
    for (long long i = n - c + 1; i <= n; ++i) {
        miss *= 1.0 - static_cast<double>(k) / static_cast<double>(i);
    }
    return 1.0 - miss;
}

}  // namespace selfprobe::consensus
