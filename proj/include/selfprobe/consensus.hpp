#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "selfprobe/core.hpp"
#include "selfprobe/error.hpp"

namespace selfprobe::consensus {

struct SelectionConfig {
    double rho = 0.8;  // reliability threshold on e(r)
    int tau = 2;       // smallest cluster size that counts as non-trivial
    SelectionStrategy strategy = SelectionStrategy::consensus;
    double success_rate_threshold = 0.5;
    std::uint64_t rng_seed = 0;

    /// Throws Error{InvalidArgument} unless 0 < rho <= 1 and tau >= 1.
    void validate() const;
};

/// One candidate of a problem's pool as seen by selection.
struct PoolMember {
    std::string candidate_id;
    ExecutionSignature signature;
    double e = 0.0;                     // execution success rate
    std::optional<double> f;            // perplexity
    double pass_fraction = 0.0;         // fraction of tests with status=pass
    /// Hash of the captured-output tuple, used only by the `cluster` baseline.
    std::optional<std::uint64_t> output_key;
};

/// Groups items by exact key equality. Clusters come back ordered by
/// descending size, ties by ascending key. Members keep input order.
template <typename Key>
std::vector<std::pair<Key, std::vector<std::string>>> group_by_key(
    const std::vector<std::pair<std::string, Key>>& items) {
    std::map<Key, std::vector<std::string>> groups;
    for (const auto& [id, key] : items) groups[key].push_back(id);
    std::vector<std::pair<Key, std::vector<std::string>>> out(std::make_move_iterator(groups.begin()),
                                                              std::make_move_iterator(groups.end()));
    std::stable_sort(out.begin(), out.end(),
                     [](const auto& a, const auto& b) { return a.second.size() > b.second.size(); });
    return out;
}

/// Exact partition by signature equality, largest first (ties: smaller
/// signature first). Throws Error{MixedSignatureLengths}.
std::vector<ConsensusCluster> cluster_by_signature(
    const std::vector<std::pair<std::string, ExecutionSignature>>& pool);

/// Size of the cluster owning candidate_id. Throws Error{UnknownCandidate}.
int consensus_strength(const std::string& candidate_id, const std::vector<ConsensusCluster>& clusters);

/// exp(-mean(logprobs)). Throws Error{EmptyTokenList} or Error{PositiveLogprob}.
double perplexity(const std::vector<double>& token_logprobs);

/// Three-stage rule: reliability filter e >= rho, largest cluster of size
/// >= tau (ties: higher mean e, then smaller signature), then the member
/// maximizing (e, -f) lexicographically (missing f ranks as +inf, remaining
/// ties by smaller candidate_id). Rejections are reported in the result.
SelectionResult select_hierarchical(const std::string& problem_id, const std::vector<PoolMember>& pool,
                                    const SelectionConfig& cfg);

/// The four ablation strategies. Throws Error{MissingLogprobs} for low_ppl
/// when no member carries f, and Error{InvalidArgument} for strategy=consensus.
SelectionResult select_baseline(const std::string& problem_id, const std::vector<PoolMember>& pool,
                                const SelectionConfig& cfg);

/// Dispatches on cfg.strategy.
SelectionResult select(const std::string& problem_id, const std::vector<PoolMember>& pool,
                       const SelectionConfig& cfg);

/// Unbiased pass@k estimator 1 - C(n-c, k) / C(n, k), evaluated as a running
/// product so large n never overflows. Throws Error{InvalidCounts} unless
/// 0 <= c <= n and 1 <= k <= n.
double pass_at_k(long long n, long long c, long long k);

}  // namespace selfprobe::consensus
