#pragma once

// Brute-force reference for the three-stage selection rule, written against
// integer plant data (executed-test counts) so that no floating comparison is
// involved, plus the generator for randomized plants.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "selfprobe/consensus.hpp"

namespace selfprobe::testing {

struct PlantedMember {
    std::string id;
    std::string signature;  // '0'/'1' text
    int executed = 0;       // tests without error/timeout
    std::optional<double> f;
};

struct PlantedPool {
    int m = 1;
    std::vector<PlantedMember> members;

    [[nodiscard]] std::vector<consensus::PoolMember> to_pool() const {
        std::vector<consensus::PoolMember> out;
        for (const auto& pm : members) {
            consensus::PoolMember p;
            p.candidate_id = pm.id;
            p.signature = ExecutionSignature::from_string(pm.signature);
            p.e = static_cast<double>(pm.executed) / static_cast<double>(m);
            p.f = pm.f;
            p.pass_fraction = static_cast<double>(std::count(pm.signature.begin(), pm.signature.end(), '1')) / m;
            out.push_back(p);
        }
        return out;
    }
};

/// Expected selected id (nullopt when the rule rejects the pool).
/// rho is given as a fraction rho_num / rho_den to keep the filter exact.
inline std::optional<std::string> reference_select(const PlantedPool& pool, long rho_num, long rho_den, int tau) {
    std::vector<const PlantedMember*> kept;
    for (const auto& pm : pool.members) {
        if (static_cast<long>(pm.executed) * rho_den >= rho_num * pool.m) kept.push_back(&pm);
    }
    std::unordered_map<std::string, std::vector<const PlantedMember*>> by_sig;
    for (const auto* pm : kept) by_sig[pm->signature].push_back(pm);

    const std::vector<const PlantedMember*>* best = nullptr;
    std::string best_sig;
    long best_sum = 0;
    for (const auto& [sig, members] : by_sig) {
        if (static_cast<int>(members.size()) < tau) continue;
        long sum = 0;
        for (const auto* pm : members) sum += pm->executed;
        bool better = false;
        if (!best) {
            better = true;
        } else if (members.size() != best->size()) {
            better = members.size() > best->size();
        } else if (sum != best_sum) {
            better = sum > best_sum;  // equal sizes: compare sums, i.e. means
        } else {
            better = sig < best_sig;
        }
        if (better) {
            best = &members;
            best_sig = sig;
            best_sum = sum;
        }
    }
    if (!best) return std::nullopt;

    auto key_less = [](const PlantedMember* a, const PlantedMember* b) {
        // true when a ranks below b
        if (a->executed != b->executed) return a->executed < b->executed;
        const double fa = a->f.value_or(std::numeric_limits<double>::infinity());
        const double fb = b->f.value_or(std::numeric_limits<double>::infinity());
        if (fa != fb) return fa > fb;
        return a->id > b->id;
    };
    return (*std::max_element(best->begin(), best->end(), key_less))->id;
}

inline PlantedPool random_plant(std::mt19937_64& rng, int max_n = 64, int max_m = 16) {
    PlantedPool pool;
    pool.m = std::uniform_int_distribution<int>(1, max_m)(rng);
    const int n = std::uniform_int_distribution<int>(0, max_n)(rng);
    const int behaviors = std::uniform_int_distribution<int>(1, 6)(rng);
    std::vector<std::string> bases;
    for (int b = 0; b < behaviors; ++b) {
        std::string s;
        for (int j = 0; j < pool.m; ++j) s.push_back((rng() & 1) ? '1' : '0');
        bases.push_back(s);
    }
    static const double f_values[] = {1.01, 1.02, 1.05, 1.2};
    std::vector<int> ids(n);
    for (int i = 0; i < n; ++i) ids[i] = i;
    std::shuffle(ids.begin(), ids.end(), rng);
    for (int i = 0; i < n; ++i) {
        PlantedMember pm;
        pm.id = "c" + std::to_string(ids[i]);
        if (std::uniform_real_distribution<double>(0, 1)(rng) < 0.75) {
            pm.signature = bases[rng() % bases.size()];
        } else {
            for (int j = 0; j < pool.m; ++j) pm.signature.push_back((rng() & 1) ? '1' : '0');
        }
        const int passes = static_cast<int>(std::count(pm.signature.begin(), pm.signature.end(), '1'));
        // executed >= passes; bias toward high values so the filter keeps most.
        const int lo = std::max(passes, pool.m - pool.m / 3 - 1);
        pm.executed = std::uniform_int_distribution<int>(std::min(lo, pool.m), pool.m)(rng);
        if (rng() % 5 != 0) pm.f = f_values[rng() % 4];
        pool.members.push_back(pm);
    }
    return pool;
}

}  // namespace selfprobe::testing
