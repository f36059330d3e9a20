#include "selfprobe/core.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <unordered_map>

#include "selfprobe/error.hpp"

namespace selfprobe {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::PreconditionViolated: return "PreconditionViolated";
        case ErrorCode::MismatchedProblem: return "MismatchedProblem";
        case ErrorCode::SandboxUnavailable: return "SandboxUnavailable";
        case ErrorCode::IncompleteOutcomes: return "IncompleteOutcomes";
        case ErrorCode::EmptyOutcomes: return "EmptyOutcomes";
        case ErrorCode::Cancelled: return "Cancelled";
        case ErrorCode::MixedSignatureLengths: return "MixedSignatureLengths";
        case ErrorCode::UnknownCandidate: return "UnknownCandidate";
        case ErrorCode::EmptyTokenList: return "EmptyTokenList";
        case ErrorCode::PositiveLogprob: return "PositiveLogprob";
        case ErrorCode::MissingLogprobs: return "MissingLogprobs";
        case ErrorCode::InvalidCounts: return "InvalidCounts";
        case ErrorCode::EndpointUnreachable: return "EndpointUnreachable";
        case ErrorCode::AuthFailure: return "AuthFailure";
        case ErrorCode::QuotaExhausted: return "QuotaExhausted";
        case ErrorCode::RequestRejected: return "RequestRejected";
        case ErrorCode::FileUnreadable: return "FileUnreadable";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::IncompleteIteration: return "IncompleteIteration";
        case ErrorCode::IterationExists: return "IterationExists";
        case ErrorCode::InvalidParams: return "InvalidParams";
        case ErrorCode::EmptyText: return "EmptyText";
        case ErrorCode::ParseFailure: return "ParseFailure";
        case ErrorCode::DegenerateInput: return "DegenerateInput";
        case ErrorCode::NoScoredCandidates: return "NoScoredCandidates";
        case ErrorCode::EmptyDataset: return "EmptyDataset";
    }
    return "Unknown";
}

std::string_view to_string(Difficulty d) noexcept {
    switch (d) {
        case Difficulty::easy: return "easy";
        case Difficulty::medium: return "medium";
        case Difficulty::hard: return "hard";
    }
    return "medium";
}

std::string_view to_string(ExecStatus s) noexcept {
    switch (s) {
        case ExecStatus::pass: return "pass";
        case ExecStatus::fail: return "fail";
        case ExecStatus::error: return "error";
        case ExecStatus::timeout: return "timeout";
    }
    return "error";
}

std::string_view to_string(SelectionStrategy s) noexcept {
    switch (s) {
        case SelectionStrategy::consensus: return "consensus";
        case SelectionStrategy::random: return "random";
        case SelectionStrategy::cluster: return "cluster";
        case SelectionStrategy::low_ppl: return "low_ppl";
        case SelectionStrategy::success_rate: return "success_rate";
    }
    return "consensus";
}

std::string_view to_string(RejectionReason r) noexcept {
    switch (r) {
        case RejectionReason::all_filtered: return "all_filtered";
        case RejectionReason::no_nontrivial_cluster: return "no_nontrivial_cluster";
        case RejectionReason::empty_pool: return "empty_pool";
    }
    return "empty_pool";
}

std::string_view to_string(ViolationKind k) noexcept {
    switch (k) {
        case ViolationKind::duplicate_id: return "duplicate_id";
        case ViolationKind::dangling_problem_id: return "dangling_problem_id";
        case ViolationKind::ordinal_gap: return "ordinal_gap";
        case ViolationKind::duplicate_ordinal: return "duplicate_ordinal";
        case ViolationKind::empty_field: return "empty_field";
        case ViolationKind::out_of_range: return "out_of_range";
    }
    return "unknown";
}

namespace {

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view name, const Enum (&values)[N], std::string_view what) {
    for (Enum v : values) {
        if (to_string(v) == name) return v;
    }
    throw Error(ErrorCode::InvalidArgument, "unknown " + std::string(what) + " '" + std::string(name) + "'");
}

}  // namespace

Difficulty parse_difficulty(std::string_view name) {
    static constexpr Difficulty all[] = {Difficulty::easy, Difficulty::medium, Difficulty::hard};
    return parse_enum(name, all, "difficulty");
}

ExecStatus parse_exec_status(std::string_view name) {
    static constexpr ExecStatus all[] = {ExecStatus::pass, ExecStatus::fail, ExecStatus::error,
                                         ExecStatus::timeout};
    return parse_enum(name, all, "status");
}

SelectionStrategy parse_selection_strategy(std::string_view name) {
    static constexpr SelectionStrategy all[] = {SelectionStrategy::consensus, SelectionStrategy::random,
                                                SelectionStrategy::cluster, SelectionStrategy::low_ppl,
                                                SelectionStrategy::success_rate};
    return parse_enum(name, all, "selection strategy");
}

RejectionReason parse_rejection_reason(std::string_view name) {
    static constexpr RejectionReason all[] = {RejectionReason::all_filtered,
                                              RejectionReason::no_nontrivial_cluster,
                                              RejectionReason::empty_pool};
    return parse_enum(name, all, "rejection reason");
}

// ---------------------------------------------------------------------------

ExecutionSignature::ExecutionSignature(const std::vector<bool>& bits) {
    bits_.reserve(bits.size());
    for (bool b : bits) bits_.push_back(b ? '1' : '0');
}

ExecutionSignature ExecutionSignature::from_string(std::string_view text) {
    for (char c : text) {
        if (c != '0' && c != '1') {
            throw Error(ErrorCode::InvalidArgument, "signature must contain only 0/1: '" + std::string(text) + "'");
        }
    }
    ExecutionSignature sig;
    sig.bits_ = std::string(text);
    return sig;
}

bool ExecutionSignature::all_pass() const noexcept {
    return std::all_of(bits_.begin(), bits_.end(), [](char c) { return c == '1'; });
}

std::size_t ExecutionSignature::pass_count() const noexcept {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), '1'));
}

std::string make_instruction(const Problem& problem) {
    return problem.description + "\n\nFunction signature:\n" + problem.function_signature;
}

// ---------------------------------------------------------------------------

ValidationReport validate_corpus(const std::vector<Problem>& problems,
                                 const std::vector<TestCase>& tests,
                                 const std::vector<Candidate>& candidates) {
    ValidationReport report;
    auto add = [&](ViolationKind kind, const std::string& id, std::string msg) {
        report.violations.push_back({kind, id, std::move(msg)});
    };

    std::set<std::string> problem_ids;
    for (const auto& p : problems) {
        if (p.id.empty()) add(ViolationKind::empty_field, p.id, "problem with empty id");
        if (!problem_ids.insert(p.id).second) add(ViolationKind::duplicate_id, p.id, "duplicate problem id");
        if (p.description.empty()) add(ViolationKind::empty_field, p.id, "empty description");
        if (p.function_signature.empty()) add(ViolationKind::empty_field, p.id, "empty function_signature");
        if (!(p.difficulty_rating >= 0.0 && p.difficulty_rating <= 10.0)) {
            add(ViolationKind::out_of_range, p.id, "difficulty_rating outside [0, 10]");
        }
        if (p.iteration_born < 0) add(ViolationKind::out_of_range, p.id, "negative iteration_born");
    }

    std::set<std::string> test_ids;
    std::map<std::string, std::vector<const TestCase*>> suites;
    for (const auto& t : tests) {
        if (!test_ids.insert(t.id).second) add(ViolationKind::duplicate_id, t.id, "duplicate test id");
        if (t.harness_code.empty()) add(ViolationKind::empty_field, t.id, "empty harness_code");
        if (!problem_ids.contains(t.problem_id)) {
            add(ViolationKind::dangling_problem_id, t.id, "test references unknown problem '" + t.problem_id + "'");
            continue;
        }
        suites[t.problem_id].push_back(&t);
    }
    for (const auto& [pid, suite] : suites) {
        std::map<int, int> seen;
        for (const TestCase* t : suite) {
            if (++seen[t->ordinal] == 2) {
                add(ViolationKind::duplicate_ordinal, t->id,
                    "problem '" + pid + "' has more than one test with ordinal " + std::to_string(t->ordinal));
            }
        }
        const int m = static_cast<int>(seen.size());
        for (const auto& [ordinal, count] : seen) {
            if (ordinal < 0 || ordinal >= m) {
                add(ViolationKind::ordinal_gap, pid,
                    "ordinals of problem '" + pid + "' are not dense 0.." + std::to_string(m - 1));
                break;
            }
        }
    }

    std::set<std::string> candidate_ids;
    for (const auto& c : candidates) {
        if (!candidate_ids.insert(c.id).second) add(ViolationKind::duplicate_id, c.id, "duplicate candidate id");
        if (c.source_code.empty()) add(ViolationKind::empty_field, c.id, "empty source_code");
        if (!problem_ids.contains(c.problem_id)) {
            add(ViolationKind::dangling_problem_id, c.id, "candidate references unknown problem '" + c.problem_id + "'");
        }
        if (c.token_logprobs) {
            for (double lp : *c.token_logprobs) {
                if (!(lp <= 0.0)) {
                    add(ViolationKind::out_of_range, c.id, "token logprob > 0");
                    break;
                }
            }
        }
    }
    return report;
}

// ---------------------------------------------------------------------------

std::uint64_t content_hash(std::string_view data) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

std::string make_id(std::string_view stage, std::size_t counter, std::string_view content) {
    return std::string(stage) + "-" + std::to_string(counter) + "-" + hex64(content_hash(content)).substr(0, 8);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace selfprobe
