#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace selfprobe {

enum class ErrorCode {
    InvalidArgument,
    PreconditionViolated,
    // executor
    MismatchedProblem,
    SandboxUnavailable,
    IncompleteOutcomes,
    EmptyOutcomes,
    Cancelled,
    // consensus
    MixedSignatureLengths,
    UnknownCandidate,
    EmptyTokenList,
    PositiveLogprob,
    MissingLogprobs,
    InvalidCounts,
    // genclient
    EndpointUnreachable,
    AuthFailure,
    QuotaExhausted,
    RequestRejected,
    FileUnreadable,
    ParseError,
    // pipeline
    IncompleteIteration,
    IterationExists,
    // theorylab
    InvalidParams,
    // analyzer
    EmptyText,
    ParseFailure,
    DegenerateInput,
    NoScoredCandidates,
    EmptyDataset,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure the library reports carries one of the codes above; callers
/// branch on code(), the message is for humans.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace selfprobe
