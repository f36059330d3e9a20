#pragma once

// JSON mapping for the domain types and line-delimited file IO.
// Field names are lower_snake_case and match the struct members.

#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "selfprobe/core.hpp"
#include "selfprobe/error.hpp"

namespace selfprobe {

using json = nlohmann::json;

void to_json(json& j, const Problem& v);
void from_json(const json& j, Problem& v);
void to_json(json& j, const TestCase& v);
void from_json(const json& j, TestCase& v);
void to_json(json& j, const SamplingMeta& v);
void from_json(const json& j, SamplingMeta& v);
void to_json(json& j, const Candidate& v);
void from_json(const json& j, Candidate& v);
void to_json(json& j, const ExecutionOutcome& v);
void from_json(const json& j, ExecutionOutcome& v);
void to_json(json& j, const ExecutionSignature& v);
void from_json(const json& j, ExecutionSignature& v);
void to_json(json& j, const QualityScores& v);
void from_json(const json& j, QualityScores& v);
void to_json(json& j, const ConsensusCluster& v);
void from_json(const json& j, ConsensusCluster& v);
void to_json(json& j, const SelectionResult& v);
void from_json(const json& j, SelectionResult& v);
void to_json(json& j, const SftRecord& v);
void from_json(const json& j, SftRecord& v);
void to_json(json& j, const IterationRecord& v);
void from_json(const json& j, IterationRecord& v);

/// Reads one object per non-empty line. Throws FileUnreadable when the file
/// cannot be opened and ParseError (with the 1-based line number) when a line
/// is not valid JSON or does not match T.
template <typename T>
std::vector<T> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::FileUnreadable, path.string());
    std::vector<T> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(json::parse(line).get<T>());
        } catch (const json::exception& ex) {
            throw Error(ErrorCode::ParseError,
                        path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
        } catch (const Error& ex) {
            throw Error(ErrorCode::ParseError,
                        path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
        }
    }
    return out;
}

template <typename T>
std::string to_jsonl(const std::vector<T>& items) {
    std::string out;
    for (const auto& item : items) {
        out += json(item).dump();
        out += '\n';
    }
    return out;
}

/// Replaces the file contents atomically (write to a sibling temp file, then rename).
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

template <typename T>
void write_jsonl(const std::filesystem::path& path, const std::vector<T>& items) {
    write_text_atomic(path, to_jsonl(items));
}

/// Serialized append stream; safe to share between threads.
class JsonlAppender {
public:
    explicit JsonlAppender(std::filesystem::path path);

    template <typename T>
    void append(const T& item) {
        append_line(json(item).dump());
    }

    [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }

private:
    void append_line(const std::string& line);

    std::filesystem::path path_;
    std::mutex mutex_;
};

}  // namespace selfprobe
