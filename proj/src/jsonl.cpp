#include "selfprobe/jsonl.hpp"

#include <cstdio>

namespace selfprobe {

namespace {

template <typename T>
void put_optional(json& j, const char* key, const std::optional<T>& value) {
    if (value) {
        j[key] = *value;
    } else {
        j[key] = nullptr;
    }
}

template <typename T>
void get_optional(const json& j, const char* key, std::optional<T>& out) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) {
        out.reset();
    } else {
        out = it->template get<T>();
    }
}

template <typename T>
void get_or(const json& j, const char* key, T& out, T fallback) {
    auto it = j.find(key);
    out = (it == j.end() || it->is_null()) ? fallback : it->template get<T>();
}

}  // namespace

void to_json(json& j, const Problem& v) {
    j = json{{"id", v.id},
             {"title", v.title},
             {"description", v.description},
             {"function_signature", v.function_signature},
             {"difficulty", to_string(v.difficulty)},
             {"difficulty_rating", v.difficulty_rating}};
    put_optional(j, "skeleton", v.skeleton);
    put_optional(j, "category", v.category);
    j["iteration_born"] = v.iteration_born;
}

void from_json(const json& j, Problem& v) {
    j.at("id").get_to(v.id);
    get_or(j, "title", v.title, std::string{});
    j.at("description").get_to(v.description);
    j.at("function_signature").get_to(v.function_signature);
    v.difficulty = parse_difficulty(j.value("difficulty", std::string("medium")));
    get_or(j, "difficulty_rating", v.difficulty_rating, 5.0);
    get_optional(j, "skeleton", v.skeleton);
    get_optional(j, "category", v.category);
    get_or(j, "iteration_born", v.iteration_born, 0);
}

void to_json(json& j, const TestCase& v) {
    j = json{{"id", v.id}, {"problem_id", v.problem_id}, {"harness_code", v.harness_code}, {"ordinal", v.ordinal}};
}

void from_json(const json& j, TestCase& v) {
    j.at("id").get_to(v.id);
    j.at("problem_id").get_to(v.problem_id);
    j.at("harness_code").get_to(v.harness_code);
    j.at("ordinal").get_to(v.ordinal);
}

void to_json(json& j, const SamplingMeta& v) {
    j = json{{"temperature", v.temperature}, {"top_p", v.top_p}, {"sample_index", v.sample_index}};
}

void from_json(const json& j, SamplingMeta& v) {
    get_or(j, "temperature", v.temperature, 0.0);
    get_or(j, "top_p", v.top_p, 1.0);
    get_or(j, "sample_index", v.sample_index, 0);
}

void to_json(json& j, const Candidate& v) {
    j = json{{"id", v.id}, {"problem_id", v.problem_id}, {"source_code", v.source_code}};
    put_optional(j, "token_logprobs", v.token_logprobs);
    j["sampling_meta"] = v.sampling_meta;
    j["iteration_born"] = v.iteration_born;
}

void from_json(const json& j, Candidate& v) {
    j.at("id").get_to(v.id);
    j.at("problem_id").get_to(v.problem_id);
    j.at("source_code").get_to(v.source_code);
    get_optional(j, "token_logprobs", v.token_logprobs);
    get_or(j, "sampling_meta", v.sampling_meta, SamplingMeta{});
    get_or(j, "iteration_born", v.iteration_born, 0);
}

void to_json(json& j, const ExecutionOutcome& v) {
    j = json{{"candidate_id", v.candidate_id},
             {"test_id", v.test_id},
             {"ordinal", v.ordinal},
             {"status", to_string(v.status)},
             {"duration_ms", v.duration_ms}};
    put_optional(j, "captured_output", v.captured_output);
}

void from_json(const json& j, ExecutionOutcome& v) {
    j.at("candidate_id").get_to(v.candidate_id);
    j.at("test_id").get_to(v.test_id);
    j.at("ordinal").get_to(v.ordinal);
    v.status = parse_exec_status(j.at("status").get<std::string>());
    get_or(j, "duration_ms", v.duration_ms, std::int64_t{0});
    get_optional(j, "captured_output", v.captured_output);
}

void to_json(json& j, const ExecutionSignature& v) { j = v.str(); }

void from_json(const json& j, ExecutionSignature& v) {
    v = ExecutionSignature::from_string(j.get<std::string>());
}

void to_json(json& j, const QualityScores& v) {
    j = json{{"e", v.e}, {"s", v.s}};
    put_optional(j, "f", v.f);
}

void from_json(const json& j, QualityScores& v) {
    j.at("e").get_to(v.e);
    j.at("s").get_to(v.s);
    get_optional(j, "f", v.f);
}

void to_json(json& j, const ConsensusCluster& v) {
    j = json{{"signature", v.signature}, {"member_ids", v.member_ids}, {"size", v.size()}};
}

void from_json(const json& j, ConsensusCluster& v) {
    j.at("signature").get_to(v.signature);
    j.at("member_ids").get_to(v.member_ids);
    if (v.member_ids.empty()) throw Error(ErrorCode::InvalidArgument, "cluster with no members");
    if (auto it = j.find("size"); it != j.end() && it->get<std::size_t>() != v.member_ids.size()) {
        throw Error(ErrorCode::InvalidArgument, "cluster size does not match member_ids");
    }
}

void to_json(json& j, const SelectionResult& v) {
    j = json{{"problem_id", v.problem_id}, {"strategy", to_string(v.strategy)}};
    put_optional(j, "selected", v.selected);
    put_optional(j, "cluster", v.cluster);
    put_optional(j, "scores", v.scores);
    if (v.rejection_reason) {
        j["rejection_reason"] = to_string(*v.rejection_reason);
    } else {
        j["rejection_reason"] = nullptr;
    }
}

void from_json(const json& j, SelectionResult& v) {
    j.at("problem_id").get_to(v.problem_id);
    v.strategy = parse_selection_strategy(j.value("strategy", std::string("consensus")));
    get_optional(j, "selected", v.selected);
    get_optional(j, "cluster", v.cluster);
    get_optional(j, "scores", v.scores);
    std::optional<std::string> reason;
    get_optional(j, "rejection_reason", reason);
    v.rejection_reason = reason ? std::optional(parse_rejection_reason(*reason)) : std::nullopt;
    if (v.selected.has_value() == v.rejection_reason.has_value()) {
        throw Error(ErrorCode::InvalidArgument, "selection must carry exactly one of selected/rejection_reason");
    }
}

void to_json(json& j, const SftRecord& v) {
    j = json{{"instruction", v.instruction},
             {"response", v.response},
             {"problem_id", v.problem_id},
             {"candidate_id", v.candidate_id},
             {"iteration", v.iteration},
             {"selection_strategy", to_string(v.selection_strategy)},
             {"quality", v.quality}};
}

void from_json(const json& j, SftRecord& v) {
    j.at("instruction").get_to(v.instruction);
    j.at("response").get_to(v.response);
    j.at("problem_id").get_to(v.problem_id);
    j.at("candidate_id").get_to(v.candidate_id);
    j.at("iteration").get_to(v.iteration);
    v.selection_strategy = parse_selection_strategy(j.at("selection_strategy").get<std::string>());
    j.at("quality").get_to(v.quality);
}

void to_json(json& j, const IterationRecord& v) {
    j = json{{"iteration", v.iteration},
             {"problems_count", v.problems_count},
             {"candidates_count", v.candidates_count},
             {"selected_count", v.selected_count},
             {"mean_e", v.mean_e},
             {"mean_f", v.mean_f},
             {"pool_mean_e", v.pool_mean_e},
             {"dataset_path", v.dataset_path}};
    put_optional(j, "validation_score", v.validation_score);
}

void from_json(const json& j, IterationRecord& v) {
    j.at("iteration").get_to(v.iteration);
    j.at("problems_count").get_to(v.problems_count);
    j.at("candidates_count").get_to(v.candidates_count);
    j.at("selected_count").get_to(v.selected_count);
    j.at("mean_e").get_to(v.mean_e);
    j.at("mean_f").get_to(v.mean_f);
    get_or(j, "pool_mean_e", v.pool_mean_e, 0.0);
    j.at("dataset_path").get_to(v.dataset_path);
    get_optional(j, "validation_score", v.validation_score);
}

// ---------------------------------------------------------------------------

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::FileUnreadable, "cannot write " + tmp.string());
        out << text;
        if (!out) throw Error(ErrorCode::FileUnreadable, "short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

JsonlAppender::JsonlAppender(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
}

void JsonlAppender::append_line(const std::string& line) {
    std::lock_guard lock(mutex_);
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    if (!out) throw Error(ErrorCode::FileUnreadable, "cannot append to " + path_.string());
    out << line << '\n';
}

}  // namespace selfprobe
