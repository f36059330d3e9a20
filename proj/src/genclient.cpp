#include "selfprobe/genclient.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "selfprobe/error.hpp"
#include "selfprobe/jsonl.hpp"
#include "selfprobe/parallel.hpp"

#ifndef SELFPROBE_TEMPLATES_DIR
#define SELFPROBE_TEMPLATES_DIR "templates"
#endif

namespace selfprobe::genclient {

std::string_view to_string(Stage s) noexcept {
    switch (s) {
        case Stage::problem_gen: return "problem_gen";
        case Stage::difficulty_rating: return "difficulty_rating";
        case Stage::skeleton_gen: return "skeleton_gen";
        case Stage::test_gen: return "test_gen";
        case Stage::solution_sampling: return "solution_sampling";
    }
    return "problem_gen";
}

void GenEndpointConfig::validate() const {
    if (base_url.empty()) throw Error(ErrorCode::InvalidArgument, "base_url is empty");
    if (max_retries < 0) throw Error(ErrorCode::InvalidArgument, "max_retries must be >= 0");
    if (temperature < 0 || problem_temperature < 0) throw Error(ErrorCode::InvalidArgument, "temperature must be >= 0");
    if (!(top_p > 0 && top_p <= 1)) throw Error(ErrorCode::InvalidArgument, "top_p must lie in (0, 1]");
    if (request_timeout_ms <= 0) throw Error(ErrorCode::InvalidArgument, "request_timeout_ms must be > 0");
    if (max_in_flight < 1) throw Error(ErrorCode::InvalidArgument, "max_in_flight must be >= 1");
}

// ---------------------------------------------------------------------------
// Templates

std::vector<std::string> required_placeholders(Stage stage) {
    switch (stage) {
        case Stage::problem_gen: return {};
        case Stage::difficulty_rating:
        case Stage::skeleton_gen: return {"description", "signature"};
        case Stage::test_gen: return {"description", "signature", "count"};
        case Stage::solution_sampling: return {"description", "signature", "skeleton"};
    }
    return {};
}

TemplateSet TemplateSet::from_templates(std::vector<StageTemplate> templates) {
    TemplateSet set;
    for (Stage stage : kAllStages) {
        auto it = std::find_if(templates.begin(), templates.end(), [&](const auto& t) { return t.stage == stage; });
        if (it == templates.end()) {
            throw Error(ErrorCode::InvalidArgument, "missing template for stage " + std::string(to_string(stage)));
        }
        for (const auto& name : required_placeholders(stage)) {
            if (it->template_text.find("{" + name + "}") == std::string::npos) {
                throw Error(ErrorCode::InvalidArgument, "template " + std::string(to_string(stage)) +
                                                            " lacks placeholder {" + name + "}");
            }
        }
        set.templates_.push_back(*it);
    }
    return set;
}

TemplateSet TemplateSet::load(const std::filesystem::path& dir) {
    std::vector<StageTemplate> templates;
    for (Stage stage : kAllStages) {
        auto path = dir / (std::string(to_string(stage)) + ".txt");
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error(ErrorCode::FileUnreadable, path.string());
        std::stringstream ss;
        ss << in.rdbuf();
        templates.push_back({stage, ss.str()});
    }
    return from_templates(std::move(templates));
}

const StageTemplate& TemplateSet::get(Stage stage) const {
    for (const auto& t : templates_) {
        if (t.stage == stage) return t;
    }
    throw Error(ErrorCode::InvalidArgument, "no template for stage " + std::string(to_string(stage)));
}

std::string TemplateSet::render(Stage stage, const std::map<std::string, std::string>& vars) const {
    std::string text = get(stage).template_text;
    for (const char* name : {"description", "signature", "skeleton", "count"}) {
        const std::string key = std::string("{") + name + "}";
        auto it = vars.find(name);
        const std::string value = it == vars.end() ? std::string() : it->second;
        for (auto pos = text.find(key); pos != std::string::npos; pos = text.find(key, pos + value.size())) {
            text.replace(pos, key.size(), value);
        }
    }
    return text;
}

std::uint64_t TemplateSet::fingerprint() const {
    std::string all;
    for (const auto& t : templates_) {
        all += to_string(t.stage);
        all += '\0';
        all += t.template_text;
        all += '\0';
    }
    return content_hash(all);
}

std::filesystem::path default_templates_dir() {
    if (const char* env = std::getenv("SELFPROBE_TEMPLATES_DIR"); env && *env) return env;
    return SELFPROBE_TEMPLATES_DIR;
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

/// Header-style fallback: "Key: value" lines, where a value continues over
/// following lines until the next recognised key.
std::map<std::string, std::string> parse_headers(const std::string& text, const std::vector<std::string>& keys) {
    std::map<std::string, std::string> out;
    std::string current;
    for (const auto& line : split_lines(text)) {
        const auto colon = line.find(':');
        if (colon != std::string::npos) {
            const std::string key = lower(trim(line.substr(0, colon)));
            if (std::find(keys.begin(), keys.end(), key) != keys.end()) {
                current = key;
                out[current] = trim(line.substr(colon + 1));
                continue;
            }
        }
        if (!current.empty()) {
            auto& value = out[current];
            if (!value.empty()) value += '\n';
            value += line;
        }
    }
    for (auto& [k, v] : out) v = trim(v);
    return out;
}

std::optional<json> first_json_object(const std::string& text) {
    for (const auto& block : extract_fenced_blocks(text)) {
        const std::string body = trim(block.body);
        if (body.empty() || body.front() != '{') continue;
        auto parsed = json::parse(body, nullptr, false);
        if (!parsed.is_discarded() && parsed.is_object()) return parsed;
    }
    return std::nullopt;
}

std::string json_string(const json& obj, std::initializer_list<const char*> keys) {
    for (const char* k : keys) {
        auto it = obj.find(k);
        if (it != obj.end() && it->is_string()) return trim(it->get<std::string>());
    }
    return {};
}

}  // namespace

std::vector<FencedBlock> extract_fenced_blocks(const std::string& text) {
    std::vector<FencedBlock> blocks;
    std::optional<FencedBlock> open;
    for (const auto& line : split_lines(text)) {
        const std::string t = trim(line);
        if (t.rfind("```", 0) == 0) {
            if (open) {
                blocks.push_back(std::move(*open));
                open.reset();
            } else {
                open = FencedBlock{lower(trim(t.substr(3))), {}};
            }
            continue;
        }
        if (open) {
            open->body += line;
            open->body += '\n';
        }
    }
    return blocks;  // an unterminated block is discarded
}

std::optional<ProblemDraft> parse_problem_payload(const std::string& text) {
    ProblemDraft draft;
    if (auto obj = first_json_object(text)) {
        draft.title = json_string(*obj, {"title"});
        draft.description = json_string(*obj, {"description"});
        draft.function_signature = json_string(*obj, {"function_signature", "signature"});
        auto category = json_string(*obj, {"category"});
        if (!category.empty()) draft.category = lower(category);
    } else {
        auto h = parse_headers(text, {"title", "category", "signature", "function signature", "description"});
        draft.title = h["title"];
        draft.description = h["description"];
        draft.function_signature = !h["signature"].empty() ? h["signature"] : h["function signature"];
        if (!h["category"].empty()) draft.category = lower(h["category"]);
    }
    if (draft.description.empty() || draft.function_signature.empty()) return std::nullopt;
    return draft;
}

std::optional<std::pair<Difficulty, double>> parse_difficulty_payload(const std::string& text) {
    std::string level;
    std::optional<double> rating;
    if (auto obj = first_json_object(text)) {
        level = lower(json_string(*obj, {"difficulty"}));
        if (auto it = obj->find("rating"); it != obj->end() && it->is_number()) rating = it->get<double>();
    } else {
        auto h = parse_headers(text, {"difficulty", "rating"});
        level = lower(h["difficulty"]);
        try {
            std::size_t used = 0;
            const double r = std::stod(h["rating"], &used);
            if (used == h["rating"].size()) rating = r;
        } catch (const std::exception&) {
        }
    }
    if (!rating || !(*rating >= 0.0 && *rating <= 10.0)) return std::nullopt;
    try {
        return std::pair{parse_difficulty(level), *rating};
    } catch (const Error&) {
        return std::nullopt;
    }
}

std::optional<std::string> parse_skeleton_payload(const std::string& text) {
    for (const auto& block : extract_fenced_blocks(text)) {
        auto body = trim(block.body);
        if (!body.empty()) return body;
    }
    auto h = parse_headers(text, {"skeleton"});
    if (!h["skeleton"].empty()) return h["skeleton"];
    return std::nullopt;
}

std::vector<std::string> parse_tests_payload(const std::string& text) {
    std::vector<std::string> tests;
    for (const auto& block : extract_fenced_blocks(text)) {
        auto body = trim(block.body);
        if (!body.empty()) tests.push_back(body);
    }
    if (!tests.empty()) return tests;
    for (const auto& line : split_lines(text)) {
        auto t = trim(line);
        if (t.rfind("assert ", 0) == 0) tests.push_back(t);
    }
    return tests;
}

std::optional<std::string> parse_solution_payload(const std::string& text) {
    const auto blocks = extract_fenced_blocks(text);
    for (const auto& block : blocks) {
        if (block.language == "python" || block.language == "py" || block.language == "python3") {
            auto body = trim(block.body);
            if (!body.empty()) return body;
        }
    }
    for (const auto& block : blocks) {
        auto body = trim(block.body);
        if (!body.empty()) return body;
    }
    auto h = parse_headers(text, {"code"});
    if (!h["code"].empty()) return h["code"];
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Stage operations

namespace {

ChatRequest make_request(Stage stage, std::string prompt, double temperature, double top_p, bool logprobs,
                         RequestContext ctx) {
    ChatRequest req;
    req.stage = stage;
    req.messages = {{"user", std::move(prompt)}};
    req.temperature = temperature;
    req.top_p = top_p;
    req.logprobs = logprobs;
    req.context = std::move(ctx);
    return req;
}

std::map<std::string, std::string> problem_vars(const Problem& p) {
    return {{"description", p.description},
            {"signature", p.function_signature},
            {"skeleton", p.skeleton.value_or("(none)")}};
}

bool is_recoverable(ErrorCode code) {
    return code == ErrorCode::EndpointUnreachable || code == ErrorCode::RequestRejected ||
           code == ErrorCode::ParseError;
}

}  // namespace

GeneratedProblems generate_problems(int count, Backend& backend, const TemplateSet& templates,
                                    const GenEndpointConfig& cfg, int iteration) {
    if (count < 1) throw Error(ErrorCode::PreconditionViolated, "count must be >= 1");
    cfg.validate();

    std::vector<std::optional<Problem>> slots(static_cast<std::size_t>(count));
    parallel_for(slots.size(), static_cast<std::size_t>(cfg.max_in_flight), [&](std::size_t i) {
        RequestContext ctx{iteration, static_cast<int>(i), std::nullopt};
        const double temp = cfg.problem_temperature;
        ChatResponse reply;
        try {
            reply = backend.complete(
                make_request(Stage::problem_gen, templates.render(Stage::problem_gen, {}), temp, cfg.top_p, false, ctx));
        } catch (const Error& e) {
            if (e.code() == ErrorCode::ParseError) return;
            throw;
        }
        auto draft = parse_problem_payload(reply.content);
        if (!draft) return;

        Problem p;
        p.title = draft->title;
        p.description = draft->description;
        p.function_signature = draft->function_signature;
        p.category = draft->category;
        p.iteration_born = iteration;
        p.id = make_id("prob", i, p.title + "\n" + p.description + "\n" + p.function_signature);

        ctx.problem = p;
        try {
            auto rating = backend.complete(make_request(Stage::difficulty_rating,
                                                        templates.render(Stage::difficulty_rating, problem_vars(p)),
                                                        0.0, cfg.top_p, false, ctx));
            auto parsed = parse_difficulty_payload(rating.content);
            if (!parsed) return;
            p.difficulty = parsed->first;
            p.difficulty_rating = parsed->second;

            ctx.problem = p;
            auto skeleton = backend.complete(make_request(
                Stage::skeleton_gen, templates.render(Stage::skeleton_gen, problem_vars(p)), 0.0, cfg.top_p, false, ctx));
            auto sk = parse_skeleton_payload(skeleton.content);
            if (!sk) return;
            p.skeleton = *sk;
        } catch (const Error& e) {
            if (e.code() == ErrorCode::ParseError) return;
            throw;
        }
        slots[i] = std::move(p);
    });

    GeneratedProblems out;
    for (auto& slot : slots) {
        if (slot) {
            out.problems.push_back(std::move(*slot));
        } else {
            ++out.drop_count;
        }
    }
    return out;
}

GeneratedTests generate_tests(const Problem& problem, int target_count, Backend& backend,
                              const TemplateSet& templates, const GenEndpointConfig& cfg, int iteration) {
    if (target_count < 1) throw Error(ErrorCode::PreconditionViolated, "target_count must be >= 1");
    cfg.validate();
    auto vars = problem_vars(problem);
    vars["count"] = std::to_string(target_count);
    GeneratedTests out;
    ChatResponse reply;
    try {
        reply = backend.complete(make_request(Stage::test_gen, templates.render(Stage::test_gen, vars), 0.0, cfg.top_p,
                                              false, RequestContext{iteration, 0, problem}));
    } catch (const Error& e) {
        if (e.code() != ErrorCode::ParseError) throw;
        out.parse_failure = true;
        return out;
    }
    auto harnesses = parse_tests_payload(reply.content);
    if (harnesses.empty()) {
        out.parse_failure = true;
        return out;
    }
    std::set<std::string> seen;
    for (auto& h : harnesses) {
        if (!seen.insert(h).second) {
            ++out.duplicates_dropped;
            continue;
        }
        if (static_cast<int>(out.tests.size()) >= target_count) break;
        const int ordinal = static_cast<int>(out.tests.size());
        out.tests.push_back(TestCase{make_id("test", static_cast<std::size_t>(ordinal), problem.id + "\n" + h),
                                     problem.id, h, ordinal});
    }
    return out;
}

SampledSolutions sample_solutions(const Problem& problem, int n, Backend& backend, const TemplateSet& templates,
                                  const GenEndpointConfig& cfg, int iteration) {
    if (n < 1) throw Error(ErrorCode::PreconditionViolated, "n must be >= 1");
    cfg.validate();
    const std::string prompt = templates.render(Stage::solution_sampling, problem_vars(problem));

    struct Slot {
        std::optional<Candidate> candidate;
        std::string absence_reason;
    };
    std::vector<Slot> slots(static_cast<std::size_t>(n));
    parallel_for(slots.size(), static_cast<std::size_t>(cfg.max_in_flight), [&](std::size_t i) {
        ChatResponse reply;
        try {
            reply = backend.complete(make_request(Stage::solution_sampling, prompt, cfg.temperature, cfg.top_p,
                                                  cfg.want_logprobs,
                                                  RequestContext{iteration, static_cast<int>(i), problem}));
        } catch (const Error& e) {
            if (!is_recoverable(e.code())) throw;
            slots[i].absence_reason = e.what();
            return;
        }
        auto source = parse_solution_payload(reply.content);
        if (!source) {
            slots[i].absence_reason = "unparseable reply";
            return;
        }
        Candidate c;
        c.problem_id = problem.id;
        c.source_code = *source;
        c.sampling_meta = SamplingMeta{cfg.temperature, cfg.top_p, static_cast<int>(i)};
        c.iteration_born = iteration;
        c.id = make_id("cand", i, problem.id + "\n" + c.source_code);
        if (cfg.want_logprobs && reply.token_logprobs && !reply.token_logprobs->empty() &&
            std::all_of(reply.token_logprobs->begin(), reply.token_logprobs->end(), [](double lp) { return lp <= 0.0; })) {
            c.token_logprobs = std::move(reply.token_logprobs);
        }
        slots[i].candidate = std::move(c);
    });

    SampledSolutions out;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i].candidate) {
            out.candidates.push_back(std::move(*slots[i].candidate));
        } else {
            out.absences.push_back({static_cast<int>(i), slots[i].absence_reason});
        }
    }
    return out;
}

IngestResult ingest_files(const std::filesystem::path& problems_path, const std::filesystem::path& tests_path,
                          const std::filesystem::path& candidates_path) {
    IngestResult out;
    out.corpus.problems = read_jsonl<Problem>(problems_path);
    out.corpus.tests = read_jsonl<TestCase>(tests_path);
    out.corpus.candidates = read_jsonl<Candidate>(candidates_path);
    out.report = validate_corpus(out.corpus.problems, out.corpus.tests, out.corpus.candidates);
    return out;
}

}  // namespace selfprobe::genclient
