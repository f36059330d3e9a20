#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <httplib.h>

#include <atomic>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <set>
#include <thread>

#include "selfprobe/error.hpp"
#include "selfprobe/executor.hpp"
#include "selfprobe/genclient.hpp"
#include "selfprobe/jsonl.hpp"
#include "test_support.hpp"

using namespace selfprobe;
using namespace selfprobe::genclient;
using selfprobe::testing::TempDir;

namespace {

GenEndpointConfig fast_cfg() {
    GenEndpointConfig cfg;
    cfg.max_in_flight = 4;
    cfg.retry_backoff_ms = 1;
    cfg.request_timeout_ms = 2000;
    return cfg;
}

TemplateSet shipped() { return TemplateSet::load(default_templates_dir()); }

/// Backend answering from a caller-supplied function.
class ScriptedBackend final : public Backend {
public:
    using Fn = std::function<ChatResponse(const ChatRequest&)>;
    explicit ScriptedBackend(Fn fn) : fn_(std::move(fn)) {}
    ChatResponse complete(const ChatRequest& r) override {
        {
            std::lock_guard lock(mu_);
            ++calls_;
        }
        return fn_(r);
    }
    [[nodiscard]] std::string name() const override { return "scripted"; }
    int calls() {
        std::lock_guard lock(mu_);
        return calls_;
    }

private:
    Fn fn_;
    std::mutex mu_;
    int calls_ = 0;
};

Problem sample_problem() {
    Problem p;
    p.id = "prob-0-00000000";
    p.title = "Add";
    p.description = "Add two integers.";
    p.function_signature = "def add(a: int, b: int) -> int";
    p.skeleton = "def add(a, b):\n    pass";
    return p;
}

std::string fence(const std::string& lang, const std::string& body) { return "```" + lang + "\n" + body + "\n```\n"; }

}  // namespace

TEST_CASE("templates: shipped set loads and renders only known placeholders") {
    auto t = shipped();
    const auto text = t.render(Stage::difficulty_rating, {{"description", "D"}, {"signature", "S"}});
    CHECK(text.find("D") != std::string::npos);
    CHECK(text.find("{description}") == std::string::npos);
    CHECK(text.find("{\"difficulty\"") != std::string::npos);
    const auto tests = t.render(Stage::test_gen, {{"description", "D"}, {"signature", "S"}, {"count", "17"}});
    CHECK(tests.find("Write 17 distinct") != std::string::npos);
    CHECK(t.fingerprint() == shipped().fingerprint());
}

TEST_CASE("templates: missing placeholder or file is rejected") {
    std::vector<StageTemplate> v;
    for (Stage s : kAllStages) v.push_back({s, "{description} {signature} {count} {skeleton}"});
    CHECK_NOTHROW(TemplateSet::from_templates(v));
    v[3].template_text = "{description} {signature}";
    CHECK_THROWS_AS(TemplateSet::from_templates(v), Error);
    TempDir dir;
    try {
        TemplateSet::load(dir.path());
        FAIL("expected FileUnreadable");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::FileUnreadable);
    }
}

TEST_CASE("parsers: fenced blocks and fallbacks") {
    auto blocks = extract_fenced_blocks("x\n```python\na = 1\n```\ny\n```\nb\n```\n```json\nunterminated");
    REQUIRE(blocks.size() == 2);
    CHECK(blocks[0].language == "python");
    CHECK(blocks[0].body == "a = 1\n");
    CHECK(blocks[1].language.empty());

    auto draft = parse_problem_payload(fence("json", R"J({"title":"T","description":"D","function_signature":"def f()"})J"));
    REQUIRE(draft);
    CHECK(draft->title == "T");
    CHECK(!draft->category);
    auto header = parse_problem_payload("Title: T\nSignature: def f(x)\nDescription: line one\nline two\n");
    REQUIRE(header);
    CHECK(header->description == "line one\nline two");
    CHECK(!parse_problem_payload("Sorry, no."));
    CHECK(!parse_problem_payload(fence("json", R"J({"title":"T","description":""})J")));

    auto d = parse_difficulty_payload(fence("json", R"J({"difficulty":"Hard","rating":7.5})J"));
    REQUIRE(d);
    CHECK(d->first == Difficulty::hard);
    CHECK(d->second == 7.5);
    CHECK(!parse_difficulty_payload(fence("json", R"J({"difficulty":"hard","rating":11})J")));
    CHECK(!parse_difficulty_payload(fence("json", R"J({"difficulty":"brutal","rating":3})J")));
    CHECK(parse_difficulty_payload("Difficulty: easy\nRating: 2"));

    CHECK(parse_tests_payload("assert f(1) == 2\nnoise\nassert f(2) == 3\n").size() == 2);
    CHECK(parse_tests_payload("nothing here").empty());
    CHECK(*parse_solution_payload("```text\nx\n```\n```python\ndef f(): pass\n```") == "def f(): pass");
    CHECK(!parse_solution_payload("no code"));
}

TEST_CASE("generate_problems: stub yields the requested count with ratings and skeletons") {
    StubBackend stub;
    auto out = generate_problems(5, stub, shipped(), fast_cfg());
    CHECK(out.problems.size() == 5);
    CHECK(out.drop_count == 0);
    std::set<std::string> ids;
    for (const auto& p : out.problems) {
        ids.insert(p.id);
        CHECK(p.skeleton);
        CHECK(p.difficulty_rating >= 0.0);
        CHECK(p.difficulty_rating <= 10.0);
    }
    CHECK(ids.size() == 5);
    // Determinism: same inputs, same records.
    StubBackend again;
    CHECK(generate_problems(5, again, shipped(), fast_cfg()).problems == out.problems);
}

TEST_CASE("generate_problems: malformed replies are dropped and counted") {
    StubBackend stub;
    ScriptedBackend scripted([&](const ChatRequest& r) {
        if (r.stage == Stage::problem_gen && r.context.index >= 2) return ChatResponse{"not a problem", std::nullopt};
        return stub.complete(r);
    });
    auto out = generate_problems(5, scripted, shipped(), fast_cfg());
    CHECK(out.problems.size() == 2);
    CHECK(out.drop_count == 3);
}

TEST_CASE("generate_problems: count 0 is a precondition violation") {
    StubBackend stub;
    try {
        generate_problems(0, stub, shipped(), fast_cfg());
        FAIL("expected PreconditionViolated");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::PreconditionViolated);
    }
}

TEST_CASE("generate_tests: dense ordinals and dedup") {
    const auto p = sample_problem();
    ScriptedBackend hundred([](const ChatRequest&) {
        std::string s;
        for (int i = 0; i < 100; ++i) s += fence("python", "assert add(" + std::to_string(i) + ", 0) == " + std::to_string(i));
        return ChatResponse{s, std::nullopt};
    });
    auto out = generate_tests(p, 100, hundred, shipped(), fast_cfg());
    REQUIRE(out.tests.size() == 100);
    for (int i = 0; i < 100; ++i) {
        CHECK(out.tests[static_cast<std::size_t>(i)].ordinal == i);
        CHECK(out.tests[static_cast<std::size_t>(i)].problem_id == p.id);
    }

    ScriptedBackend dupes([](const ChatRequest&) {
        std::string s;
        for (int i = 0; i < 10; ++i) s += fence("python", "assert add(" + std::to_string(i % 7) + ", 1) > 0");
        return ChatResponse{s, std::nullopt};
    });
    auto d = generate_tests(p, 10, dupes, shipped(), fast_cfg());
    CHECK(d.tests.size() == 7);
    CHECK(d.duplicates_dropped == 3);
    for (std::size_t i = 0; i < d.tests.size(); ++i) CHECK(d.tests[i].ordinal == static_cast<int>(i));

    ScriptedBackend garbage([](const ChatRequest&) { return ChatResponse{"¯\\_(ツ)_/¯", std::nullopt}; });
    auto g = generate_tests(p, 10, garbage, shipped(), fast_cfg());
    CHECK(g.tests.empty());
    CHECK(g.parse_failure);
}

TEST_CASE("sample_solutions: n candidates with non-positive logprobs") {
    StubBackend stub;
    auto problems = generate_problems(1, stub, shipped(), fast_cfg()).problems;
    REQUIRE(problems.size() == 1);
    auto out = sample_solutions(problems[0], 128, stub, shipped(), fast_cfg());
    CHECK(out.candidates.size() == 128);
    CHECK(out.absences.empty());
    std::set<std::string> ids;
    for (const auto& c : out.candidates) {
        ids.insert(c.id);
        REQUIRE(c.token_logprobs);
        CHECK(!c.token_logprobs->empty());
        for (double lp : *c.token_logprobs) CHECK(lp <= 0.0);
        CHECK(c.problem_id == problems[0].id);
    }
    // Identical sources collapse to one content hash but keep distinct ids via the counter.
    CHECK(ids.size() == 128);
}

TEST_CASE("sample_solutions: failed requests become absences") {
    const auto p = sample_problem();
    ScriptedBackend flaky([](const ChatRequest& r) {
        if (r.context.index == 2 || r.context.index == 5) throw Error(ErrorCode::EndpointUnreachable, "down");
        return ChatResponse{fence("python", "def add(a, b):\n    return a + b"), std::vector<double>{-0.1, -0.2}};
    });
    auto out = sample_solutions(p, 8, flaky, shipped(), fast_cfg());
    CHECK(out.candidates.size() == 6);
    REQUIRE(out.absences.size() == 2);
    CHECK(out.absences[0].sample_index == 2);
    CHECK(out.absences[1].sample_index == 5);

    ScriptedBackend denied([](const ChatRequest&) -> ChatResponse { throw Error(ErrorCode::AuthFailure, "no"); });
    CHECK_THROWS_AS(sample_solutions(p, 4, denied, shipped(), fast_cfg()), Error);
}

TEST_CASE("stub: correct variants pass their suites and buggy variants do not") {
    if (std::system("command -v python3 >/dev/null 2>&1") != 0) {
        MESSAGE("python3 not available; skipping");
        return;
    }
    TempDir scratch;
    executor::SandboxPolicy policy;
    policy.scratch_root = scratch.path();
    policy.error_exit_codes = {kHarnessErrorExitCode};

    auto cfg = fast_cfg();
    cfg.want_logprobs = false;
    StubBackend generator;
    auto problems = generate_problems(static_cast<int>(generator.bank_size()), generator, shipped(), cfg).problems;
    for (const auto& p : StubBackend{}.held_out_corpus().problems) problems.push_back(p);
    CHECK(problems.size() == StubBackend{}.bank_size() + 2);

    for (double rate : {1.0, 0.0}) {
        StubOptions opts;
        opts.base_correct_rate = rate;
        opts.max_correct_rate = rate;
        opts.correct_rate_step = 0.0;
        StubBackend stub(opts);
        for (const auto& p : problems) {
            auto tests = generate_tests(p, 100, stub, shipped(), cfg).tests;
            REQUIRE(tests.size() >= 6);
            auto sampled = sample_solutions(p, 12, stub, shipped(), cfg).candidates;
            std::vector<Candidate> distinct;
            std::set<std::string> seen;
            for (auto& c : sampled) {
                if (seen.insert(c.source_code).second) distinct.push_back(c);
            }
            auto outcomes = executor::execute_pool(distinct, tests, policy, 2);
            for (const auto& c : distinct) {
                std::vector<ExecutionOutcome> mine;
                for (const auto& o : outcomes) {
                    if (o.candidate_id == c.id) mine.push_back(o);
                }
                const auto sig = executor::signature_of(mine, tests.size());
                INFO(p.title << " rate=" << rate << " sig=" << sig.str() << "\n" << c.source_code);
                CHECK(sig.all_pass() == (rate == 1.0));
            }
        }
    }
}

TEST_CASE("stub: correct rate rises with iteration and is capped") {
    StubBackend stub;
    CHECK(stub.correct_rate(0) == doctest::Approx(0.5));
    CHECK(stub.correct_rate(1) > stub.correct_rate(0));
    CHECK(stub.correct_rate(100) == doctest::Approx(0.9));
}

TEST_CASE("ingest_files: round trip, corrupt line and empty files") {
    TempDir dir;
    StubBackend stub;
    auto held = stub.held_out_corpus();
    auto cands = sample_solutions(held.problems[0], 3, stub, shipped(), fast_cfg()).candidates;
    write_jsonl(dir / "p.jsonl", held.problems);
    write_jsonl(dir / "t.jsonl", held.tests);
    write_jsonl(dir / "c.jsonl", cands);
    auto in = ingest_files(dir / "p.jsonl", dir / "t.jsonl", dir / "c.jsonl");
    CHECK(in.report.ok());
    CHECK(in.corpus.problems == held.problems);
    CHECK(in.corpus.tests == held.tests);
    CHECK(in.corpus.candidates == cands);

    auto text = selfprobe::testing::read_file(dir / "t.jsonl");
    text.insert(text.find('\n') + 1, "{broken\n");
    selfprobe::testing::write_file(dir / "t.jsonl", text);
    try {
        ingest_files(dir / "p.jsonl", dir / "t.jsonl", dir / "c.jsonl");
        FAIL("expected ParseError");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ParseError);
        CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }

    for (const char* name : {"p0.jsonl", "t0.jsonl", "c0.jsonl"}) selfprobe::testing::write_file(dir / name, "");
    auto empty = ingest_files(dir / "p0.jsonl", dir / "t0.jsonl", dir / "c0.jsonl");
    CHECK(empty.corpus.problems.empty());
    CHECK(empty.report.ok());
    CHECK_THROWS_AS(ingest_files(dir / "missing.jsonl", dir / "t0.jsonl", dir / "c0.jsonl"), Error);
}

// ---------------------------------------------------------------------------
// HTTP backend against an in-process endpoint

namespace {

struct FakeEndpoint {
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::atomic<int> failures_left{0};
    std::atomic<int> status{200};
    std::atomic<bool> malformed{false};
    std::atomic<int> hits{0};
    std::mutex mu;
    std::string last_auth;
    std::string last_body;

    FakeEndpoint() {
        server.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            ++hits;
            {
                std::lock_guard lock(mu);
                last_auth = req.get_header_value("Authorization");
                last_body = req.body;
            }
            if (failures_left > 0) {
                --failures_left;
                res.status = 503;
                return;
            }
            res.status = status;
            if (status != 200) return;
            if (malformed) {
                res.set_content("{\"choices\": []}", "application/json");
                return;
            }
            json body{{"choices",
                       json::array({{{"message", {{"role", "assistant"}, {"content", "```python\nx = 1\n```"}}},
                                     {"logprobs",
                                      {{"content", json::array({{{"token", "x"}, {"logprob", -0.5}},
                                                                {{"token", " ="}, {"logprob", -0.25}}})}}}}})}};
            res.set_content(body.dump(), "application/json");
        });
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~FakeEndpoint() {
        server.stop();
        thread.join();
    }
};

ChatRequest simple_request() {
    ChatRequest r;
    r.stage = Stage::solution_sampling;
    r.messages = {{"user", "hi"}};
    r.temperature = 0.8;
    r.top_p = 0.95;
    r.logprobs = true;
    return r;
}

}  // namespace

TEST_CASE("http backend: success, retries and status mapping") {
    FakeEndpoint ep;
    ::setenv("SELFPROBE_TEST_KEY", "sk-very-secret", 1);
    auto cfg = fast_cfg();
    cfg.base_url = "http://127.0.0.1:" + std::to_string(ep.port) + "/v1/";
    cfg.api_key_env = "SELFPROBE_TEST_KEY";
    cfg.max_retries = 2;
    HttpChatBackend backend(cfg);

    auto reply = backend.complete(simple_request());
    CHECK(reply.content.find("x = 1") != std::string::npos);
    REQUIRE(reply.token_logprobs);
    CHECK(*reply.token_logprobs == std::vector<double>{-0.5, -0.25});
    {
        std::lock_guard lock(ep.mu);
        CHECK(ep.last_auth == "Bearer sk-very-secret");
        auto body = json::parse(ep.last_body);
        CHECK(body["logprobs"] == true);
        CHECK(body["messages"][0]["content"] == "hi");
    }

    SUBCASE("transient 5xx is retried") {
        ep.failures_left = 2;
        ep.hits = 0;
        CHECK_NOTHROW(backend.complete(simple_request()));
        CHECK(ep.hits == 3);
    }
    SUBCASE("persistent 5xx exhausts retries") {
        ep.failures_left = 100;
        ep.hits = 0;
        try {
            backend.complete(simple_request());
            FAIL("expected EndpointUnreachable");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::EndpointUnreachable);
            CHECK(std::string(e.what()).find("sk-very-secret") == std::string::npos);
        }
        CHECK(ep.hits == 3);
    }
    SUBCASE("status codes map to error kinds") {
        const std::pair<int, ErrorCode> cases[] = {{401, ErrorCode::AuthFailure},
                                                   {403, ErrorCode::AuthFailure},
                                                   {429, ErrorCode::QuotaExhausted},
                                                   {400, ErrorCode::RequestRejected}};
        for (auto [status, code] : cases) {
            ep.status = status;
            try {
                backend.complete(simple_request());
                FAIL("expected an error");
            } catch (const Error& e) {
                CHECK(e.code() == code);
                CHECK(std::string(e.what()).find("sk-very-secret") == std::string::npos);
            }
        }
    }
    SUBCASE("malformed body is a parse error") {
        ep.malformed = true;
        try {
            backend.complete(simple_request());
            FAIL("expected ParseError");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::ParseError);
        }
    }
    ::unsetenv("SELFPROBE_TEST_KEY");
}

TEST_CASE("http backend: unreachable endpoint and bad urls") {
    auto cfg = fast_cfg();
    cfg.base_url = "http://127.0.0.1:1/v1";
    cfg.max_retries = 1;
    cfg.request_timeout_ms = 300;
    HttpChatBackend backend(cfg);
    try {
        backend.complete(simple_request());
        FAIL("expected EndpointUnreachable");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EndpointUnreachable);
    }
    cfg.base_url = "localhost:8000";
    CHECK_THROWS_AS(HttpChatBackend{cfg}, Error);
    cfg.base_url = "ftp://x/v1";
    CHECK_THROWS_AS(HttpChatBackend{cfg}, Error);
}
