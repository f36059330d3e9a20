#include <chrono>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "selfprobe/error.hpp"
#include "selfprobe/genclient.hpp"
#include "selfprobe/jsonl.hpp"

namespace selfprobe::genclient {

namespace {

/// Splits "scheme://host[:port][/prefix]" into the client origin and the path prefix.
std::pair<std::string, std::string> split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw Error(ErrorCode::InvalidArgument, "base_url lacks a scheme: " + url);
    const std::string scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") throw Error(ErrorCode::InvalidArgument, "unsupported scheme: " + scheme);
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (scheme == "https") throw Error(ErrorCode::InvalidArgument, "built without TLS support");
#endif
    const auto path_start = url.find('/', scheme_end + 3);
    std::string origin = path_start == std::string::npos ? url : url.substr(0, path_start);
    std::string prefix = path_start == std::string::npos ? std::string() : url.substr(path_start);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    if (origin.size() <= scheme_end + 3) throw Error(ErrorCode::InvalidArgument, "base_url lacks a host");
    return {origin, prefix};
}

}  // namespace

HttpChatBackend::HttpChatBackend(GenEndpointConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::tie(host_, path_prefix_) = split_url(cfg_.base_url);
    if (!cfg_.api_key_env.empty()) {
        if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key) api_key_ = key;
    }
}

std::string HttpChatBackend::request_body(const ChatRequest& request) const {
    json body;
    body["model"] = cfg_.model_name;
    json messages = json::array();
    for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
    body["messages"] = std::move(messages);
    body["temperature"] = request.temperature;
    body["top_p"] = request.top_p;
    if (request.logprobs) body["logprobs"] = true;
    return body.dump();
}

ChatResponse HttpChatBackend::complete(const ChatRequest& request) {
    httplib::Client client(host_);
    const auto timeout = std::chrono::milliseconds(cfg_.request_timeout_ms);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    httplib::Headers headers;
    if (api_key_) headers.emplace("Authorization", "Bearer " + *api_key_);
    const std::string body = request_body(request);
    const std::string path = path_prefix_ + "/chat/completions";

    std::string last_failure;
    int delay_ms = cfg_.retry_backoff_ms;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
            delay_ms *= 2;
        }
        auto res = client.Post(path, headers, body, "application/json");
        if (!res) {
            last_failure = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        const int status = res->status;
        if (status >= 500) {
            last_failure = "server status " + std::to_string(status);
            continue;
        }
        if (status == 401 || status == 403) {
            throw Error(ErrorCode::AuthFailure, "endpoint refused credentials (status " + std::to_string(status) + ")");
        }
        if (status == 429) throw Error(ErrorCode::QuotaExhausted, "endpoint quota exhausted (status 429)");
        if (status >= 400) throw Error(ErrorCode::RequestRejected, "endpoint rejected request (status " + std::to_string(status) + ")");

        auto parsed = json::parse(res->body, nullptr, false);
        if (parsed.is_discarded()) throw Error(ErrorCode::ParseError, "response body is not JSON");
        try {
            const auto& choice = parsed.at("choices").at(0);
            ChatResponse out;
            out.content = choice.at("message").at("content").get<std::string>();
            if (auto lp = choice.find("logprobs"); lp != choice.end() && lp->is_object()) {
                if (auto content = lp->find("content"); content != lp->end() && content->is_array()) {
                    std::vector<double> values;
                    values.reserve(content->size());
                    for (const auto& token : *content) values.push_back(token.at("logprob").get<double>());
                    out.token_logprobs = std::move(values);
                }
            }
            return out;
        } catch (const json::exception&) {
            throw Error(ErrorCode::ParseError, "response lacks choices[0].message.content");
        }
    }
    throw Error(ErrorCode::EndpointUnreachable,
                "endpoint unreachable after " + std::to_string(cfg_.max_retries + 1) + " attempts: " + last_failure);
}

}  // namespace selfprobe::genclient
