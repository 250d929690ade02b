#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "fbs_audit/agents.hpp"
#include "fbs_audit/errors.hpp"

namespace fbs {

// Counting limiter bounding concurrent in-flight requests per model id.
class RequestLimiter {
public:
    explicit RequestLimiter(int max_concurrent) : max_(max_concurrent) {}

    class Ticket {
    public:
        Ticket(RequestLimiter& l) : l_(l) { l_.acquire(); }
        ~Ticket() { l_.release(); }
        Ticket(const Ticket&) = delete;
        Ticket& operator=(const Ticket&) = delete;

    private:
        RequestLimiter& l_;
    };

    int peak() const {
        std::lock_guard lock(mu_);
        return peak_;
    }

private:
    void acquire() {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return active_ < max_; });
        ++active_;
        peak_ = std::max(peak_, active_);
    }
    void release() {
        {
            std::lock_guard lock(mu_);
            --active_;
        }
        cv_.notify_one();
    }

    mutable std::mutex mu_;
    std::condition_variable cv_;
    int max_;
    int active_ = 0;
    int peak_ = 0;
};

struct HttpBackendOptions {
    std::string base_url;       // falls back to FBS_AUDIT_BASE_URL, then OpenRouter
    std::string api_key;        // falls back to FBS_AUDIT_API_KEY
    std::string chat_path = "/chat/completions";
    int max_attempts = 3;
    int backoff_base_ms = 500;  // doubles per attempt
    int timeout_seconds = 120;
    int max_concurrent_per_model = 4;
};

// Chat-completions transport. Sends {model, messages:[system, user],
// temperature, max_tokens}, retries transient failures (connect errors, 429,
// 5xx) with exponential backoff, and surfaces truncated generations as errors
// rather than feeding partial text to the parser.
class HttpBackend : public AgentBackend {
public:
    explicit HttpBackend(HttpBackendOptions opt = {}) : opt_(std::move(opt)) {
        if (opt_.base_url.empty()) {
            if (const char* env = std::getenv("FBS_AUDIT_BASE_URL")) opt_.base_url = env;
        }
        if (opt_.base_url.empty()) opt_.base_url = "https://openrouter.ai/api/v1";
        if (opt_.api_key.empty()) {
            if (const char* env = std::getenv("FBS_AUDIT_API_KEY")) opt_.api_key = env;
        }
        split_base_url();
    }

    std::string complete(const AgentConfig& config, const RenderedPrompt& prompts,
                         const BatchContext&) override {
        nlohmann::ordered_json body;
        body["model"] = config.model_id;
        body["messages"] = {{{"role", "system"}, {"content", prompts.system_prompt}},
                            {{"role", "user"}, {"content", prompts.user_prompt}}};
        body["temperature"] = config.temperature;
        body["max_tokens"] = config.max_tokens;
        const std::string payload = body.dump();

        RequestLimiter::Ticket ticket(limiter_for(config.model_id));

        std::string last_error;
        for (int attempt = 1; attempt <= opt_.max_attempts; ++attempt) {
            if (attempt > 1) {
                const int delay = opt_.backoff_base_ms << (attempt - 2);
                std::this_thread::sleep_for(std::chrono::milliseconds(delay));
            }
            httplib::Headers headers;
            if (!opt_.api_key.empty())
                headers.emplace("Authorization", "Bearer " + opt_.api_key);
            auto client = make_client();
            auto res = client->Post(path_prefix_ + opt_.chat_path, headers, payload,
                                    "application/json");
            if (!res) {
                last_error = "connection error: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status == 429 || res->status >= 500) {
                last_error = "http status " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200)
                throw EndpointError("endpoint rejected request (http " +
                                    std::to_string(res->status) + "): " + res->body);
            return extract_content(res->body);
        }
        throw EndpointError("endpoint unreachable after " + std::to_string(opt_.max_attempts) +
                            " attempts: " + last_error);
    }

private:
    static std::string extract_content(const std::string& body) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception& e) {
            throw EndpointError(std::string("malformed endpoint response: ") + e.what());
        }
        if (!j.contains("choices") || j["choices"].empty())
            throw EndpointError("endpoint response has no choices: " + body.substr(0, 200));
        const auto& choice = j["choices"][0];
        if (choice.value("finish_reason", "") == "length")
            throw EndpointError("response truncated (finish_reason=length)");
        if (!choice.contains("message") || !choice["message"].contains("content"))
            throw EndpointError("endpoint response has no message content");
        return choice["message"]["content"].get<std::string>();
    }

    void split_base_url() {
        std::string url = opt_.base_url;
        std::size_t scheme = url.find("://");
        std::size_t host_start = scheme == std::string::npos ? 0 : scheme + 3;
        std::size_t slash = url.find('/', host_start);
        if (slash == std::string::npos) {
            host_ = url;
            path_prefix_.clear();
        } else {
            host_ = url.substr(0, slash);
            path_prefix_ = url.substr(slash);
            if (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
        }
    }

    std::unique_ptr<httplib::Client> make_client() const {
        auto client = std::make_unique<httplib::Client>(host_);
        client->set_connection_timeout(opt_.timeout_seconds);
        client->set_read_timeout(opt_.timeout_seconds);
        client->set_write_timeout(opt_.timeout_seconds);
        return client;
    }

    RequestLimiter& limiter_for(const std::string& model) {
        std::lock_guard lock(mu_);
        auto it = limiters_.find(model);
        if (it == limiters_.end())
            it = limiters_.emplace(model,
                                   std::make_unique<RequestLimiter>(opt_.max_concurrent_per_model))
                     .first;
        return *it->second;
    }

    HttpBackendOptions opt_;
    std::string host_;
    std::string path_prefix_;
    std::mutex mu_;
    std::map<std::string, std::unique_ptr<RequestLimiter>> limiters_;
};

} // namespace fbs
