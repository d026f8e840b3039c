#pragma once

// Internal helper shared by the remote embedder and the remote judge:
// JSON POST with bounded retries, exponential backoff and an in-flight cap.

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>

namespace flexsdr::http {

class HttpError : public std::runtime_error {
public:
    HttpError(const std::string& what, int status) : std::runtime_error(what), status_(status) {}
    int status() const { return status_; }

private:
    int status_;  // 0 = transport-level failure
};

// Counting limiter; keeps the number of concurrent requests bounded.
class InFlightLimit {
public:
    explicit InFlightLimit(int max) : max_(max > 0 ? max : 1) {}

    void acquire() {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [&] { return active_ < max_; });
        ++active_;
    }
    void release() {
        std::lock_guard lk(mu_);
        --active_;
        cv_.notify_one();
    }

private:
    int max_;
    int active_ = 0;
    std::mutex mu_;
    std::condition_variable cv_;
};

struct PostConfig {
    std::string base_url;
    std::string path;
    std::string api_key_env;
    int max_retries = 3;
    int backoff_ms = 100;
    int timeout_s = 30;
};

inline std::string bearer_from_env(const std::string& env_name) {
    if (env_name.empty()) return {};
    const char* v = std::getenv(env_name.c_str());
    return v ? std::string(v) : std::string{};
}

inline bool retryable_status(int status) {
    return status == 429 || status == 408 || status >= 500;
}

// POSTs `body` as application/json; retries transport errors and
// retryable statuses up to max_retries with doubling backoff. Returns the
// parsed response body. Throws HttpError carrying the last status.
inline nlohmann::json post_json(const PostConfig& cfg, const nlohmann::json& body,
                                InFlightLimit* limit = nullptr) {
    struct Guard {
        InFlightLimit* l;
        explicit Guard(InFlightLimit* lim) : l(lim) {
            if (l) l->acquire();
        }
        ~Guard() {
            if (l) l->release();
        }
    } guard(limit);

    httplib::Client client(cfg.base_url);
    client.set_connection_timeout(cfg.timeout_s, 0);
    client.set_read_timeout(cfg.timeout_s, 0);

    httplib::Headers headers;
    const std::string token = bearer_from_env(cfg.api_key_env);
    if (!token.empty()) headers.emplace("Authorization", "Bearer " + token);

    const std::string payload = body.dump();
    int last_status = 0;
    std::string last_detail = "connection failed";

    for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
        if (attempt > 0) {
            auto wait = std::chrono::milliseconds(cfg.backoff_ms << (attempt - 1));
            std::this_thread::sleep_for(wait);
        }
        auto res = client.Post(cfg.path, headers, payload, "application/json");
        if (!res) {
            last_status = 0;
            last_detail = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 200 && res->status < 300) {
            try {
                return nlohmann::json::parse(res->body);
            } catch (const nlohmann::json::exception& e) {
                throw HttpError(std::string("malformed response body: ") + e.what(),
                                res->status);
            }
        }
        last_status = res->status;
        last_detail = "HTTP " + std::to_string(res->status);
        if (!retryable_status(res->status)) break;
    }
    throw HttpError("request to " + cfg.base_url + cfg.path + " failed after retries (" +
                        last_detail + ")",
                    last_status);
}

}  // namespace flexsdr::http
