#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"
#include "json.hpp"
#include "laser/controller.hpp"
#include "laser/errors.hpp"

#include <cstdlib>
#include <regex>

namespace laser {

namespace {

std::string env_or(const char* name, std::string fallback) {
    const char* v = std::getenv(name);
    return v && *v ? std::string(v) : fallback;
}

}  // namespace

OpenAICompatibleBackend::OpenAICompatibleBackend(Options options) : options_(std::move(options)) {
    if (options_.endpoint.empty()) throw ConfigError("openai-compatible backend: LASER_LLM_ENDPOINT is not set");
}

OpenAICompatibleBackend::Options OpenAICompatibleBackend::from_environment() {
    Options o;
    o.endpoint = env_or("LASER_LLM_ENDPOINT", "");
    o.api_key = env_or("LASER_LLM_API_KEY", "");
    o.model = env_or("LASER_LLM_MODEL", o.model);
    return o;
}

std::string OpenAICompatibleBackend::complete(const std::string& system_prompt, const std::string& user_prompt) const {
    static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(options_.endpoint, m, url)) {
        throw ConfigError("openai-compatible backend: malformed endpoint '" + options_.endpoint + "'");
    }
    std::string path = m[2].str();
    while (!path.empty() && path.back() == '/') path.pop_back();
    path += "/chat/completions";

    httplib::Client client(m[1].str());
    const auto secs = static_cast<time_t>(options_.timeout_seconds);
    client.set_connection_timeout(secs, 0);
    client.set_read_timeout(secs, 0);
    client.set_write_timeout(secs, 0);
    httplib::Headers headers;
    if (!options_.api_key.empty()) headers.emplace("Authorization", "Bearer " + options_.api_key);

    const nlohmann::json body{{"model", options_.model},
                              {"temperature", 0},
                              {"messages",
                               {{{"role", "system"}, {"content", system_prompt}},
                                {{"role", "user"}, {"content", user_prompt}}}}};
    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res) throw IoError("LLM request failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw IoError("LLM endpoint returned HTTP " + std::to_string(res->status));
    try {
        const auto reply = nlohmann::json::parse(res->body);
        return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("LLM reply is not a chat completion: ") + e.what());
    }
}

std::unique_ptr<CompletionBackend> make_backend(std::string_view name) {
    if (name == "mock") return std::make_unique<MockBackend>();
    if (name == "openai-compatible") {
        return std::make_unique<OpenAICompatibleBackend>(OpenAICompatibleBackend::from_environment());
    }
    throw ConfigError("unknown LLM backend '" + std::string(name) + "' (expected mock or openai-compatible)");
}

}  // namespace laser
