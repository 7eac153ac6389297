#include "dit/gateway.hpp"

#include <chrono>
#include <fstream>
#include <semaphore>
#include <thread>

#include <json.hpp>

#include "dit/util.hpp"

namespace dit {

using nlohmann::json;

GatewayMode gateway_mode_from_name(const std::string& name) {
    if (name == "record") return GatewayMode::record;
    if (name == "replay") return GatewayMode::replay;
    if (name == "passthrough") return GatewayMode::passthrough;
    throw config_error("unknown gateway mode: " + name);
}

const char* gateway_mode_name(GatewayMode mode) {
    switch (mode) {
        case GatewayMode::record: return "record";
        case GatewayMode::replay: return "replay";
        case GatewayMode::passthrough: return "passthrough";
    }
    return "?";
}

std::map<std::string, std::string> default_model_versions() {
    return {
        {"gpt-4o-mini", "gpt-4o-mini-2024-07-18"},
        {"o4-mini", "o4-mini-2025-04-16"},
        {"claude-3-7-sonnet", "claude-3-7-sonnet-20250219"},
    };
}

// ---------------------------------------------------------------------------
// Cassette
// ---------------------------------------------------------------------------

ReplayCassette::ReplayCassette(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.empty() || !std::filesystem::exists(path_)) return;
    std::ifstream in(path_);
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        json j = json::parse(line);
        entries_[j.at("fingerprint").get<std::string>()] = j.at("response").at("text").get<std::string>();
    }
}

std::optional<std::string> ReplayCassette::lookup(const std::string& fingerprint) const {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = entries_.find(fingerprint);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void ReplayCassette::record(const std::string& fingerprint, const std::string& request_json,
                            const std::string& response_text) {
    std::lock_guard<std::mutex> lock(mutex_);
    entries_[fingerprint] = response_text;
    if (path_.empty()) return;
    json j;
    j["fingerprint"] = fingerprint;
    j["request"] = json::parse(request_json);
    j["response"] = json{{"text", response_text}};
    append_file(path_, j.dump() + "\n");
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

std::string canonical_request_json(const std::string& resolved_model, const ChatSequence& messages,
                                   double temperature) {
    json msgs = json::array();
    for (const auto& turn : messages.turns)
        msgs.push_back(json{{"content", turn.content}, {"role", role_name(turn.role)}});
    json j;
    j["messages"] = msgs;
    j["model"] = resolved_model;
    j["temperature"] = temperature;
    return j.dump();
}

Gateway::Gateway(GatewayConfig cfg, Transport transport)
    : cfg_(std::move(cfg)), transport_(std::move(transport)), cassette_(cfg_.cassette_path) {
    if (!transport_ && cfg_.mode != GatewayMode::replay) transport_ = make_http_transport(cfg_);
}

std::string Gateway::resolve_alias(const std::string& alias) const {
    auto it = cfg_.model_versions.find(alias);
    if (it == cfg_.model_versions.end()) {
        // Already-versioned identifiers pass through.
        for (const auto& [a, v] : cfg_.model_versions)
            if (v == alias) return alias;
        throw gateway_error("unknown model alias: " + alias);
    }
    return it->second;
}

std::string Gateway::fingerprint(const std::string& resolved_model, const ChatSequence& messages,
                                 double temperature) {
    return hex64(fnv1a64(canonical_request_json(resolved_model, messages, temperature)));
}

CompletionResponse Gateway::dispatch(const CompletionRequest& req, const std::string& resolved,
                                     const std::string& request_json) {
    json body = json::parse(request_json);
    body["max_tokens"] = req.max_tokens;

    int attempt = 0;
    int delay_ms = cfg_.backoff_initial_ms;
    std::string last_error;
    while (attempt < cfg_.max_attempts) {
        ++attempt;
        HttpResult res;
        try {
            res = transport_("/v1/chat/completions", body.dump());
        } catch (const std::exception& e) {
            res = HttpResult{0, e.what()};
        }
        if (res.status == 200) {
            json parsed = json::parse(res.body);
            CompletionResponse out;
            out.text = parsed.at("choices").at(0).at("message").at("content").get<std::string>();
            out.resolved_model = resolved;
            if (parsed.contains("usage")) {
                out.prompt_tokens = parsed["usage"].value("prompt_tokens", 0);
                out.completion_tokens = parsed["usage"].value("completion_tokens", 0);
            }
            out.attempts = attempt;
            return out;
        }
        if (res.status == 401 || res.status == 403)
            throw gateway_error("authentication failure (" + std::to_string(res.status) + ")");
        last_error = "status " + std::to_string(res.status) + ": " + res.body.substr(0, 200);
        const bool retryable = res.status == 0 || res.status == 429 || res.status >= 500;
        if (!retryable) break;
        if (attempt < cfg_.max_attempts) {
            std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
            delay_ms = static_cast<int>(delay_ms * cfg_.backoff_factor);
        }
    }
    throw gateway_error("request failed after " + std::to_string(attempt) + " attempts; last error: " +
                        last_error);
}

CompletionResponse Gateway::complete(const CompletionRequest& req) {
    req.messages.validate();
    const std::string resolved = resolve_alias(req.model_alias);
    const std::string request_json = canonical_request_json(resolved, req.messages, req.temperature);
    const std::string fp = hex64(fnv1a64(request_json));

    if (cfg_.mode == GatewayMode::replay) {
        auto hit = cassette_.lookup(fp);
        if (!hit)
            throw replay_miss_error("no cassette entry for fingerprint " + fp + " (model " + resolved + ")");
        CompletionResponse out;
        out.text = *hit;
        out.resolved_model = resolved;
        out.from_replay = true;
        return out;
    }

    if (cfg_.mode == GatewayMode::record) {
        // Re-running a partially recorded pipeline replays what it already has.
        auto hit = cassette_.lookup(fp);
        if (hit) {
            CompletionResponse out;
            out.text = *hit;
            out.resolved_model = resolved;
            out.from_replay = true;
            return out;
        }
    }

    CompletionResponse out = dispatch(req, resolved, request_json);
    if (cfg_.mode == GatewayMode::record) cassette_.record(fp, request_json, out.text);
    return out;
}

std::vector<Gateway::Outcome> Gateway::complete_many(const std::vector<CompletionRequest>& reqs,
                                                     int max_in_flight) {
    if (max_in_flight < 1) throw malformed_input_error("max_in_flight must be >= 1");
    std::vector<Outcome> outcomes(reqs.size());
    std::counting_semaphore<> slots(max_in_flight);
    std::vector<std::thread> threads;
    threads.reserve(reqs.size());
    for (size_t i = 0; i < reqs.size(); ++i) {
        slots.acquire();
        threads.emplace_back([this, &reqs, &outcomes, &slots, i]() {
            try {
                outcomes[i].response = complete(reqs[i]);
            } catch (const std::exception& e) {
                outcomes[i].error = e.what();
            }
            slots.release();
        });
    }
    for (auto& t : threads) t.join();
    return outcomes;
}

CompletionFn Gateway::completion_fn(const std::string& alias, int max_tokens) {
    return [this, alias, max_tokens](const ChatSequence& messages, double temperature) {
        CompletionRequest req;
        req.model_alias = alias;
        req.messages = messages;
        req.temperature = temperature;
        req.max_tokens = max_tokens;
        return complete(req).text;
    };
}

} // namespace dit
