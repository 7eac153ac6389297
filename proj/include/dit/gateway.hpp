#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "dit/chat.hpp"
#include "dit/errors.hpp"
#include "dit/synthesis.hpp"

namespace dit {

struct CompletionRequest {
    std::string model_alias;
    ChatSequence messages;
    double temperature = 0.0;
    int max_tokens = 512;
    std::vector<std::string> tags; // free-form audit labels
};

struct CompletionResponse {
    std::string text;
    std::string resolved_model;
    int prompt_tokens = 0;
    int completion_tokens = 0;
    int attempts = 1;
    bool from_replay = false;
};

enum class GatewayMode { record, replay, passthrough };

GatewayMode gateway_mode_from_name(const std::string& name);
const char* gateway_mode_name(GatewayMode mode);

// Versioned identifiers the published experiments used; the config may
// override or extend this table.
std::map<std::string, std::string> default_model_versions();

struct GatewayConfig {
    GatewayMode mode = GatewayMode::replay;
    std::filesystem::path cassette_path;
    std::map<std::string, std::string> model_versions = default_model_versions();
    std::string api_base = "https://api.openai.com";
    std::string api_key_env = "DIT_API_KEY";
    int max_attempts = 5;
    int backoff_initial_ms = 250;
    double backoff_factor = 2.0;
    int max_in_flight = 4;
};

// One HTTP exchange; tests inject fakes, the default performs a real POST.
struct HttpResult {
    int status = 0;
    std::string body;
};
using Transport = std::function<HttpResult(const std::string& path, const std::string& json_body)>;

// Append-only request-fingerprint → response store. Replay mode never
// touches the network; the fingerprint covers (resolved model, messages,
// temperature) so cassettes survive max_tokens tweaks.
class ReplayCassette {
public:
    ReplayCassette() = default;
    explicit ReplayCassette(std::filesystem::path path);

    std::optional<std::string> lookup(const std::string& fingerprint) const;
    void record(const std::string& fingerprint, const std::string& request_json, const std::string& response_text);
    size_t size() const { return entries_.size(); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::map<std::string, std::string> entries_;
    mutable std::mutex mutex_;
};

class Gateway {
public:
    explicit Gateway(GatewayConfig cfg, Transport transport = {});

    std::string resolve_alias(const std::string& alias) const;

    static std::string fingerprint(const std::string& resolved_model, const ChatSequence& messages,
                                   double temperature);

    CompletionResponse complete(const CompletionRequest& req);

    struct Outcome {
        std::optional<CompletionResponse> response;
        std::string error; // nonempty on per-item failure
    };
    // Order-preserving; at most cfg.max_in_flight requests run concurrently;
    // per-item failures never abort the batch.
    std::vector<Outcome> complete_many(const std::vector<CompletionRequest>& reqs, int max_in_flight);

    // Binds this gateway as a synthesis/eval completion callback.
    CompletionFn completion_fn(const std::string& alias, int max_tokens = 512);

    const GatewayConfig& config() const { return cfg_; }
    ReplayCassette& cassette() { return cassette_; }

private:
    CompletionResponse dispatch(const CompletionRequest& req, const std::string& resolved,
                                const std::string& request_json);

    GatewayConfig cfg_;
    Transport transport_;
    ReplayCassette cassette_;
};

// Canonical request JSON (sorted keys) used for fingerprints and cassettes.
std::string canonical_request_json(const std::string& resolved_model, const ChatSequence& messages,
                                   double temperature);

// Real HTTP transport over the configured API base; reads the key from the
// configured environment variable at call time so it never sits in any
// serializable state.
Transport make_http_transport(const GatewayConfig& cfg);

} // namespace dit
