#include "dit/gateway.hpp"

#ifdef DIT_HAVE_OPENSSL
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include <cstdlib>

namespace dit {

Transport make_http_transport(const GatewayConfig& cfg) {
    const std::string base = cfg.api_base;
    const std::string key_env = cfg.api_key_env;
    return [base, key_env](const std::string& path, const std::string& json_body) -> HttpResult {
        const char* key = std::getenv(key_env.c_str());
        if (key == nullptr || *key == '\0')
            throw gateway_error("missing API credential: set " + key_env);
        httplib::Client client(base);
        client.set_connection_timeout(30);
        client.set_read_timeout(120);
        httplib::Headers headers = {{"Authorization", std::string("Bearer ") + key}};
        auto res = client.Post(path, headers, json_body, "application/json");
        if (!res) throw gateway_error("transport error: " + httplib::to_string(res.error()));
        return HttpResult{res->status, res->body};
    };
}

} // namespace dit
