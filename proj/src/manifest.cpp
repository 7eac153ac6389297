#include "dit/manifest.hpp"

#include <chrono>
#include <fstream>

#include <json.hpp>

#include "dit/errors.hpp"
#include "dit/util.hpp"

namespace dit {

using nlohmann::json;

RunManifest::RunManifest(std::filesystem::path run_dir) : run_dir_(std::move(run_dir)) {
    std::filesystem::create_directories(run_dir_);
}

std::string RunManifest::version() { return "dit-workbench/0.1"; }

void RunManifest::record_stage(const std::string& stage, const std::string& config_fingerprint,
                               const std::vector<std::filesystem::path>& artifacts,
                               const std::map<std::string, std::string>& extra, double elapsed_seconds) {
    json event;
    event["event"] = "stage";
    event["stage"] = stage;
    event["version"] = version();
    event["config_fingerprint"] = config_fingerprint;
    event["elapsed_seconds"] = elapsed_seconds;
    event["unix_time"] =
        std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
            .count();
    json arts = json::object();
    for (const auto& path : artifacts) {
        const auto rel = std::filesystem::relative(path, run_dir_);
        arts[rel.generic_string()] = hex64(file_fingerprint(path));
    }
    event["artifacts"] = arts;
    for (const auto& [k, v] : extra) event[k] = v;
    append_file(path(), event.dump() + "\n");
}

void RunManifest::record_labels(const std::string& stage, const std::vector<std::string>& label_fingerprints) {
    json event;
    event["event"] = "labels";
    event["stage"] = stage;
    event["label_fingerprints"] = label_fingerprints;
    append_file(path(), event.dump() + "\n");
}

std::vector<std::string> RunManifest::stage_labels(const std::string& stage) const {
    std::vector<std::string> out;
    if (!std::filesystem::exists(path())) return out;
    std::ifstream in(path());
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        json j = json::parse(line);
        if (j.value("event", "") == "labels" && j.value("stage", "") == stage)
            for (const auto& fp : j.at("label_fingerprints"))
                out.push_back(fp.get<std::string>());
    }
    return out;
}

bool RunManifest::has_stage(const std::string& stage) const {
    if (!std::filesystem::exists(path())) return false;
    std::ifstream in(path());
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        json j = json::parse(line);
        if (j.value("event", "") == "stage" && j.value("stage", "") == stage) return true;
    }
    return false;
}

} // namespace dit
