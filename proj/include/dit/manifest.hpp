#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace dit {

// Append-only run manifest: one JSON event per completed stage, each
// fingerprinting every file the stage emitted. Artifacts are referenced by
// path relative to the run directory so runs stay relocatable. Timings live
// only here, never in records/tables/sidecars.
class RunManifest {
public:
    explicit RunManifest(std::filesystem::path run_dir);

    void record_stage(const std::string& stage, const std::string& config_fingerprint,
                      const std::vector<std::filesystem::path>& artifacts,
                      const std::map<std::string, std::string>& extra = {}, double elapsed_seconds = 0.0);

    // Label fingerprints recorded by a prior stage (for held-out hygiene).
    std::vector<std::string> stage_labels(const std::string& stage) const;

    bool has_stage(const std::string& stage) const;

    static std::string version();

    const std::filesystem::path& run_dir() const { return run_dir_; }
    std::filesystem::path path() const { return run_dir_ / "manifest.jsonl"; }

    void record_labels(const std::string& stage, const std::vector<std::string>& label_fingerprints);

private:
    std::filesystem::path run_dir_;
};

} // namespace dit
