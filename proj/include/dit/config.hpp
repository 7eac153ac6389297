#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "dit/dit_trainer.hpp"
#include "dit/gateway.hpp"
#include "dit/model.hpp"
#include "dit/synthesis.hpp"

namespace dit {

// Minimal TOML-style config: [section] headers, `key = value` lines, where a
// value is a quoted string, integer, float, boolean, or a flat array of
// those. `#` starts a comment. Keys address as "section.key".
class Config {
public:
    using Value = std::variant<std::string, int64_t, double, bool, std::vector<std::string>,
                               std::vector<int64_t>, std::vector<double>>;

    static Config parse(const std::string& text);
    static Config parse_file(const std::filesystem::path& path);

    // CLI override: --set section.key=value (value parsed like a config value).
    void set_override(const std::string& dotted_key, const std::string& value_text);

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::string require_string(const std::string& key) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<int64_t> get_int_list(const std::string& key) const;
    std::vector<std::string> get_string_list(const std::string& key) const;

    // Canonical re-serialization (sorted keys) for manifests.
    std::string snapshot() const;

    const std::map<std::string, Value>& values() const { return values_; }

private:
    std::map<std::string, Value> values_;
};

// Typed view of one experiment run.
struct ExperimentConfig {
    // [run]
    std::string run_id = "toy";
    std::filesystem::path out_dir = "runs";
    std::string task = "hidden_topic"; // hidden_topic | news
    uint64_t seed = 1;

    // [model]
    ToyTransformerConfig model;
    int pretrain_steps = 2500;
    double pretrain_lr = 3e-3;
    int pretrain_batch = 16;

    // [synthesis]
    int train_diffs = 64;
    int test_diffs = 16;
    int diff_rank = 1;
    int diff_epochs = 4;
    double diff_lr = 1e-3;
    std::string trigger_kind = "sep_code"; // sep_code | zws_start | zws_random
    int news_stories_per_headline = 16;
    int news_rank = 8;
    int news_epochs = 2;

    // [dit]
    DitTrainConfig dit;

    // [eval]
    std::vector<std::string> methods = {"dit", "base_question"};
    int decode_max_tokens = 48;
    bool llm_judge = false; // toy scorer unless enabled
    std::string judge_alias = "o4-mini";
    std::string aggregator_alias = "o4-mini";
    std::string generator_alias = "gpt-4o-mini";

    // [gateway]
    GatewayConfig gateway;

    // [sweep]
    std::vector<int> sweep_sizes = {8, 16, 32, 64};

    Config raw;

    static ExperimentConfig from(const Config& cfg);
};

} // namespace dit
