#include "dit/config.hpp"

#include "dit/eval.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <sstream>

#include "dit/util.hpp"

namespace dit {

namespace {

std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_string = !in_string;
        if (line[i] == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

Config::Value parse_scalar(const std::string& raw, const std::string& key) {
    const std::string t = trim(raw);
    if (t.empty()) throw config_error("empty value for key '" + key + "'");
    if (t.front() == '"') {
        if (t.size() < 2 || t.back() != '"')
            throw config_error("unterminated string for key '" + key + "'");
        return t.substr(1, t.size() - 2);
    }
    if (t == "true") return true;
    if (t == "false") return false;
    // Integer first, then float.
    {
        int64_t v{};
        auto res = std::from_chars(t.data(), t.data() + t.size(), v);
        if (res.ec == std::errc{} && res.ptr == t.data() + t.size()) return v;
    }
    try {
        size_t used = 0;
        const double v = std::stod(t, &used);
        if (used == t.size()) return v;
    } catch (...) {
    }
    throw config_error("cannot parse value '" + t + "' for key '" + key + "'");
}

Config::Value parse_value(const std::string& raw, const std::string& key) {
    const std::string t = trim(raw);
    if (!t.empty() && t.front() == '[') {
        if (t.back() != ']') throw config_error("unterminated array for key '" + key + "'");
        std::vector<std::string> items;
        std::string cur;
        bool in_string = false;
        for (size_t i = 1; i + 1 < t.size(); ++i) {
            const char c = t[i];
            if (c == '"') in_string = !in_string;
            if (c == ',' && !in_string) {
                items.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        if (!trim(cur).empty()) items.push_back(cur);

        std::vector<int64_t> ints;
        std::vector<double> doubles;
        std::vector<std::string> strings;
        bool all_int = true, all_num = true;
        for (const auto& item : items) {
            Config::Value v = parse_scalar(item, key);
            if (std::holds_alternative<int64_t>(v)) {
                ints.push_back(std::get<int64_t>(v));
                doubles.push_back(static_cast<double>(std::get<int64_t>(v)));
                strings.push_back(trim(item));
            } else if (std::holds_alternative<double>(v)) {
                all_int = false;
                doubles.push_back(std::get<double>(v));
                strings.push_back(trim(item));
            } else if (std::holds_alternative<std::string>(v)) {
                all_int = all_num = false;
                strings.push_back(std::get<std::string>(v));
            } else {
                throw config_error("unsupported array element for key '" + key + "'");
            }
        }
        if (all_int) return ints;
        if (all_num) return doubles;
        return strings;
    }
    return parse_scalar(t, key);
}

std::string value_to_text(const Config::Value& v) {
    std::ostringstream out;
    if (std::holds_alternative<std::string>(v)) {
        out << '"' << std::get<std::string>(v) << '"';
    } else if (std::holds_alternative<int64_t>(v)) {
        out << std::get<int64_t>(v);
    } else if (std::holds_alternative<double>(v)) {
        out << format_fixed(std::get<double>(v), 9);
    } else if (std::holds_alternative<bool>(v)) {
        out << (std::get<bool>(v) ? "true" : "false");
    } else if (std::holds_alternative<std::vector<int64_t>>(v)) {
        out << '[';
        const auto& xs = std::get<std::vector<int64_t>>(v);
        for (size_t i = 0; i < xs.size(); ++i) out << (i ? ", " : "") << xs[i];
        out << ']';
    } else if (std::holds_alternative<std::vector<double>>(v)) {
        out << '[';
        const auto& xs = std::get<std::vector<double>>(v);
        for (size_t i = 0; i < xs.size(); ++i) out << (i ? ", " : "") << format_fixed(xs[i], 9);
        out << ']';
    } else {
        out << '[';
        const auto& xs = std::get<std::vector<std::string>>(v);
        for (size_t i = 0; i < xs.size(); ++i) out << (i ? ", " : "") << '"' << xs[i] << '"';
        out << ']';
    }
    return out.str();
}

} // namespace

Config Config::parse(const std::string& text) {
    Config cfg;
    std::string section;
    int line_no = 0;
    for (const auto& raw_line : split_lines(text)) {
        ++line_no;
        const std::string line = trim(strip_comment(raw_line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw config_error("line " + std::to_string(line_no) + ": bad section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty())
                throw config_error("line " + std::to_string(line_no) + ": empty section name");
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw config_error("line " + std::to_string(line_no) + ": empty key");
        const std::string full_key = section.empty() ? key : section + "." + key;
        cfg.values_[full_key] = parse_value(line.substr(eq + 1), full_key);
    }
    return cfg;
}

Config Config::parse_file(const std::filesystem::path& path) {
    try {
        return parse(read_file(path));
    } catch (const io_error& e) {
        throw config_error(e.what());
    }
}

void Config::set_override(const std::string& dotted_key, const std::string& value_text) {
    if (dotted_key.empty()) throw config_error("empty override key");
    values_[dotted_key] = parse_value(value_text, dotted_key);
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (!std::holds_alternative<std::string>(it->second))
        throw config_error("key '" + key + "' is not a string");
    return std::get<std::string>(it->second);
}

std::string Config::require_string(const std::string& key) const {
    if (!has(key)) throw config_error("missing required config key '" + key + "'");
    return get_string(key, "");
}

int64_t Config::get_int(const std::string& key, int64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (!std::holds_alternative<int64_t>(it->second))
        throw config_error("key '" + key + "' is not an integer");
    return std::get<int64_t>(it->second);
}

double Config::get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (std::holds_alternative<int64_t>(it->second))
        return static_cast<double>(std::get<int64_t>(it->second));
    if (!std::holds_alternative<double>(it->second))
        throw config_error("key '" + key + "' is not a number");
    return std::get<double>(it->second);
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (!std::holds_alternative<bool>(it->second))
        throw config_error("key '" + key + "' is not a boolean");
    return std::get<bool>(it->second);
}

std::vector<int64_t> Config::get_int_list(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return {};
    if (std::holds_alternative<std::vector<int64_t>>(it->second))
        return std::get<std::vector<int64_t>>(it->second);
    if (std::holds_alternative<int64_t>(it->second)) return {std::get<int64_t>(it->second)};
    throw config_error("key '" + key + "' is not an integer list");
}

std::vector<std::string> Config::get_string_list(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return {};
    if (std::holds_alternative<std::vector<std::string>>(it->second))
        return std::get<std::vector<std::string>>(it->second);
    if (std::holds_alternative<std::string>(it->second)) return {std::get<std::string>(it->second)};
    throw config_error("key '" + key + "' is not a string list");
}

std::string Config::snapshot() const {
    std::string out;
    for (const auto& [key, value] : values_) out += key + " = " + value_to_text(value) + "\n";
    return out;
}

ExperimentConfig ExperimentConfig::from(const Config& cfg) {
    ExperimentConfig ec;
    ec.raw = cfg;

    ec.run_id = cfg.get_string("run.id", ec.run_id);
    ec.out_dir = cfg.get_string("run.out_dir", ec.out_dir.string());
    ec.task = cfg.get_string("run.task", ec.task);
    if (ec.task != "hidden_topic" && ec.task != "news")
        throw config_error("run.task must be hidden_topic or news");
    ec.seed = static_cast<uint64_t>(cfg.get_int("run.seed", static_cast<int64_t>(ec.seed)));

    ec.model.n_layers = static_cast<int>(cfg.get_int("model.n_layers", ec.model.n_layers));
    ec.model.d_model = static_cast<int>(cfg.get_int("model.d_model", ec.model.d_model));
    ec.model.n_heads = static_cast<int>(cfg.get_int("model.n_heads", ec.model.n_heads));
    ec.model.d_ff = static_cast<int>(cfg.get_int("model.d_ff", ec.model.d_ff));
    ec.model.block_size = static_cast<int>(cfg.get_int("model.block_size", ec.model.block_size));
    ec.model.seed = static_cast<uint64_t>(cfg.get_int("model.seed", static_cast<int64_t>(ec.model.seed)));
    ec.model.validate();
    ec.pretrain_steps = static_cast<int>(cfg.get_int("model.pretrain_steps", ec.pretrain_steps));
    ec.pretrain_lr = cfg.get_double("model.pretrain_lr", ec.pretrain_lr);
    ec.pretrain_batch = static_cast<int>(cfg.get_int("model.pretrain_batch", ec.pretrain_batch));

    ec.train_diffs = static_cast<int>(cfg.get_int("synthesis.train_diffs", ec.train_diffs));
    ec.test_diffs = static_cast<int>(cfg.get_int("synthesis.test_diffs", ec.test_diffs));
    ec.diff_rank = static_cast<int>(cfg.get_int("synthesis.rank", ec.diff_rank));
    ec.diff_epochs = static_cast<int>(cfg.get_int("synthesis.epochs", ec.diff_epochs));
    ec.diff_lr = cfg.get_double("synthesis.lr", ec.diff_lr);
    ec.trigger_kind = cfg.get_string("synthesis.trigger_kind", ec.trigger_kind);
    trigger_kind_from_name(ec.trigger_kind); // validates
    ec.news_stories_per_headline =
        static_cast<int>(cfg.get_int("synthesis.news_stories", ec.news_stories_per_headline));
    ec.news_rank = static_cast<int>(cfg.get_int("synthesis.news_rank", ec.news_rank));
    ec.news_epochs = static_cast<int>(cfg.get_int("synthesis.news_epochs", ec.news_epochs));

    ec.dit.adapter_rank = static_cast<int>(cfg.get_int("dit.rank", ec.dit.adapter_rank));
    ec.dit.batch = static_cast<int>(cfg.get_int("dit.batch", ec.dit.batch));
    ec.dit.lr = cfg.get_double("dit.lr", ec.dit.lr);
    ec.dit.steps = static_cast<int>(cfg.get_int("dit.steps", ec.dit.steps));
    ec.dit.seed = static_cast<uint64_t>(cfg.get_int("dit.seed", static_cast<int64_t>(ec.seed)));
    ec.dit.eval_every = static_cast<int>(cfg.get_int("dit.eval_every", ec.dit.eval_every));
    ec.dit.checkpoint_every = static_cast<int>(cfg.get_int("dit.checkpoint_every", ec.dit.checkpoint_every));

    if (cfg.has("eval.methods")) ec.methods = cfg.get_string_list("eval.methods");
    for (const auto& m : ec.methods) eval_method_from_name(m); // validates
    ec.decode_max_tokens = static_cast<int>(cfg.get_int("eval.max_tokens", ec.decode_max_tokens));
    ec.llm_judge = cfg.get_bool("eval.llm_judge", ec.llm_judge);
    ec.judge_alias = cfg.get_string("eval.judge_alias", ec.judge_alias);
    ec.aggregator_alias = cfg.get_string("eval.aggregator_alias", ec.aggregator_alias);
    ec.generator_alias = cfg.get_string("eval.generator_alias", ec.generator_alias);

    ec.gateway.mode = gateway_mode_from_name(cfg.get_string("gateway.mode", "replay"));
    ec.gateway.cassette_path = cfg.get_string("gateway.cassette", "");
    ec.gateway.api_base = cfg.get_string("gateway.api_base", ec.gateway.api_base);
    ec.gateway.api_key_env = cfg.get_string("gateway.api_key_env", ec.gateway.api_key_env);
    ec.gateway.max_attempts = static_cast<int>(cfg.get_int("gateway.max_attempts", ec.gateway.max_attempts));
    ec.gateway.max_in_flight =
        static_cast<int>(cfg.get_int("gateway.max_in_flight", ec.gateway.max_in_flight));
    for (const auto& alias : cfg.get_string_list("gateway.alias_overrides")) {
        const size_t eq = alias.find('=');
        if (eq == std::string::npos)
            throw config_error("gateway.alias_overrides entries look like alias=versioned-id");
        ec.gateway.model_versions[trim(alias.substr(0, eq))] = trim(alias.substr(eq + 1));
    }

    if (cfg.has("sweep.sizes")) {
        ec.sweep_sizes.clear();
        for (int64_t v : cfg.get_int_list("sweep.sizes")) ec.sweep_sizes.push_back(static_cast<int>(v));
    }
    return ec;
}

} // namespace dit
