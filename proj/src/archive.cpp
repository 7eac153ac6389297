#include "dit/archive.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "dit/util.hpp"

namespace dit {

using nlohmann::json;

void save_tensor_archive(const std::filesystem::path& path, const TensorMap& tensors) {
    json header = json::object();
    uint64_t offset = 0;
    for (const auto& [name, entry] : tensors) {
        json t;
        t["dtype"] = entry.dtype;
        t["shape"] = entry.shape;
        t["data_offsets"] = {offset, offset + entry.bytes.size()};
        header[name] = t;
        offset += entry.bytes.size();
    }
    const std::string header_str = header.dump();

    std::string out;
    out.reserve(8 + header_str.size() + offset);
    uint64_t header_len = header_str.size();
    char lenbuf[8];
    for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<char>((header_len >> (8 * i)) & 0xff);
    out.append(lenbuf, 8);
    out.append(header_str);
    for (const auto& [name, entry] : tensors) out.append(entry.bytes);
    write_file(path, out);
}

TensorMap load_tensor_archive(const std::filesystem::path& path) {
    const std::string raw = read_file(path);
    if (raw.size() < 8) throw io_error("tensor archive truncated: " + path.string());
    uint64_t header_len = 0;
    for (int i = 0; i < 8; ++i)
        header_len |= static_cast<uint64_t>(static_cast<unsigned char>(raw[i])) << (8 * i);
    if (8 + header_len > raw.size()) throw io_error("tensor archive header overruns file: " + path.string());

    json header;
    try {
        header = json::parse(raw.substr(8, header_len));
    } catch (const json::exception& e) {
        throw io_error("corrupt tensor archive header: " + std::string(e.what()));
    }

    const size_t payload_base = 8 + header_len;
    TensorMap tensors;
    for (auto it = header.begin(); it != header.end(); ++it) {
        if (it.key() == "__metadata__") continue;
        const json& t = it.value();
        TensorEntry entry;
        entry.dtype = t.at("dtype").get<std::string>();
        entry.shape = t.at("shape").get<std::vector<int64_t>>();
        const auto offsets = t.at("data_offsets").get<std::vector<uint64_t>>();
        if (offsets.size() != 2 || offsets[1] < offsets[0] || payload_base + offsets[1] > raw.size())
            throw io_error("corrupt tensor offsets for '" + it.key() + "'");
        entry.bytes = raw.substr(payload_base + offsets[0], offsets[1] - offsets[0]);
        tensors.emplace(it.key(), std::move(entry));
    }
    return tensors;
}

// ---------------------------------------------------------------------------

namespace {

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
    std::filesystem::path p = path;
    p += ".json";
    return p;
}

json meta_to_json(const AdapterMeta& meta, bool low_rank) {
    json j;
    j["kind"] = low_rank ? "low_rank" : "dense";
    j["base_model_id"] = meta.base_model_id;
    j["rank"] = meta.rank;
    j["output_scale"] = meta.output_scale;
    j["seed"] = meta.seed;
    j["created_by"] = meta.created_by;
    j["task"] = meta.task;
    j["label"] = meta.label;
    j["trigger_kind"] = meta.trigger_kind;
    j["trigger_digits"] = meta.trigger_digits;
    return j;
}

AdapterMeta meta_from_json(const json& j) {
    AdapterMeta meta;
    meta.base_model_id = j.value("base_model_id", "");
    meta.rank = j.value("rank", 0);
    meta.output_scale = j.value("output_scale", 1.0);
    meta.seed = j.value("seed", uint64_t(0));
    meta.created_by = j.value("created_by", "");
    meta.task = j.value("task", "");
    meta.label = j.value("label", "");
    meta.trigger_kind = j.value("trigger_kind", "");
    meta.trigger_digits = j.value("trigger_digits", "");
    return meta;
}

std::string site_key(int layer, SiteType type) {
    return "layers." + std::to_string(layer) + "." + site_type_name(type);
}

} // namespace

void save_diff(const WeightDiff& diff, const std::filesystem::path& path) {
    TensorMap tensors;
    if (diff.is_low_rank()) {
        const LoraAdapter& lora = *diff.low_rank;
        for (size_t i = 0; i < lora.site_factors.size(); ++i) {
            const int layer = static_cast<int>(i) / kNumSiteTypes;
            const SiteType type = static_cast<SiteType>(i % kNumSiteTypes);
            const auto& f = lora.site_factors[i];
            if (!f.present()) continue;
            tensors[site_key(layer, type) + ".A"] = tensor_entry(f.a_out);
            tensors[site_key(layer, type) + ".B"] = tensor_entry(f.b_in);
        }
    } else {
        const auto& dense = *diff.dense;
        for (size_t i = 0; i < dense.deltas.size(); ++i) {
            const int layer = static_cast<int>(i) / kNumSiteTypes;
            const SiteType type = static_cast<SiteType>(i % kNumSiteTypes);
            if (dense.deltas[i].empty()) continue;
            tensors[site_key(layer, type) + ".delta"] = tensor_entry(dense.deltas[i]);
        }
    }
    save_tensor_archive(path, tensors);

    json meta = meta_to_json(diff.meta(), diff.is_low_rank());
    write_file(sidecar_path(path), meta.dump(2) + "\n");
}

WeightDiff load_diff(const std::filesystem::path& path, const std::string& expect_base_model_id) {
    json meta_json;
    try {
        meta_json = json::parse(read_file(sidecar_path(path)));
    } catch (const json::exception& e) {
        throw io_error("corrupt diff metadata sidecar: " + std::string(e.what()));
    }
    AdapterMeta meta = meta_from_json(meta_json);
    if (!expect_base_model_id.empty() && meta.base_model_id != expect_base_model_id)
        throw incompatible_diff_error("diff base model '" + meta.base_model_id + "' does not match expected '" +
                                      expect_base_model_id + "'");

    TensorMap tensors = load_tensor_archive(path);
    const std::string kind = meta_json.value("kind", "low_rank");

    // Sites are keyed layer-major; recover the layer count from the keys.
    int max_layer = -1;
    for (const auto& [name, entry] : tensors) {
        if (!starts_with(name, "layers.")) continue;
        max_layer = std::max(max_layer, std::stoi(name.substr(7)));
    }
    const size_t n_sites = static_cast<size_t>(max_layer + 1) * kNumSiteTypes;

    if (kind == "low_rank") {
        LoraAdapter lora;
        lora.meta = meta;
        lora.rank = meta.rank;
        lora.output_scale = static_cast<float>(meta.output_scale);
        lora.site_factors.resize(n_sites);
        for (size_t i = 0; i < n_sites; ++i) {
            const int layer = static_cast<int>(i) / kNumSiteTypes;
            const SiteType type = static_cast<SiteType>(i % kNumSiteTypes);
            auto a_it = tensors.find(site_key(layer, type) + ".A");
            auto b_it = tensors.find(site_key(layer, type) + ".B");
            if (a_it == tensors.end() || b_it == tensors.end()) continue;
            lora.site_factors[i].a_out = mat_from_entry<float>(a_it->second, a_it->first);
            lora.site_factors[i].b_in = mat_from_entry<float>(b_it->second, b_it->first);
        }
        return WeightDiff::from_adapter(std::move(lora));
    }

    DenseDiffT<float> dense;
    dense.meta = meta;
    dense.deltas.resize(n_sites);
    for (size_t i = 0; i < n_sites; ++i) {
        const int layer = static_cast<int>(i) / kNumSiteTypes;
        const SiteType type = static_cast<SiteType>(i % kNumSiteTypes);
        auto it = tensors.find(site_key(layer, type) + ".delta");
        if (it == tensors.end()) continue;
        dense.deltas[i] = mat_from_entry<float>(it->second, it->first);
    }
    return WeightDiff::from_dense(std::move(dense));
}

LoraAdapter load_adapter(const std::filesystem::path& path, const std::string& expect_base_model_id) {
    WeightDiff diff = load_diff(path, expect_base_model_id);
    if (!diff.is_low_rank()) throw incompatible_diff_error("archive at " + path.string() + " is not low-rank");
    return std::move(*diff.low_rank);
}

} // namespace dit
