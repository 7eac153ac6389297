#include "dit/model.hpp"

#include <json.hpp>

#include "dit/archive.hpp"

namespace dit {

using nlohmann::json;

void save_toy_model(const ToyTransformer& model, const std::filesystem::path& path) {
    TensorMap tensors;
    tensors["wte"] = tensor_entry(model.wte);
    tensors["wpos"] = tensor_entry(model.wpos);
    tensors["wun"] = tensor_entry(model.wun);
    for (int l = 0; l < model.cfg.n_layers; ++l)
        for (int t = 0; t < kNumSiteTypes; ++t) {
            const std::string key = "layers." + std::to_string(l) + "." +
                                    site_type_name(static_cast<SiteType>(t)) + ".weight";
            tensors[key] = tensor_entry(model.site_weight(l * kNumSiteTypes + t));
        }
    save_tensor_archive(path, tensors);

    json cfg;
    cfg["n_layers"] = model.cfg.n_layers;
    cfg["d_model"] = model.cfg.d_model;
    cfg["n_heads"] = model.cfg.n_heads;
    cfg["d_ff"] = model.cfg.d_ff;
    cfg["block_size"] = model.cfg.block_size;
    cfg["vocab_size"] = model.cfg.vocab_size;
    cfg["seed"] = model.cfg.seed;
    cfg["init_std"] = model.cfg.init_std;
    cfg["model_id"] = model.model_id;
    std::filesystem::path sidecar = path;
    sidecar += ".json";
    write_file(sidecar, cfg.dump(2) + "\n");
}

ToyTransformer load_toy_model(const std::filesystem::path& path) {
    std::filesystem::path sidecar = path;
    sidecar += ".json";
    json cfg_json;
    try {
        cfg_json = json::parse(read_file(sidecar));
    } catch (const json::exception& e) {
        throw io_error("corrupt toy model config sidecar: " + std::string(e.what()));
    }

    ToyTransformerConfig cfg;
    cfg.n_layers = cfg_json.at("n_layers").get<int>();
    cfg.d_model = cfg_json.at("d_model").get<int>();
    cfg.n_heads = cfg_json.at("n_heads").get<int>();
    cfg.d_ff = cfg_json.at("d_ff").get<int>();
    cfg.block_size = cfg_json.at("block_size").get<int>();
    cfg.vocab_size = cfg_json.at("vocab_size").get<int>();
    cfg.seed = cfg_json.at("seed").get<uint64_t>();
    cfg.init_std = cfg_json.value("init_std", 0.08);
    cfg.validate();

    TensorMap tensors = load_tensor_archive(path);
    auto need = [&](const std::string& key) -> const TensorEntry& {
        auto it = tensors.find(key);
        if (it == tensors.end()) throw io_error("toy model archive missing tensor '" + key + "'");
        return it->second;
    };

    ToyTransformer m;
    m.cfg = cfg;
    m.model_id = cfg_json.value("model_id", cfg.derived_model_id());
    m.wte = mat_from_entry<float>(need("wte"), "wte");
    m.wpos = mat_from_entry<float>(need("wpos"), "wpos");
    m.wun = mat_from_entry<float>(need("wun"), "wun");
    m.layers.resize(static_cast<size_t>(cfg.n_layers));
    for (int l = 0; l < cfg.n_layers; ++l)
        for (int t = 0; t < kNumSiteTypes; ++t) {
            const std::string key = "layers." + std::to_string(l) + "." +
                                    site_type_name(static_cast<SiteType>(t)) + ".weight";
            m.site_weight(l * kNumSiteTypes + t) = mat_from_entry<float>(need(key), key);
        }
    return m;
}

} // namespace dit
