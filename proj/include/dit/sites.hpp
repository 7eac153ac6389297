#pragma once

#include <array>
#include <string>
#include <vector>

#include "dit/errors.hpp"

namespace dit {

// The seven adaptable linear site types of a standard decoder block.
// Embedding, unembedding and positional tables are never adaptation sites.
enum class SiteType : int { q = 0, k, v, o, gate, up, down };

constexpr int kNumSiteTypes = 7;

inline const char* site_type_name(SiteType t) {
    static constexpr std::array<const char*, kNumSiteTypes> names = {"q", "k", "v", "o",
                                                                     "gate", "up", "down"};
    return names[static_cast<size_t>(t)];
}

inline SiteType site_type_from_name(const std::string& name) {
    for (int i = 0; i < kNumSiteTypes; ++i)
        if (name == site_type_name(static_cast<SiteType>(i))) return static_cast<SiteType>(i);
    throw malformed_input_error("unknown site type: " + name);
}

struct Site {
    int layer = 0;
    SiteType type = SiteType::q;
    int d_in = 0;  // weights act as x·W with W: d_in × d_out
    int d_out = 0;
};

// Static description of a model: identity plus its adaptation-site inventory.
// The inventory order is stable (layer-major, then site type) so adapters can
// index sites positionally.
struct ModelHandle {
    std::string model_id;
    std::vector<Site> sites;
    int vocab_size = 0;

    int n_layers() const {
        return sites.empty() ? 0 : sites.back().layer + 1;
    }

    int site_index(int layer, SiteType type) const {
        int idx = layer * kNumSiteTypes + static_cast<int>(type);
        if (idx < 0 || idx >= static_cast<int>(sites.size()))
            throw malformed_input_error("site index out of range");
        return idx;
    }

    const Site& site(int layer, SiteType type) const { return sites[static_cast<size_t>(site_index(layer, type))]; }
};

// Inventory for a uniform decoder stack: every layer carries all 7 types.
inline std::vector<Site> make_standard_sites(int n_layers, int d_model, int d_ff) {
    std::vector<Site> sites;
    sites.reserve(static_cast<size_t>(n_layers) * kNumSiteTypes);
    for (int l = 0; l < n_layers; ++l) {
        sites.push_back({l, SiteType::q, d_model, d_model});
        sites.push_back({l, SiteType::k, d_model, d_model});
        sites.push_back({l, SiteType::v, d_model, d_model});
        sites.push_back({l, SiteType::o, d_model, d_model});
        sites.push_back({l, SiteType::gate, d_model, d_ff});
        sites.push_back({l, SiteType::up, d_model, d_ff});
        sites.push_back({l, SiteType::down, d_ff, d_model});
    }
    return sites;
}

} // namespace dit
