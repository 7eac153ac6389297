#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dit/eval.hpp"
#include "dit/lora.hpp"

namespace dit {

// Figures are SVG rendered purely from a JSON data sidecar; regenerating a
// figure from its sidecar reproduces the SVG byte for byte.

struct HeatmapSpec {
    std::string title;
    bool normalized = true;
    // Norm matrices of every group member; when given, per-column scales are
    // shared across the whole group. The subject is values[0]’s owner.
    Mat<double> values;              // n_layers × 7 raw Frobenius norms
    std::vector<Mat<double>> group;  // optional co-scaled members (excluding subject)
};

// Writes `path` (SVG) and `path + ".json"` (sidecar). Returns the sidecar text.
std::string emit_heatmap(const WeightDiff& diff, bool normalized,
                         const std::vector<const WeightDiff*>& shared_scale_group,
                         const std::filesystem::path& path, const std::string& title = "");

enum class ChartKind { bars, curve };

std::string emit_score_chart(const std::vector<std::pair<std::string, ScoreBreakdown>>& breakdowns,
                             ChartKind kind, const std::filesystem::path& path,
                             const std::string& title = "");

// Re-render a figure from its sidecar (must be lossless).
std::string render_figure_from_sidecar(const std::string& sidecar_json);

} // namespace dit
