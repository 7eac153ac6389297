#include "dit/figures.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "dit/util.hpp"

namespace dit {

using nlohmann::json;

namespace {

std::string fmt(double v) { return format_fixed(v, 4); }

// Blue→yellow ramp over [0,1].
std::string ramp_color(double v) {
    v = std::clamp(v, 0.0, 1.0);
    const int r = static_cast<int>(std::lround(40 + 215 * v));
    const int g = static_cast<int>(std::lround(40 + 190 * v));
    const int b = static_cast<int>(std::lround(160 - 130 * v));
    char buf[16];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
    return buf;
}

std::string render_heatmap_svg(const json& sidecar) {
    const auto values = sidecar.at("values").get<std::vector<std::vector<double>>>();
    const auto scaled = sidecar.at("scaled").get<std::vector<std::vector<double>>>();
    const auto site_types = sidecar.at("site_types").get<std::vector<std::string>>();
    const std::string title = sidecar.value("title", "");
    const int n_layers = static_cast<int>(values.size());
    const int n_cols = static_cast<int>(site_types.size());

    const int cell = 22, left = 46, top = 42, gap = 2;
    const int width = left + n_cols * (cell + gap) + 12;
    const int height = top + n_layers * (cell + gap) + 12;

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
           std::to_string(height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!title.empty())
        svg += "<text x=\"" + std::to_string(left) + "\" y=\"16\" font-family=\"monospace\" font-size=\"12\">" +
               title + "</text>\n";
    for (int c = 0; c < n_cols; ++c)
        svg += "<text x=\"" + std::to_string(left + c * (cell + gap) + 3) + "\" y=\"" + std::to_string(top - 6) +
               "\" font-family=\"monospace\" font-size=\"10\">" + site_types[static_cast<size_t>(c)] +
               "</text>\n";
    for (int l = 0; l < n_layers; ++l) {
        svg += "<text x=\"4\" y=\"" + std::to_string(top + l * (cell + gap) + 15) +
               "\" font-family=\"monospace\" font-size=\"10\">L" + std::to_string(l) + "</text>\n";
        for (int c = 0; c < n_cols; ++c) {
            const double v = scaled[static_cast<size_t>(l)][static_cast<size_t>(c)];
            svg += "<rect x=\"" + std::to_string(left + c * (cell + gap)) + "\" y=\"" +
                   std::to_string(top + l * (cell + gap)) + "\" width=\"" + std::to_string(cell) +
                   "\" height=\"" + std::to_string(cell) + "\" fill=\"" + ramp_color(v) + "\"><title>" +
                   fmt(values[static_cast<size_t>(l)][static_cast<size_t>(c)]) + "</title></rect>\n";
        }
    }
    svg += "</svg>\n";
    return svg;
}

std::string render_chart_svg(const json& sidecar) {
    const auto rows = sidecar.at("rows");
    const std::string kind = sidecar.value("chart", "bars");
    const std::string title = sidecar.value("title", "");
    const int n = static_cast<int>(rows.size());
    const int bar_w = 42, gap = 18, left = 40, top = 34, plot_h = 150;
    const int width = std::max(220, left + n * (bar_w + gap) + 20);
    const int height = top + plot_h + 40;

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
           std::to_string(height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!title.empty())
        svg += "<text x=\"" + std::to_string(left) + "\" y=\"16\" font-family=\"monospace\" font-size=\"12\">" +
               title + "</text>\n";
    // Score axis: 1..5.
    for (int s = 1; s <= 5; ++s) {
        const int y = top + plot_h - static_cast<int>(std::lround(plot_h * (s / 5.0)));
        svg += "<line x1=\"" + std::to_string(left - 4) + "\" y1=\"" + std::to_string(y) + "\" x2=\"" +
               std::to_string(width - 10) + "\" y2=\"" + std::to_string(y) +
               "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
        svg += "<text x=\"8\" y=\"" + std::to_string(y + 4) +
               "\" font-family=\"monospace\" font-size=\"10\">" + std::to_string(s) + "</text>\n";
    }
    if (kind == "curve") {
        std::string points;
        for (int i = 0; i < n; ++i) {
            const double mean = rows[static_cast<size_t>(i)].at("mean").get<double>();
            const int x = left + i * (bar_w + gap) + bar_w / 2;
            const int y = top + plot_h - static_cast<int>(std::lround(plot_h * (mean / 5.0)));
            points += std::to_string(x) + "," + std::to_string(y) + " ";
        }
        svg += "<polyline fill=\"none\" stroke=\"#2060c0\" stroke-width=\"2\" points=\"" + points + "\"/>\n";
    }
    for (int i = 0; i < n; ++i) {
        const auto& row = rows[static_cast<size_t>(i)];
        const double mean = row.at("mean").get<double>();
        const int x = left + i * (bar_w + gap);
        const int h = static_cast<int>(std::lround(plot_h * (mean / 5.0)));
        const int y = top + plot_h - h;
        if (kind == "bars")
            svg += "<rect x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(y) + "\" width=\"" +
                   std::to_string(bar_w) + "\" height=\"" + std::to_string(h) +
                   "\" fill=\"#2060c0\" data-mean=\"" + fmt(mean) + "\"/>\n";
        svg += "<text x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(top + plot_h + 14) +
               "\" font-family=\"monospace\" font-size=\"9\">" + row.at("label").get<std::string>() +
               "</text>\n";
        svg += "<text x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(y - 4) +
               "\" font-family=\"monospace\" font-size=\"9\">" + fmt(mean) + "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

json heatmap_sidecar(const WeightDiff& diff, bool normalized,
                     const std::vector<const WeightDiff*>& shared_scale_group, const std::string& title) {
    FrobeniusProfile profile = frobenius_profile(diff);
    const int n_layers = profile.norms.rows;

    // Per-column scale: max over the subject plus every group member.
    std::vector<double> col_scale(kNumSiteTypes, 0.0);
    auto fold = [&](const Mat<double>& norms) {
        for (int l = 0; l < norms.rows; ++l)
            for (int c = 0; c < kNumSiteTypes; ++c)
                col_scale[static_cast<size_t>(c)] = std::max(col_scale[static_cast<size_t>(c)], norms(l, c));
    };
    fold(profile.norms);
    for (const auto* member : shared_scale_group)
        if (member != nullptr) fold(frobenius_profile(*member).norms);

    std::vector<std::vector<double>> values(static_cast<size_t>(n_layers),
                                            std::vector<double>(kNumSiteTypes, 0.0));
    std::vector<std::vector<double>> scaled = values;
    double global_max = 0.0;
    for (double s : col_scale) global_max = std::max(global_max, s);
    for (int l = 0; l < n_layers; ++l)
        for (int c = 0; c < kNumSiteTypes; ++c) {
            const double raw = profile.norms(l, c);
            values[static_cast<size_t>(l)][static_cast<size_t>(c)] = raw;
            const double denom = normalized ? col_scale[static_cast<size_t>(c)] : global_max;
            scaled[static_cast<size_t>(l)][static_cast<size_t>(c)] = denom > 0.0 ? raw / denom : 0.0;
        }

    json side;
    side["figure"] = "heatmap";
    side["title"] = title;
    side["normalized"] = normalized;
    side["site_types"] = json::array();
    for (int c = 0; c < kNumSiteTypes; ++c) side["site_types"].push_back(site_type_name(static_cast<SiteType>(c)));
    side["values"] = values;
    side["scaled"] = scaled;
    side["column_scale"] = col_scale;
    side["source"] = json{{"task", diff.meta().task},
                          {"label", diff.meta().label},
                          {"rank", diff.meta().rank},
                          {"base_model_id", diff.meta().base_model_id}};
    return side;
}

} // namespace

std::string emit_heatmap(const WeightDiff& diff, bool normalized,
                         const std::vector<const WeightDiff*>& shared_scale_group,
                         const std::filesystem::path& path, const std::string& title) {
    json side = heatmap_sidecar(diff, normalized, shared_scale_group, title);
    const std::string sidecar_text = side.dump(2) + "\n";
    write_file(path, render_heatmap_svg(side));
    std::filesystem::path sp = path;
    sp += ".json";
    write_file(sp, sidecar_text);
    return sidecar_text;
}

std::string emit_score_chart(const std::vector<std::pair<std::string, ScoreBreakdown>>& breakdowns,
                             ChartKind kind, const std::filesystem::path& path, const std::string& title) {
    if (breakdowns.empty()) throw degenerate_input_error("score chart needs at least one breakdown");
    json side;
    side["figure"] = "score_chart";
    side["chart"] = kind == ChartKind::bars ? "bars" : "curve";
    side["title"] = title;
    side["rows"] = json::array();
    for (const auto& [label, b] : breakdowns) {
        json row;
        row["label"] = label;
        row["mean"] = b.mean;
        row["n"] = b.n;
        row["fractions"] = b.fractions;
        side["rows"].push_back(row);
    }
    const std::string sidecar_text = side.dump(2) + "\n";
    write_file(path, render_chart_svg(side));
    std::filesystem::path sp = path;
    sp += ".json";
    write_file(sp, sidecar_text);
    return sidecar_text;
}

std::string render_figure_from_sidecar(const std::string& sidecar_json) {
    json side = json::parse(sidecar_json);
    const std::string kind = side.value("figure", "");
    if (kind == "heatmap") return render_heatmap_svg(side);
    if (kind == "score_chart") return render_chart_svg(side);
    throw malformed_input_error("unknown figure kind in sidecar: " + kind);
}

} // namespace dit
