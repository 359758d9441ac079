#pragma once

// Serialization: CSV tables, JSON summaries and certificates, SVG line plots
// with sibling CSV data, and content digests for run manifests. All output is
// deterministic: fixed field order, locale-free decimal formatting (shortest
// round-trip via format_double), LF line endings.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include <json.hpp>

#include "speclab/bands.hpp"
#include "speclab/construct.hpp"
#include "speclab/odometer.hpp"

namespace speclab::io {

using json = nlohmann::ordered_json;

// --- files and digests -------------------------------------------------------

inline void write_text_file(const std::string& path,
                            const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << content;
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(),
                   nullptr) != 1)
        throw std::runtime_error("sha256 digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

// --- CSV ----------------------------------------------------------------------

inline std::string band_table_csv(const SpectrumDescription& spec) {
    std::string out =
        "band_index,lo,hi,length,touches_prev,touches_next\n";
    for (std::size_t i = 0; i < spec.bands.size(); ++i) {
        const Band& b = spec.bands[i];
        out += std::to_string(i) + "," + format_double(b.lo) + "," +
               format_double(b.hi) + "," + format_double(b.length()) + "," +
               (b.touches_prev ? "1" : "0") + "," +
               (b.touches_next ? "1" : "0") + "\n";
    }
    return out;
}

// One labeled series of (x, y) points.
struct PlotSeries {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

inline std::string series_csv(const std::vector<PlotSeries>& series) {
    std::string out = "series,x,y\n";
    for (const auto& s : series)
        for (const auto& [x, y] : s.points)
            out += s.label + "," + format_double(x) + "," + format_double(y) +
                   "\n";
    return out;
}

inline std::string niceness_census_csv(
    const std::vector<std::vector<std::int64_t>>& tuples,
    const std::vector<NicenessReport>& reports) {
    if (tuples.size() != reports.size())
        throw std::invalid_argument("census: tuples/reports size mismatch");
    std::string out = "t,status,cutoff,good_blocks,angles,flags,very_nice\n";
    auto join = [](const auto& xs, auto fmt) {
        std::string s;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            if (i) s += ";";
            s += fmt(xs[i]);
        }
        return s;
    };
    for (std::size_t i = 0; i < tuples.size(); ++i) {
        const NicenessReport& r = reports[i];
        out += join(tuples[i],
                    [](std::int64_t t) { return std::to_string(t); }) +
               "," + r.status + "," + format_double(r.cutoff) + "," +
               join(r.good,
                    [](std::int64_t g) { return std::to_string(g); }) +
               "," + join(r.angles, [](double a) { return format_double(a); }) +
               "," + join(r.flags, [](int f) { return std::to_string(f); }) +
               "," + (r.very_nice ? "1" : "0") + "\n";
    }
    return out;
}

// --- JSON ---------------------------------------------------------------------

inline json to_json(const GridSpec& g) {
    return json{{"lo", g.lo}, {"hi", g.hi}, {"step", g.step}};
}

inline json spectrum_summary_json(const SpectrumDescription& spec,
                                  const BandOptions& opt = {}) {
    return json{{"period", spec.period},
                {"lambda", spec.lambda},
                {"measure", spec.measure},
                {"log_measure", spec.log_measure},
                {"component_count", spec.component_count},
                {"unresolved_bands", spec.unresolved_bands},
                {"near_touch_energies", spec.near_touch_energies},
                {"tolerances",
                 json{{"edge_tol", opt.edge_tol},
                      {"merge_tol", opt.merge_tol},
                      {"id_tol", opt.id_tol},
                      {"psi_touch_tol", opt.psi_touch_tol}}}};
}

inline json to_json(const StartReport& r) {
    json j_of = json::array();
    for (const auto& [lam, jj] : r.j_of_lambda)
        j_of.push_back(json{{"lambda", lam}, {"j", jj}});
    return json{{"ok", r.ok},
                {"failure", r.failure},
                {"n_K", r.n_K},
                {"N1", r.N1},
                {"N2", r.N2},
                {"n2_capped", r.n2_capped},
                {"delta", r.delta},
                {"drift", r.drift},
                {"min_lyap", r.min_lyap},
                {"covered", r.covered},
                {"in_ball", r.in_ball},
                {"thinned", r.thinned},
                {"full_size", r.full_size},
                {"j_of_lambda", j_of}};
}

inline json to_json(const MeasureEntry& e) {
    return json{{"lambda", e.lambda},
                {"delta", e.delta},
                {"min_grid_lyap", e.min_grid_lyap},
                {"hypothesis_certified", e.hypothesis_certified},
                {"bound", e.bound},
                {"worst_measure", e.worst_measure},
                {"applicable", e.applicable},
                {"pass", e.pass},
                {"norm_target_log", e.norm_target_log},
                {"norm_certified_log", e.norm_certified_log}};
}

inline json to_json(const InductionCertificate& c) {
    json measures = json::array();
    for (const auto& e : c.measures) measures.push_back(to_json(e));
    return json{{"ok", c.ok},
                {"failure", c.failure},
                {"n_k", c.n_k},
                {"n_K", c.n_K},
                {"m", c.m},
                {"r", c.r},
                {"amp", c.amp},
                {"amp_exponent", c.amp_exponent},
                {"diameter", c.diameter},
                {"diameter_bound", c.diameter_bound},
                {"diameter_overridden", c.diameter_overridden},
                {"diameter_ok", c.diameter_ok},
                {"drift", c.drift},
                {"family_sampled", c.family_sampled},
                {"family_size", c.family_size},
                {"measures", measures}};
}

inline json to_json(const JoiningCertificate& c) {
    return json{{"ok", c.ok},
                {"failure", c.failure},
                {"start", to_json(c.start)},
                {"induction", to_json(c.induction)},
                {"delta", c.delta},
                {"drift", c.drift},
                {"drift_target", c.drift_target},
                {"drift_target_overridden", c.drift_target_overridden},
                {"drift_ok", c.drift_ok},
                {"lyap_ok", c.lyap_ok},
                {"lyap_floor_family", "start"},
                {"final_family_min_lyap", c.final_family_min_lyap},
                {"ball_radius", c.ball_radius},
                {"tight_radius", c.tight_radius},
                {"radius_overridden", c.radius_overridden},
                {"containment_ok", c.containment_ok},
                {"center_measure", c.center_measure},
                {"center_log_measure", c.center_log_measure},
                {"blocks_sampled", c.blocks_sampled},
                {"full_block_count", c.full_block_count},
                {"transfer_bound", c.transfer_bound},
                {"measure_target", c.measure_target},
                {"measure_target_overridden", c.measure_target_overridden},
                {"measure_ok", c.measure_ok}};
}

inline json to_json(const StageCertificate& s) {
    return json{{"stage", s.stage},
                {"ball_radius", s.ball.radius},
                {"ball_center_period", s.ball.center.period()},
                {"family_size", s.family.count()},
                {"family_period", s.family.period()},
                {"delta", s.delta},
                {"eps", s.eps},
                {"M", s.M},
                {"measure", s.measure},
                {"log_measure", s.log_measure},
                {"measure_bound", s.measure_bound},
                {"lyap_drift", s.lyap_drift},
                {"lyap_floor", s.lyap_floor},
                {"joining", to_json(s.joining)}};
}

inline json to_json(const IterateResult& r) {
    json stages = json::array();
    for (const auto& s : r.stages) stages.push_back(to_json(s));
    return json{{"ok", r.ok},
                {"failure", r.failure},
                {"stages", stages},
                {"w_infinity_period", r.w_infinity.period()},
                {"w_infinity_error", r.w_infinity_error}};
}

inline std::string json_text(const json& j) { return j.dump(2) + "\n"; }

// --- SVG line plots -------------------------------------------------------------

// Writes a standalone SVG (axes, labels, one polyline per series) at `path`
// and the authoritative raw points as CSV at `path` with a ".csv" suffix
// swapped in. The SVG contains no timestamps, so re-runs are byte-identical.
inline void emit_plot(const std::vector<PlotSeries>& series,
                      const std::string& path, const std::string& title = "",
                      const std::string& x_label = "x",
                      const std::string& y_label = "y") {
    if (series.empty() || series[0].points.empty())
        throw std::invalid_argument("emit_plot: empty series");
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
    double ymin = xmin, ymax = -xmin;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (xmax == xmin) { xmin -= 0.5; xmax += 0.5; }
    if (ymax == ymin) { ymin -= 0.5; ymax += 0.5; }
    const double W = 720, H = 480, ml = 70, mr = 20, mt = 40, mb = 50;
    auto X = [&](double x) {
        return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr);
    };
    auto Y = [&](double y) {
        return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb);
    };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c",
                                   "#9467bd", "#ff7f0e", "#8c564b"};
    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"720\" "
           "height=\"480\" viewBox=\"0 0 720 480\">\n";
    svg += "<rect width=\"720\" height=\"480\" fill=\"white\"/>\n";
    // axes
    svg += "<line x1=\"" + format_double(ml) + "\" y1=\"" +
           format_double(H - mb) + "\" x2=\"" + format_double(W - mr) +
           "\" y2=\"" + format_double(H - mb) +
           "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    svg += "<line x1=\"" + format_double(ml) + "\" y1=\"" + format_double(mt) +
           "\" x2=\"" + format_double(ml) + "\" y2=\"" + format_double(H - mb) +
           "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    // tick labels at the corners of the data range
    auto text = [&](double x, double y, const std::string& t,
                    const std::string& anchor) {
        return "<text x=\"" + format_double(x) + "\" y=\"" + format_double(y) +
               "\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"" +
               anchor + "\">" + t + "</text>\n";
    };
    svg += text(ml, H - mb + 18, format_double(xmin), "middle");
    svg += text(W - mr, H - mb + 18, format_double(xmax), "middle");
    svg += text(ml - 8, H - mb + 4, format_double(ymin), "end");
    svg += text(ml - 8, mt + 4, format_double(ymax), "end");
    svg += text((ml + W - mr) / 2, H - 12, x_label, "middle");
    svg += text(14, mt - 10, y_label, "start");
    if (!title.empty()) svg += text(W / 2, 22, title, "middle");
    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        std::string pts;
        for (const auto& [x, y] : s.points)
            pts += format_double(X(x)) + "," + format_double(Y(y)) + " ";
        svg += "<polyline fill=\"none\" stroke=\"" +
               std::string(colors[si % 6]) + "\" stroke-width=\"1.5\" "
               "points=\"" + pts + "\"/>\n";
        svg += text(W - mr - 4, mt + 16 + 16 * static_cast<double>(si),
                    s.label, "end");
    }
    svg += "</svg>\n";
    write_text_file(path, svg);

    std::string csv_path = path;
    std::size_t dot = csv_path.find_last_of('.');
    if (dot != std::string::npos) csv_path.resize(dot);
    csv_path += ".csv";
    write_text_file(csv_path, series_csv(series));
}

}  // namespace speclab::io
