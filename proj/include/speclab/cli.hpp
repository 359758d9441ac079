#pragma once

// Batch experiment driver: flat sectioned key-value configs, experiment
// dispatch, CSV/JSON/SVG persistence, and a digest manifest written last.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "speclab/bands.hpp"
#include "speclab/cocycle.hpp"
#include "speclab/construct.hpp"
#include "speclab/io.hpp"
#include "speclab/odometer.hpp"
#include "speclab/rng.hpp"

namespace speclab::cli {

inline constexpr const char* kToolVersion = "speclab 0.1.0";
inline constexpr const char* kOutDirEnv = "SPECLAB_OUT_DIR";

inline const std::vector<std::string>& experiment_kinds() {
    static const std::vector<std::string> kinds = {
        "bands", "lyapunov-curve", "meas-bounds",
        "start", "induction",      "iterate"};
    return kinds;
}

// --- config text ------------------------------------------------------------

using SectionMap = std::map<std::string, std::map<std::string, std::string>>;

// Parses "[section]" headers and "key = value" lines; '#' starts a comment.
// Unparseable lines are reported, not skipped silently.
inline SectionMap parse_sections(const std::string& text,
                                 std::vector<std::string>& errors) {
    SectionMap out;
    std::string section;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
        std::size_t a = s.find_first_not_of(" \t\r");
        std::size_t b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::string t = trim(line);
        if (t.empty()) continue;
        if (t.front() == '[') {
            if (t.back() != ']') {
                errors.push_back("line " + std::to_string(lineno) +
                                 ": unterminated section header");
                continue;
            }
            section = trim(t.substr(1, t.size() - 2));
            out[section];
            continue;
        }
        std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            errors.push_back("line " + std::to_string(lineno) +
                             ": expected key = value");
            continue;
        }
        std::string key = trim(t.substr(0, eq));
        std::string val = trim(t.substr(eq + 1));
        if (key.empty()) {
            errors.push_back("line " + std::to_string(lineno) + ": empty key");
            continue;
        }
        out[section][key] = val;
    }
    return out;
}

// Applies a "section.key=value" override string.
inline bool apply_override(SectionMap& sections, const std::string& spec,
                           std::string& error) {
    std::size_t eq = spec.find('=');
    if (eq == std::string::npos) {
        error = "override '" + spec + "': expected section.key=value";
        return false;
    }
    std::string path = spec.substr(0, eq);
    std::size_t dot = path.find('.');
    if (dot == std::string::npos) {
        error = "override '" + spec + "': key must be section.key";
        return false;
    }
    sections[path.substr(0, dot)][path.substr(dot + 1)] = spec.substr(eq + 1);
    return true;
}

struct RunConfig {
    std::string kind;
    std::string out_dir;
    std::uint64_t seed = 0;
    int threads = 1;
    SectionMap sections;
    std::string echo;  // canonical config text, persisted with the outputs
};

namespace detail {

// Typed extraction that records every violation instead of stopping.
struct Extract {
    const SectionMap& s;
    std::vector<std::string>& errors;

    bool has(const std::string& sec, const std::string& key) const {
        auto it = s.find(sec);
        return it != s.end() && it->second.count(key) > 0;
    }
    std::string str(const std::string& sec, const std::string& key,
                    const std::string& fallback = "") const {
        auto it = s.find(sec);
        if (it == s.end()) return fallback;
        auto jt = it->second.find(key);
        return jt == it->second.end() ? fallback : jt->second;
    }
    double num(const std::string& sec, const std::string& key,
               double fallback) const {
        if (!has(sec, key)) return fallback;
        const std::string& v = str(sec, key);
        try {
            std::size_t pos = 0;
            double x = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return x;
        } catch (...) {
            errors.push_back(sec + "." + key + ": not a number: '" + v + "'");
            return fallback;
        }
    }
    std::int64_t integer(const std::string& sec, const std::string& key,
                         std::int64_t fallback) const {
        if (!has(sec, key)) return fallback;
        const std::string& v = str(sec, key);
        try {
            std::size_t pos = 0;
            std::int64_t x = std::stoll(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return x;
        } catch (...) {
            errors.push_back(sec + "." + key + ": not an integer: '" + v +
                             "'");
            return fallback;
        }
    }
    std::vector<double> nums(const std::string& sec,
                             const std::string& key) const {
        std::vector<double> out;
        std::istringstream in(str(sec, key));
        std::string tok;
        while (in >> tok) {
            try {
                std::size_t pos = 0;
                out.push_back(std::stod(tok, &pos));
                if (pos != tok.size()) throw std::invalid_argument(tok);
            } catch (...) {
                errors.push_back(sec + "." + key + ": not a number: '" + tok +
                                 "'");
            }
        }
        return out;
    }
};

inline std::string canonical_echo(const SectionMap& s) {
    std::string out;
    for (const auto& [sec, kv] : s) {
        out += "[" + sec + "]\n";
        for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    }
    return out;
}

}  // namespace detail

// Total validation: returns a config or the exhaustive list of violations
// (never a partially checked config).
inline std::optional<RunConfig> validate_config(
    const std::string& text, std::vector<std::string>& errors) {
    errors.clear();
    SectionMap sections = parse_sections(text, errors);
    detail::Extract ex{sections, errors};

    RunConfig cfg;
    cfg.sections = sections;
    cfg.kind = ex.str("run", "kind");
    if (cfg.kind.empty()) {
        errors.push_back("run.kind: missing");
    } else {
        bool known = false;
        for (const auto& k : experiment_kinds()) known = known || k == cfg.kind;
        if (!known) {
            std::string allowed;
            for (const auto& k : experiment_kinds())
                allowed += (allowed.empty() ? "" : ", ") + k;
            errors.push_back("run.kind: unknown '" + cfg.kind +
                             "' (allowed: " + allowed + ")");
        }
    }
    cfg.seed = static_cast<std::uint64_t>(ex.integer("run", "seed", 0));
    cfg.threads = static_cast<int>(ex.integer("run", "threads", 1));
    cfg.out_dir = ex.str("run", "out");

    // Grid checks (shared by several kinds).
    double step = ex.num("grid", "step", 1e-2);
    if (step <= 0.0) errors.push_back("grid.step: must be > 0");
    double e_lo = ex.num("grid", "e_lo", -4.0);
    double e_hi = ex.num("grid", "e_hi", 4.0);
    if (e_hi <= e_lo) errors.push_back("grid.e_hi: must exceed grid.e_lo");

    // Potential / coupling checks.
    auto values = ex.nums("potential", "values");
    auto lambdas = ex.nums("coupling", "lambdas");
    if (lambdas.empty() && ex.has("coupling", "lambda"))
        lambdas.push_back(ex.num("coupling", "lambda", 1.0));

    if (cfg.kind == "bands" || cfg.kind == "lyapunov-curve" ||
        cfg.kind == "meas-bounds") {
        if (values.empty() && !ex.has("potential", "file"))
            errors.push_back("potential.values: missing (or potential.file)");
    }
    if (cfg.kind == "induction") {
        std::string members = ex.str("family", "members");
        if (members.empty()) errors.push_back("family.members: missing");
        if (ex.integer("induction", "n_K", 0) <= 0)
            errors.push_back("induction.n_K: must be a positive integer");
    }
    if (cfg.kind == "start") {
        if (ex.integer("start", "n_K", 0) <= 0)
            errors.push_back("start.n_K: must be a positive integer");
    }
    if (cfg.kind == "iterate") {
        for (double l : lambdas)
            if (l == 0.0) errors.push_back("coupling.lambda: must be nonzero");
        if (ex.integer("iterate", "depth", 1) < 1)
            errors.push_back("iterate.depth: must be >= 1");
        if (ex.num("iterate", "eps1", 0.5) <= 0.0)
            errors.push_back("iterate.eps1: must be > 0");
    }

    if (!errors.empty()) return std::nullopt;
    cfg.echo = detail::canonical_echo(sections);
    return cfg;
}

// --- manifest ----------------------------------------------------------------

struct RunManifest {
    std::string version = kToolVersion;
    std::string started;
    std::string finished;
    io::json config_echo;
    std::vector<std::pair<std::string, std::string>> files;  // path, sha256
    std::vector<std::string> notes;  // structured numerical-error entries
    bool all_pass = false;
};

namespace detail {

// ISO-8601 UTC; honors SOURCE_DATE_EPOCH for reproducible archives.
inline std::string timestamp_utc() {
    std::time_t t;
    if (const char* e = std::getenv("SOURCE_DATE_EPOCH"))
        t = static_cast<std::time_t>(std::strtoll(e, nullptr, 10));
    else
        t = std::chrono::system_clock::to_time_t(
            std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace detail

inline io::json to_json(const RunManifest& m) {
    io::json files = io::json::array();
    for (const auto& [p, h] : m.files)
        files.push_back(io::json{{"path", p}, {"sha256", h}});
    return io::json{{"version", m.version},
                    {"started", m.started},
                    {"finished", m.finished},
                    {"all_pass", m.all_pass},
                    {"config", m.config_echo},
                    {"notes", m.notes},
                    {"files", files}};
}

// Collects outputs, digests them, and writes the manifest last.
class OutputSink {
  public:
    explicit OutputSink(std::string dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }
    void write(const std::string& name, const std::string& content) {
        io::write_text_file(dir_ + "/" + name, content);
        files_.emplace_back(name, io::sha256_hex(content));
    }
    // For files emitted by helpers (plots): digest from disk.
    void adopt(const std::string& name) {
        files_.emplace_back(name,
                            io::sha256_hex(io::read_text_file(dir_ + "/" +
                                                              name)));
    }
    const std::string& dir() const { return dir_; }
    std::vector<std::pair<std::string, std::string>> files() const {
        return files_;
    }

  private:
    std::string dir_;
    std::vector<std::pair<std::string, std::string>> files_;
};

// --- experiments -------------------------------------------------------------

namespace detail {

inline std::string potential_text(const PeriodicPotential& v) {
    std::ostringstream os;
    write_potential(os, v);
    return os.str();
}

inline PeriodicPotential config_potential(const RunConfig& cfg,
                                          std::vector<std::string>& errors) {
    Extract ex{cfg.sections, errors};
    std::string file = ex.str("potential", "file");
    if (!file.empty()) {
        std::istringstream is(io::read_text_file(file));
        return read_potential(is);
    }
    auto values = ex.nums("potential", "values");
    return PeriodicPotential(values);
}

inline std::vector<double> config_lambdas(const RunConfig& cfg) {
    std::vector<std::string> sink;
    Extract ex{cfg.sections, sink};
    auto lambdas = ex.nums("coupling", "lambdas");
    if (lambdas.empty() && ex.has("coupling", "lambda"))
        lambdas.push_back(ex.num("coupling", "lambda", 1.0));
    if (lambdas.empty()) lambdas.push_back(1.0);
    return lambdas;
}

inline std::vector<PeriodicPotential> config_family(
    const RunConfig& cfg, std::vector<std::string>& errors) {
    Extract ex{cfg.sections, errors};
    std::string text = ex.str("family", "members");
    std::vector<PeriodicPotential> out;
    std::string part;
    std::istringstream in(text);
    auto flush = [&](const std::string& chunk) {
        std::istringstream cs(chunk);
        std::vector<double> vals;
        double x;
        while (cs >> x) vals.push_back(x);
        if (!vals.empty()) out.emplace_back(vals);
    };
    while (std::getline(in, part, ';')) flush(part);
    return out;
}

inline bool run_bands(const RunConfig& cfg, OutputSink& sink) {
    std::vector<std::string> errors;
    PeriodicPotential v = config_potential(cfg, errors);
    auto lambdas = config_lambdas(cfg);
    io::json summaries = io::json::array();
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
        SpectrumDescription spec = compute_bands(v, lambdas[i]);
        sink.write("bands_" + std::to_string(i) + ".csv",
                   io::band_table_csv(spec));
        summaries.push_back(io::spectrum_summary_json(spec));
    }
    sink.write("summary.json", io::json_text(summaries));
    return true;
}

inline bool run_lyapunov_curve(const RunConfig& cfg, OutputSink& sink) {
    std::vector<std::string> sinkerr;
    Extract ex{cfg.sections, sinkerr};
    PeriodicPotential v = config_potential(cfg, sinkerr);
    auto lambdas = config_lambdas(cfg);
    GridSpec grid{ex.num("grid", "e_lo", -4.0), ex.num("grid", "e_hi", 4.0),
                  ex.num("grid", "step", 1e-2)};
    std::vector<io::PlotSeries> series;
    for (double lam : lambdas) {
        io::PlotSeries s;
        s.label = "lambda=" + format_double(lam);
        for (double E : grid.points())
            s.points.emplace_back(E, lyapunov_periodic(E, v.scaled(lam)));
        series.push_back(std::move(s));
    }
    io::emit_plot(series, sink.dir() + "/lyapunov.svg", "Lyapunov exponent",
                  "E", "L(E)");
    sink.adopt("lyapunov.svg");
    sink.adopt("lyapunov.csv");
    return true;
}

inline bool run_meas_bounds(const RunConfig& cfg, OutputSink& sink) {
    std::vector<std::string> errors;
    Extract ex{cfg.sections, errors};
    PeriodicPotential v = config_potential(cfg, errors);
    auto lambdas = config_lambdas(cfg);
    double requested_c = ex.num("meas", "requested_c", 1.0);
    NormBoundOptions nopt;
    nopt.samples_per_band = ex.integer("meas", "samples_per_band", 8);
    nopt.k_max = ex.integer("meas", "k_max", 0);
    nopt.site_stride = ex.integer("meas", "site_stride", 1);
    bool all_pass = true;
    io::json reports = io::json::array();
    for (double lam : lambdas) {
        NormMeasureReport r =
            verify_norm_measure_bound(v, lam, requested_c, nopt);
        reports.push_back(io::json{{"lambda", lam},
                                   {"requested_c", r.requested_c},
                                   {"certified_log_c", r.certified_log_c},
                                   {"bound", r.bound},
                                   {"measured", r.measured},
                                   {"certified", r.certified},
                                   {"inconclusive", r.inconclusive},
                                   {"pass", r.pass}});
        if (r.certified && !r.pass) all_pass = false;
    }
    sink.write("meas_bounds.json", io::json_text(reports));
    return all_pass;
}

inline bool run_start(const RunConfig& cfg, OutputSink& sink) {
    std::vector<std::string> errors;
    Extract ex{cfg.sections, errors};
    auto members = config_family(cfg, errors);
    if (members.empty()) members.push_back(PeriodicPotential::zero());
    PotentialFamily W(members);
    Ball ball(W.members()[0], ex.num("start", "ball_radius", 16.0));
    StartParams p;
    p.M = ex.num("start", "M", 1.0);
    p.n_K = ex.integer("start", "n_K", 4);
    p.N1 = ex.integer("start", "N1", 0);
    p.N2 = ex.integer("start", "N2", 0);
    p.N2_cap = ex.integer("start", "N2_cap", 4096);
    p.grid_step = ex.num("start", "grid_step", 1e-2);
    p.lambda_points = static_cast<int>(ex.integer("start", "lambda_points",
                                                  3));
    p.threads = cfg.threads;
    StartResult res = lemma_start(W, ball, p);
    sink.write("start_report.json", io::json_text(io::to_json(res.report)));
    std::string family_txt;
    for (const auto& m : res.family.members())
        family_txt += potential_text(m);
    sink.write("family.pot", family_txt);
    return res.report.ok;
}

inline bool run_induction(const RunConfig& cfg, OutputSink& sink) {
    std::vector<std::string> errors;
    Extract ex{cfg.sections, errors};
    auto members = config_family(cfg, errors);
    PotentialFamily W(members);
    InductionParams p;
    p.n_K = ex.integer("induction", "n_K", 0);
    p.r = ex.integer("induction", "r", 0);
    p.amp_exponent = ex.num("induction", "amp_exponent", 20.0);
    p.max_family = ex.integer("induction", "max_family", 0);
    p.grid_step = ex.num("induction", "grid_step", 1e-2);
    p.lambda_points = static_cast<int>(
        ex.integer("induction", "lambda_points", 3));
    p.M = ex.num("induction", "M", 1.0);
    p.threads = cfg.threads;
    std::vector<std::pair<double, double>> hyps;
    double hyp_delta = ex.num("induction", "hypothesis_delta", 0.0);
    if (hyp_delta > 0.0)
        for (double lam : config_lambdas(cfg)) hyps.emplace_back(lam,
                                                                 hyp_delta);
    InductionResult res = lemma_induction(W, p, hyps);
    sink.write("induction_certificate.json",
               io::json_text(io::to_json(res.cert)));

    // Optional niceness census at a fixed (E, lambda).
    if (ex.has("induction", "census_E")) {
        double E = ex.num("induction", "census_E", 0.0);
        double lam = ex.num("induction", "census_lambda", 1.0);
        std::int64_t m = static_cast<std::int64_t>(W.count());
        std::int64_t q = p.n_K / W.period();
        std::int64_t r = p.r > 0 ? p.r : q / m;
        auto tuples = speclab::detail::enumerate_tuples(m, r, p.max_family);
        std::vector<NicenessReport> reports;
        for (const auto& t : tuples)
            reports.push_back(classify_niceness(W.members(), t, E, lam, p));
        sink.write("niceness_census.csv",
                   io::niceness_census_csv(tuples, reports));
    }
    return res.cert.ok;
}

inline bool run_iterate(const RunConfig& cfg, OutputSink& sink) {
    std::vector<std::string> errors;
    Extract ex{cfg.sections, errors};
    auto members = config_family(cfg, errors);
    if (members.empty()) members.push_back(PeriodicPotential::zero());
    PotentialFamily W(members);
    Ball ball(W.members()[0], ex.num("iterate", "ball_radius", 16.0));
    IterateOptions opt;
    opt.M_cap = ex.num("iterate", "M_cap", 2.0);
    opt.first_radius = ex.num("iterate", "first_radius", 8.0);
    opt.radius_shrink = ex.num("iterate", "radius_shrink", 3.0);
    opt.joining.amp_exponent = ex.num("iterate", "amp_exponent", 8.0);
    opt.joining.max_family = ex.integer("iterate", "max_family", 8);
    opt.joining.grid_step = ex.num("iterate", "grid_step", 0.05);
    opt.joining.lambda_points = static_cast<int>(
        ex.integer("iterate", "lambda_points", 2));
    opt.joining.max_period = ex.integer("iterate", "max_period", 1 << 14);
    opt.joining.min_r = ex.integer("iterate", "min_r", 2);
    opt.joining.max_blocks = ex.integer("iterate", "max_blocks", 4);
    opt.joining.measure_target = ex.num("iterate", "measure_target", 8.0);
    opt.joining.drift_target = ex.num("iterate", "drift_target", 2.0);
    opt.joining.hypothesis_lambdas = config_lambdas(cfg);
    opt.joining.threads = cfg.threads;
    int depth = static_cast<int>(ex.integer("iterate", "depth", 3));
    double eps1 = ex.num("iterate", "eps1", 0.5);
    IterateResult res = iterate_scheme(ball, W, eps1, depth, opt);
    sink.write("iterate_certificates.json",
               io::json_text(io::to_json(res)));
    sink.write("w_infinity.pot", potential_text(res.w_infinity));
    if (!res.stages.empty()) {
        io::PlotSeries s;
        s.label = "log_measure";
        for (const auto& st : res.stages)
            s.points.emplace_back(static_cast<double>(st.stage),
                                  st.log_measure);
        io::emit_plot({s}, sink.dir() + "/measure_decay.svg",
                      "Spectrum measure by stage (log scale)", "stage",
                      "ln measure");
        sink.adopt("measure_decay.svg");
        sink.adopt("measure_decay.csv");
    }
    return res.ok;
}

}  // namespace detail

// Executes the experiment; outputs plus a digest manifest land in the output
// directory. Returns true iff every certificate passed. The manifest is
// always written, including on certificate failure and numerical errors.
inline bool run(const RunConfig& cfg, RunManifest& manifest) {
    std::string out = cfg.out_dir;
    if (out.empty()) {
        if (const char* e = std::getenv(kOutDirEnv)) out = e;
        else out = ".";
    }
    OutputSink sink(out);
    manifest.started = detail::timestamp_utc();
    // The output location is execution environment, not an experiment
    // parameter: keep it out of the persisted echo so reruns into different
    // directories stay byte-identical.
    SectionMap echo_sections = cfg.sections;
    echo_sections["run"].erase("out");
    std::string echo = detail::canonical_echo(echo_sections);
    manifest.config_echo = echo;
    sink.write("config.echo.txt", echo);
    bool ok = false;
    try {
        if (cfg.kind == "bands") ok = detail::run_bands(cfg, sink);
        else if (cfg.kind == "lyapunov-curve")
            ok = detail::run_lyapunov_curve(cfg, sink);
        else if (cfg.kind == "meas-bounds")
            ok = detail::run_meas_bounds(cfg, sink);
        else if (cfg.kind == "start") ok = detail::run_start(cfg, sink);
        else if (cfg.kind == "induction")
            ok = detail::run_induction(cfg, sink);
        else if (cfg.kind == "iterate") ok = detail::run_iterate(cfg, sink);
        else manifest.notes.push_back("unknown kind: " + cfg.kind);
    } catch (const std::exception& e) {
        manifest.notes.push_back(std::string("numerical error: ") + e.what());
        ok = false;
    }
    manifest.finished = detail::timestamp_utc();
    manifest.all_pass = ok;
    manifest.files = sink.files();
    io::write_text_file(out + "/manifest.json",
                        io::json_text(to_json(manifest)));
    return ok;
}

}  // namespace speclab::cli
