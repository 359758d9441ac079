// Acceptance gate: one pass/fail line per criterion, nonzero exit on any
// failure. Each criterion is self-contained and uses its own seeded RNG.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "speclab/cli.hpp"
#include "speclab/rng.hpp"

using namespace speclab;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int index, const std::string& name, bool pass,
            const std::string& detail = "") {
    std::printf("criterion %2d (%s): %s%s%s\n", index, name.c_str(),
                pass ? "pass" : "FAIL", detail.empty() ? "" : " -- ",
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         t0)
        .count();
}

PeriodicPotential random_potential(SplitMix64& rng, std::int64_t period,
                                   double amp = 2.0) {
    std::vector<double> vals(static_cast<std::size_t>(period));
    for (auto& v : vals) v = rng.uniform(-amp, amp);
    return PeriodicPotential(std::move(vals));
}

// 1. Free operator: spectrum [-2,2], closed-form Lyapunov curve, < 5 s.
void criterion_1() {
    auto t0 = std::chrono::steady_clock::now();
    bool pass = true;
    std::string detail;
    PeriodicPotential zero = PeriodicPotential::zero();
    SpectrumDescription spec = compute_bands(zero, 1.0);
    if (spec.bands.size() != 1 || std::abs(spec.bands[0].lo + 2.0) >= 1e-9 ||
        std::abs(spec.bands[0].hi - 2.0) >= 1e-9) {
        pass = false;
        detail = "spectrum endpoints off";
    }
    double max_err = 0.0;
    for (double E = -4.0; E <= 4.0 + 1e-12; E += 0.01) {
        double a = std::abs(E);
        double expect =
            a <= 2.0 ? 0.0 : std::log((a + std::sqrt(a * a - 4.0)) / 2.0);
        max_err = std::max(max_err,
                           std::abs(lyapunov_periodic(E, zero) - expect));
    }
    if (max_err >= 1e-6) {
        pass = false;
        detail = "lyapunov curve error " + format_double(max_err);
    }
    double dt = seconds_since(t0);
    if (dt >= 5.0) {
        pass = false;
        detail = "took " + format_double(dt) + " s";
    }
    report(1, "free operator ground truth", pass, detail);
}

// 2. Every band of a period-n potential has length <= 2*pi/n, < 60 s.
void criterion_2() {
    auto t0 = std::chrono::steady_clock::now();
    bool pass = true;
    std::string detail;
    SplitMix64 rng(0xacce9701);
    for (std::int64_t n : {2, 4, 8, 16, 32}) {
        double cap = 2.0 * kPi / static_cast<double>(n) + 1e-9;
        for (int rep = 0; rep < 200 && pass; ++rep) {
            auto v = random_potential(rng, n);
            for (const Band& b : compute_bands(v, 1.0).bands)
                if (b.length() > cap) {
                    pass = false;
                    detail = "band length " + format_double(b.length()) +
                             " at n=" + std::to_string(n);
                    break;
                }
        }
    }
    double dt = seconds_since(t0);
    if (pass && dt >= 60.0) {
        pass = false;
        detail = "took " + format_double(dt) + " s";
    }
    report(2, "band length bound 2*pi/n", pass, detail);
}

// 3. Per-band IDS increment is exactly 1/n, within 1e-5.
void criterion_3() {
    bool pass = true;
    std::string detail;
    SplitMix64 rng(0xacce9703);
    for (std::int64_t n : {4, 8}) {
        for (int rep = 0; rep < 20 && pass; ++rep) {
            auto v = random_potential(rng, n);
            SpectrumDescription spec = compute_bands(v, 1.0);
            for (const Band& b : spec.bands) {
                double inc = ids_band_increment(v, b, 1e-7);
                if (std::abs(inc - 1.0 / static_cast<double>(n)) >= 1e-5) {
                    pass = false;
                    detail = "increment " + format_double(inc) +
                             " at n=" + std::to_string(n);
                    break;
                }
            }
        }
    }
    report(3, "ids increments 1/n", pass, detail);
}

// 4. Norm-to-measure bound never fails when a C > 1 is grid-certified.
void criterion_4() {
    bool pass = true;
    std::string detail;
    SplitMix64 rng(0xacce9704);
    int certified = 0;
    for (int rep = 0; rep < 60; ++rep) {
        std::int64_t n = rep % 2 == 0 ? 4 : 8;
        auto v = random_potential(rng, n);
        for (double lam : {1.0, 2.0, 3.0}) {
            NormMeasureReport r = verify_norm_measure_bound(v, lam, 1.0);
            if (r.inconclusive) continue;
            ++certified;
            if (r.measured > r.bound) {  // hard failure
                pass = false;
                detail = "measured " + format_double(r.measured) +
                         " > bound " + format_double(r.bound);
            }
        }
    }
    if (certified == 0) {
        pass = false;
        detail = "no instance certified a C > 1";
    }
    report(4, "norm-to-measure bound", pass, detail);
}

// 5. The transfer-matrix argument is strictly decreasing in E (n >= 2).
void criterion_5() {
    bool pass = true;
    std::string detail;
    SplitMix64 rng(0xacce9705);
    for (int rep = 0; rep < 10000 && pass; ++rep) {
        std::int64_t period = 2 + static_cast<std::int64_t>(rng.below(7));
        auto v = random_potential(rng, period);
        double E = rng.uniform(-5.0, 5.0);
        std::int64_t n = 2 + static_cast<std::int64_t>(rng.below(15));
        Direction z(rng.uniform(0.0, kPi));
        double d = argument_derivative(E, v, n, z);
        if (!(d < 0.0)) {
            pass = false;
            detail = "derivative " + format_double(d) + " at E=" +
                     format_double(E) + ", n=" + std::to_string(n);
        }
    }
    report(5, "argument monotonicity", pass, detail);
}

// 6. Doubling averages are non-increasing and converge to the exponent.
void criterion_6() {
    bool pass = true;
    std::string detail;
    SplitMix64 rng(0xacce9706);
    for (int rep = 0; rep < 100 && pass; ++rep) {
        auto v = random_potential(rng, 4);
        double E = rng.uniform(-4.0, 4.0);
        double prev = subadditive_average(E, v, 2, 4);
        for (int k = 3; k <= 8; ++k) {
            double cur = subadditive_average(E, v, k, 4);
            if (cur > prev + 1e-9) {
                pass = false;
                detail = "increase at k=" + std::to_string(k);
            }
            prev = cur;
        }
        // The sequence limit is the exponent; estimate it far along the
        // doubling sequence (2^14 steps) where the tail is below 1e-2.
        double limit = subadditive_average(E, v, 14, 4);
        double L = lyapunov_periodic(E, v);
        if (std::abs(limit - L) > 0.01) {
            pass = false;
            detail = "limit gap " + format_double(std::abs(limit - L));
        }
    }
    report(6, "subadditive doubling averages", pass, detail);
}

// 7. Spectra move 1-Lipschitz in the potential (Hausdorff vs sup distance).
void criterion_7() {
    bool pass = true;
    std::string detail;
    SplitMix64 rng(0xacce9707);
    for (int rep = 0; rep < 200 && pass; ++rep) {
        auto v = random_potential(rng, 8);
        auto w = random_potential(rng, 8);
        double h = spectrum_hausdorff_distance(v, w, 1.0);
        double s = sup_distance(v, w);
        if (h > s + 1e-6) {
            pass = false;
            detail = "hausdorff " + format_double(h) + " > sup " +
                     format_double(s);
        }
    }
    report(7, "lipschitz spectrum", pass, detail);
}

// 8. Gap-opening mechanics: some defect opens all gaps (Claim 1) and the
//    shifted family escapes every window energy (Claim 2).
void criterion_8() {
    bool pass = true;
    std::string detail;
    const double M = 2.0;
    for (std::int64_t n_k : {1, 2}) {
        PeriodicPotential seed = PeriodicPotential::zero(n_k);
        for (std::int64_t n_K : {4, 8}) {
            auto cands = build_start_candidates(seed, n_K, 8);
            for (double lam : {0.5, 1.0, 2.0}) {
                GapOpening sel = select_gap_opening_j(cands, lam);
                if (!sel.ok || sel.j < 1 || sel.j > 2 * n_k + 1) {
                    pass = false;
                    detail = "no gap-opening j at n_k=" +
                             std::to_string(n_k) + ", n_K=" +
                             std::to_string(n_K);
                    continue;
                }
                const auto& w_j = cands[static_cast<std::size_t>(sel.j - 1)];
                if (compute_bands(w_j, lam).component_count != n_K) {
                    pass = false;
                    detail = "claim 1: component count != n_K";
                }
                std::int64_t N2 =
                    static_cast<std::int64_t>(std::floor(
                        4.0 * kPi * M /
                        (sel.delta * static_cast<double>(n_K)))) +
                    1;
                PotentialFamily fam =
                    build_shifted_family(w_j, M, N2, sel.delta);
                GridSpec grid =
                    GridSpec::window_for(w_j.sup_norm(), M, 0.02);
                if (!shifts_cover_window(fam, lam, grid)) {
                    pass = false;
                    detail = "claim 2: common intersection non-empty";
                }
            }
        }
    }
    report(8, "gap-opening stage mechanics", pass, detail);
}

// 9. Non-very-nice tuples stay under the pigeonhole count m * r^(m-1).
void criterion_9() {
    bool pass = true;
    std::string detail;
    std::vector<PeriodicPotential> W = {PeriodicPotential::constant(3.0, 2),
                                        PeriodicPotential::constant(-3.0, 2)};
    for (std::int64_t r : {4, 6, 8}) {
        InductionParams p;
        p.n_K = 2 * 2 * r;  // q = 2r: exact partition, m = 2
        p.r = r;
        std::int64_t bad = 0;
        for (std::int64_t t1 = 0; t1 < r; ++t1)
            for (std::int64_t t2 = 0; t2 < r; ++t2)
                if (!classify_niceness(W, {t1, t2}, 0.0, 1.0, p).very_nice)
                    ++bad;
        if (bad > 2 * r) {  // m * r^(m-1)
            pass = false;
            detail = std::to_string(bad) + " > " + std::to_string(2 * r) +
                     " at r=" + std::to_string(r);
        }
    }
    report(9, "niceness census bound", pass, detail);
}

const char* kIterateConfig =
    "[run]\n"
    "kind = iterate\n"
    "[family]\n"
    "members = 0\n"
    "[coupling]\n"
    "lambda = 1\n"
    "[iterate]\n"
    "depth = 3\n"
    "eps1 = 0.5\n"
    "ball_radius = 16\n"
    "amp_exponent = 8\n"
    "grid_step = 0.05\n"
    "lambda_points = 2\n"
    "measure_target = 8\n"
    "drift_target = 2\n"
    "max_blocks = 4\n";

fs::path fresh_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("speclab_accept_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// 10. End-to-end three-stage run: measures strictly decreasing, certified
//     stages obey the norm-route measure bound, < 10 min.
void criterion_10(const fs::path& out_a) {
    auto t0 = std::chrono::steady_clock::now();
    bool pass = true;
    std::string detail;
    std::vector<std::string> errors;
    auto cfg = cli::validate_config(kIterateConfig, errors);
    if (!cfg) {
        report(10, "measure decay end-to-end", false, "config rejected");
        return;
    }
    cfg->out_dir = out_a.string();
    cli::RunManifest manifest;
    bool ok = cli::run(*cfg, manifest);
    if (!ok) {
        pass = false;
        detail = "run failed";
        for (const auto& n : manifest.notes) detail += "; " + n;
    } else {
        io::json res = io::json::parse(io::read_text_file(
            out_a.string() + "/iterate_certificates.json"));
        const auto& stages = res["stages"];
        if (stages.size() != 3) {
            pass = false;
            detail = "expected 3 stages, got " +
                     std::to_string(stages.size());
        }
        // Later stages collapse below double-precision band widths, so the
        // strict comparison runs on the log-scale measure (resolved bands
        // report ln(length); collapsed bands the first-order 4/|psi'|
        // width). The plain measure must still never increase.
        double prev_log = std::numeric_limits<double>::infinity();
        double prev = std::numeric_limits<double>::infinity();
        for (const auto& st : stages) {
            double measure = st["measure"].get<double>();
            double log_measure = st["log_measure"].get<double>();
            if (!(log_measure < prev_log)) {
                pass = false;
                detail = "log-scale measures not strictly decreasing";
            }
            if (measure > prev) {
                pass = false;
                detail = "plain measures increase between stages";
            }
            prev_log = log_measure;
            prev = measure;
            // Certified coupling entries must obey 4*pi*n_K*exp(-delta m (r-1) n_k^2).
            for (const auto& e : st["joining"]["induction"]["measures"]) {
                if (!e["hypothesis_certified"].get<bool>()) continue;
                if (!e["applicable"].get<bool>()) continue;
                if (e["worst_measure"].get<double>() >
                    e["bound"].get<double>()) {
                    pass = false;
                    detail = "certified stage exceeds the measure bound";
                }
            }
        }
    }
    double dt = seconds_since(t0);
    if (dt >= 600.0) {
        pass = false;
        detail = "took " + format_double(dt) + " s";
    }
    report(10, "measure decay end-to-end", pass,
           detail.empty() ? format_double(dt) + " s" : detail);
}

// 11. Rerunning criterion 10's config reproduces every CSV/JSON byte for
//     byte (the manifest carries wall-clock timestamps and is excluded).
void criterion_11(const fs::path& out_a) {
    bool pass = true;
    std::string detail;
    std::vector<std::string> errors;
    auto cfg = cli::validate_config(kIterateConfig, errors);
    fs::path out_b = fresh_dir("iter_b");
    cfg->out_dir = out_b.string();
    cli::RunManifest manifest;
    cli::run(*cfg, manifest);
    int compared = 0;
    for (const auto& entry : fs::directory_iterator(out_a)) {
        std::string name = entry.path().filename().string();
        std::string ext = entry.path().extension().string();
        if (name == "manifest.json" || (ext != ".csv" && ext != ".json"))
            continue;
        ++compared;
        if (!fs::exists(out_b / name) ||
            io::read_text_file((out_a / name).string()) !=
                io::read_text_file((out_b / name).string())) {
            pass = false;
            detail = "mismatch in " + name;
        }
    }
    if (compared == 0) {
        pass = false;
        detail = "nothing to compare";
    }
    report(11, "determinism", pass, detail);
}

}  // namespace

int main() {
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();
    fs::path out_a = fresh_dir("iter_a");
    criterion_10(out_a);
    criterion_11(out_a);
    std::printf("%s\n", g_failures == 0 ? "ALL CRITERIA PASS"
                                        : "ACCEPTANCE FAILURES PRESENT");
    return g_failures == 0 ? 0 : 1;
}
