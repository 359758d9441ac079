#pragma once

// Staged construction of periodic families whose spectra shrink while the
// Lyapunov exponent stays bounded below: gap-opening defect families,
// block/staircase families with the transversality census, and the nested
// ball iteration that ties the stages together.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "speclab/bands.hpp"
#include "speclab/rng.hpp"

namespace speclab {

// --- grids -------------------------------------------------------------------

struct GridSpec {
    double lo = -6.0;
    double hi = 6.0;
    double step = 1e-3;

    std::vector<double> points() const {
        if (!(step > 0.0) || !(hi > lo))
            throw std::invalid_argument("GridSpec: need step > 0 and hi > lo");
        std::vector<double> out;
        std::int64_t n = static_cast<std::int64_t>(std::ceil((hi - lo) / step));
        out.reserve(static_cast<std::size_t>(n + 1));
        for (std::int64_t i = 0; i <= n; ++i)
            out.push_back(std::min(lo + step * static_cast<double>(i), hi));
        return out;
    }

    // Window wide enough that beyond it L >= 1 holds outright
    // (|E| >= ||lambda v|| + 4).
    static GridSpec window_for(double sup_norm, double lambda_max,
                               double step) {
        double w = std::abs(lambda_max) * sup_norm + 4.0;
        return GridSpec{-w, w, step};
    }
};

// Geometric grid in [1/M, M], mirrored to negative values when requested.
inline std::vector<double> lambda_grid(double M, int points_per_sign = 5,
                                       bool both_signs = true) {
    if (M < 1.0) throw std::invalid_argument("lambda_grid: M < 1");
    if (points_per_sign < 1)
        throw std::invalid_argument("lambda_grid: empty grid");
    std::vector<double> out;
    for (int i = 0; i < points_per_sign; ++i) {
        double t = points_per_sign == 1
                       ? 0.5
                       : static_cast<double>(i) /
                             static_cast<double>(points_per_sign - 1);
        out.push_back(std::pow(M, 2.0 * t - 1.0));  // M^-1 .. M
    }
    if (both_signs) {
        std::size_t k = out.size();
        for (std::size_t i = 0; i < k; ++i) out.push_back(-out[i]);
    }
    return out;
}

namespace detail {

// Deterministic chunked parallel map over [0, n).
inline void parallel_for(std::int64_t n, int threads,
                         const std::function<void(std::int64_t)>& body) {
    if (threads <= 1 || n < 64) {
        for (std::int64_t i = 0; i < n; ++i) body(i);
        return;
    }
    int workers = std::min<int>(threads, 64);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            for (std::int64_t i = w; i < n; i += workers) body(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace detail

// Sup over the grid of |L(E, lambda A) - L(E, lambda B)|.
inline double family_drift(const PotentialFamily& A, const PotentialFamily& B,
                           double lambda, const GridSpec& grid,
                           int threads = 1) {
    auto pts = grid.points();
    std::vector<double> per(pts.size(), 0.0);
    detail::parallel_for(
        static_cast<std::int64_t>(pts.size()), threads, [&](std::int64_t i) {
            double E = pts[static_cast<std::size_t>(i)];
            per[static_cast<std::size_t>(i)] = std::abs(
                lyapunov_family(E, lambda, A) - lyapunov_family(E, lambda, B));
        });
    double sup = 0.0;
    for (double d : per) sup = std::max(sup, d);
    return sup;
}

// Min over the grid of the family-average Lyapunov exponent.
inline double family_min_lyap(const PotentialFamily& W, double lambda,
                              const GridSpec& grid, int threads = 1) {
    auto pts = grid.points();
    std::vector<double> per(pts.size(), 0.0);
    detail::parallel_for(
        static_cast<std::int64_t>(pts.size()), threads, [&](std::int64_t i) {
            per[static_cast<std::size_t>(i)] =
                lyapunov_family(pts[static_cast<std::size_t>(i)], lambda, W);
        });
    double mn = std::numeric_limits<double>::infinity();
    for (double d : per) mn = std::min(mn, d);
    return mn;
}

// --- gap-opening (defect) stage ------------------------------------------------

struct StartParams {
    double M = 1.0;             // coupling window [1/M, M]
    std::int64_t N1 = 0;        // defect denominator; 0 = search
    std::int64_t N2 = 0;        // shift count; 0 = derive from delta
    std::int64_t n_K = 0;       // target period (multiple of the seed period)
    std::int64_t N2_cap = 4096; // desk-scale guard on the family size
    double drift_tol = 0.0;     // N1 search target; 0 = 1/level(n_K)
    int lambda_points = 3;      // per sign, geometric in [1/M, M]
    bool both_signs = true;
    double grid_step = 1e-2;
    int threads = 1;
};

// Defect candidates: the embedded seed with the last site raised by j/N1,
// j = 1..2*n_k+1.
inline std::vector<PeriodicPotential> build_start_candidates(
    const PeriodicPotential& w, std::int64_t n_K, std::int64_t N1) {
    if (N1 < 1) throw std::invalid_argument("build_start_candidates: N1 < 1");
    if (n_K <= w.period())
        throw std::invalid_argument("build_start_candidates: need n_K > n_k");
    PeriodicPotential base = embed(w, n_K);
    std::int64_t count = 2 * w.period() + 1;
    std::vector<PeriodicPotential> out;
    out.reserve(static_cast<std::size_t>(count));
    for (std::int64_t j = 1; j <= count; ++j) {
        std::vector<double> vals = base.values();
        vals.back() += static_cast<double>(j) / static_cast<double>(N1);
        out.emplace_back(std::move(vals));
    }
    return out;
}

struct GapOpening {
    bool ok = false;
    std::int64_t j = 0;      // 1-based index into the candidate list
    double delta = 0.0;      // smallest gap across the sampled couplings
    // Per-candidate energies where bands still touch (diagnostic on failure).
    std::vector<std::pair<std::int64_t, std::vector<double>>> touching;
};

// Least j whose spectrum has the full component count (all gaps open) at
// every sampled coupling; delta is the smallest gap seen for that j.
inline GapOpening select_gap_opening_j(
    const std::vector<PeriodicPotential>& candidates,
    const std::vector<double>& lambdas, const BandOptions& bopt = {}) {
    if (candidates.empty())
        throw std::invalid_argument("select_gap_opening_j: no candidates");
    GapOpening out;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        std::int64_t j = static_cast<std::int64_t>(c) + 1;
        double delta = std::numeric_limits<double>::infinity();
        std::vector<double> touching;
        bool all_open = true;
        for (double lam : lambdas) {
            SpectrumDescription spec = compute_bands(candidates[c], lam, bopt);
            if (spec.component_count != spec.period) {
                all_open = false;
                for (std::size_t b = 0; b + 1 < spec.bands.size(); ++b)
                    if (spec.bands[b].touches_next)
                        touching.push_back(spec.bands[b].hi);
                for (double e : spec.near_touch_energies) touching.push_back(e);
                continue;
            }
            for (std::size_t b = 0; b + 1 < spec.bands.size(); ++b)
                delta = std::min(delta,
                                 spec.bands[b + 1].lo - spec.bands[b].hi);
        }
        if (all_open) {
            out.ok = true;
            out.j = j;
            out.delta = delta;
            return out;
        }
        out.touching.emplace_back(j, std::move(touching));
    }
    return out;
}

inline GapOpening select_gap_opening_j(
    const std::vector<PeriodicPotential>& candidates, double lambda,
    const BandOptions& bopt = {}) {
    return select_gap_opening_j(candidates, std::vector<double>{lambda}, bopt);
}

// Arithmetic constant shifts w + 4*pi*M*l / (n_K * N2), l = 0..N2.
inline PotentialFamily build_shifted_family(const PeriodicPotential& w_j,
                                            double M, std::int64_t N2,
                                            double delta) {
    std::int64_t n_K = w_j.period();
    if (!(delta > 0.0))
        throw std::invalid_argument("build_shifted_family: delta <= 0");
    if (static_cast<double>(N2) <=
        4.0 * kPi * M / (delta * static_cast<double>(n_K)))
        throw std::invalid_argument(
            "build_shifted_family: N2 too small for the gap size");
    double step = 4.0 * kPi * M / (static_cast<double>(n_K) *
                                   static_cast<double>(N2));
    std::vector<PeriodicPotential> members;
    members.reserve(static_cast<std::size_t>(N2 + 1));
    for (std::int64_t l = 0; l <= N2; ++l)
        members.push_back(w_j.shifted(step * static_cast<double>(l)));
    return PotentialFamily(std::move(members));
}

// Every grid energy must escape the spectrum of at least one member.
inline bool shifts_cover_window(const PotentialFamily& W, double lambda,
                                const GridSpec& grid,
                                const BandOptions& bopt = {}) {
    std::vector<SpectrumDescription> specs;
    specs.reserve(W.count());
    for (const auto& m : W.members())
        specs.push_back(compute_bands(m, lambda, bopt));
    for (double E : grid.points()) {
        bool escaped = false;
        for (const auto& s : specs)
            if (!s.contains(E)) {
                escaped = true;
                break;
            }
        if (!escaped) return false;
    }
    return true;
}

// Greedy minimal sub-family such that every (lambda, grid E) pair escapes the
// spectrum of at least one selected member. Returns indices into `members`.
inline std::vector<std::size_t> thin_family_for_positivity(
    const std::vector<PeriodicPotential>& members,
    const std::vector<double>& lambdas, const GridSpec& grid,
    const BandOptions& bopt = {}) {
    auto pts = grid.points();
    std::size_t cells = lambdas.size() * pts.size();
    // covered[member] over flattened (lambda, E) cells.
    std::vector<std::vector<char>> covers(members.size(),
                                          std::vector<char>(cells, 0));
    for (std::size_t m = 0; m < members.size(); ++m) {
        for (std::size_t li = 0; li < lambdas.size(); ++li) {
            SpectrumDescription spec =
                compute_bands(members[m], lambdas[li], bopt);
            for (std::size_t ei = 0; ei < pts.size(); ++ei)
                covers[m][li * pts.size() + ei] = !spec.contains(pts[ei]);
        }
    }
    std::vector<char> uncovered(cells, 1);
    std::size_t remaining = cells;
    std::vector<std::size_t> chosen;
    while (remaining > 0) {
        std::size_t best = members.size();
        std::size_t best_gain = 0;
        for (std::size_t m = 0; m < members.size(); ++m) {
            std::size_t gain = 0;
            for (std::size_t c = 0; c < cells; ++c)
                if (uncovered[c] && covers[m][c]) ++gain;
            if (gain > best_gain) {
                best_gain = gain;
                best = m;
            }
        }
        if (best == members.size()) break;  // some cell is covered by nobody
        chosen.push_back(best);
        for (std::size_t c = 0; c < cells; ++c)
            if (uncovered[c] && covers[best][c]) {
                uncovered[c] = 0;
                --remaining;
            }
    }
    if (remaining > 0) return {};  // coverage impossible: report failure
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

struct StartReport {
    bool ok = false;
    std::string failure;
    std::int64_t n_K = 0;
    std::int64_t N1 = 0;
    std::int64_t N2 = 0;
    bool n2_capped = false;
    double delta = 0.0;     // smallest opened gap across seeds and couplings
    double drift = 0.0;     // sup grid |L(family) - L(seed family)|
    double min_lyap = 0.0;  // min grid family-average exponent
    bool covered = true;    // every grid energy escapes some member
    bool in_ball = true;
    bool thinned = false;
    std::size_t full_size = 0;  // family size before thinning
    // Selected defect index per (seed, coupling), row-major over seeds.
    std::vector<std::pair<double, std::int64_t>> j_of_lambda;
};

struct StartResult {
    PotentialFamily family;
    StartReport report;
};

// One gap-opening stage: defect candidates per seed, per-coupling defect
// selection, constant-shift families, optional greedy thinning.
inline StartResult lemma_start(const PotentialFamily& W, const Ball& ball,
                               const StartParams& p, bool thin = true) {
    if (p.n_K <= 0 || p.n_K % W.period() != 0 || p.n_K == W.period())
        throw std::invalid_argument("lemma_start: n_K must properly extend n_k");
    StartReport rep;
    rep.n_K = p.n_K;
    auto lambdas = lambda_grid(p.M, p.lambda_points, p.both_signs);
    double lam_max = p.M;
    double drift_tol = p.drift_tol;
    if (drift_tol <= 0.0) {
        int level = 1;
        for (std::int64_t q = 2; q < p.n_K; q *= 2) ++level;
        drift_tol = 1.0 / static_cast<double>(level);
    }
    GridSpec grid = GridSpec::window_for(W.members()[0].sup_norm() + 4.0,
                                         lam_max, p.grid_step);

    // N1 search: smallest power of two whose extreme defect keeps the
    // exponent drift below tolerance on the grid.
    std::int64_t N1 = p.N1;
    if (N1 == 0) {
        for (int pw = 1; pw <= 40; ++pw) {
            std::int64_t cand = std::int64_t{1} << pw;
            double worst = 0.0;
            for (const auto& w : W.members()) {
                auto cands = build_start_candidates(w, p.n_K, cand);
                PotentialFamily probe({cands.back()});
                PotentialFamily seed({w});
                for (double lam : {1.0 / p.M, 1.0, p.M})
                    worst = std::max(worst, family_drift(probe, seed, lam,
                                                         grid, p.threads));
            }
            if (worst < drift_tol) {
                N1 = cand;
                break;
            }
        }
        if (N1 == 0) {
            rep.failure = "N1 search exhausted (drift never below tolerance)";
            return {W, rep};
        }
    }
    rep.N1 = N1;

    // Pass 1: per-seed defect selection and the global smallest gap.
    double delta = std::numeric_limits<double>::infinity();
    std::vector<std::vector<PeriodicPotential>> all_cands;
    std::vector<std::int64_t> seed_j;  // largest selected defect per seed
    for (const auto& w : W.members()) {
        auto cands = build_start_candidates(w, p.n_K, N1);
        std::int64_t j_max = 1;
        for (double lam : lambdas) {
            GapOpening sel = select_gap_opening_j(cands, lam);
            if (!sel.ok) {
                rep.failure = "no defect opens all gaps at coupling " +
                              format_double(lam);
                return {W, rep};
            }
            rep.j_of_lambda.emplace_back(lam, sel.j);
            delta = std::min(delta, sel.delta);
            j_max = std::max(j_max, sel.j);
        }
        all_cands.push_back(std::move(cands));
        seed_j.push_back(j_max);
    }
    rep.delta = delta;

    // Pass 2: constant-shift families per seed (one defect per seed at desk
    // scale: the largest selected across couplings).
    std::int64_t N2 = p.N2;
    if (N2 == 0) {
        // delta can be 0 when adjacent bands are separated by less than one
        // ulp; any finite shift count then lands on the cap.
        double n2d = std::floor(4.0 * kPi * p.M /
                                (delta * static_cast<double>(p.n_K))) +
                     1.0;
        N2 = (std::isfinite(n2d) && n2d < static_cast<double>(p.N2_cap))
                 ? static_cast<std::int64_t>(n2d)
                 : p.N2_cap;
    }
    if (N2 >= p.N2_cap) {
        N2 = p.N2_cap;
        rep.n2_capped = true;
    }
    rep.N2 = N2;
    double shift_step = 4.0 * kPi * p.M / (static_cast<double>(p.n_K) *
                                           static_cast<double>(N2));
    std::vector<PeriodicPotential> collected;
    std::vector<std::size_t> seed_of;  // seed index per collected member
    std::vector<double> shift_of;      // constant shift per collected member
    for (std::size_t s = 0; s < all_cands.size(); ++s) {
        const PeriodicPotential& w_j =
            all_cands[s][static_cast<std::size_t>(seed_j[s] - 1)];
        for (std::int64_t l = 0; l <= N2; ++l) {
            double c = shift_step * static_cast<double>(l);
            collected.push_back(w_j.shifted(c));
            seed_of.push_back(s);
            shift_of.push_back(c);
        }
    }
    rep.full_size = collected.size();

    // Coverage table. A constant shift only translates the spectrum
    // (Sigma(lambda(w+c)) = Sigma(lambda w) + lambda c), so bands are
    // computed once per seed and coupling.
    auto pts = grid.points();
    std::size_t cells = lambdas.size() * pts.size();
    // Merged components per (seed, coupling), for binary-search membership.
    std::vector<std::vector<std::vector<std::pair<double, double>>>> comps(
        all_cands.size());
    for (std::size_t s = 0; s < all_cands.size(); ++s)
        for (double lam : lambdas)
            comps[s].push_back(
                compute_bands(
                    all_cands[s][static_cast<std::size_t>(seed_j[s] - 1)], lam)
                    .components());
    auto outside = [](const std::vector<std::pair<double, double>>& cs,
                      double E, double margin) {
        auto it = std::upper_bound(
            cs.begin(), cs.end(), E + margin,
            [](double x, const std::pair<double, double>& c) {
                return x < c.first;
            });
        return it == cs.begin() || std::prev(it)->second < E - margin;
    };
    // covers: escape by at least one grid step; covers_exact: plain escape.
    std::vector<std::vector<char>> covers(
        collected.size(), std::vector<char>(cells, 0));
    std::vector<std::vector<char>> covers_exact(
        collected.size(), std::vector<char>(cells, 0));
    for (std::size_t mi = 0; mi < collected.size(); ++mi)
        for (std::size_t li = 0; li < lambdas.size(); ++li) {
            const auto& cs = comps[seed_of[mi]][li];
            double off = lambdas[li] * shift_of[mi];
            for (std::size_t ei = 0; ei < pts.size(); ++ei) {
                std::size_t c = li * pts.size() + ei;
                covers[mi][c] = outside(cs, pts[ei] - off, p.grid_step);
                covers_exact[mi][c] = outside(cs, pts[ei] - off, 0.0);
            }
        }

    std::vector<std::size_t> keep;
    if (thin) {
        std::vector<char> uncovered(cells, 1);
        std::size_t remaining = cells;
        // Greedy set cover: first with a one-step escape margin (keeps the
        // exponent bounded below between grid points), then plain escape for
        // whatever margin coverage could not reach.
        for (const auto* table : {&covers, &covers_exact}) {
            while (remaining > 0) {
                std::size_t best = collected.size();
                std::size_t best_gain = 0;
                for (std::size_t mi = 0; mi < collected.size(); ++mi) {
                    std::size_t gain = 0;
                    for (std::size_t c = 0; c < cells; ++c)
                        if (uncovered[c] && (*table)[mi][c]) ++gain;
                    if (gain > best_gain) {
                        best_gain = gain;
                        best = mi;
                    }
                }
                if (best == collected.size()) break;
                keep.push_back(best);
                for (std::size_t c = 0; c < cells; ++c)
                    if (uncovered[c] && (*table)[best][c]) {
                        uncovered[c] = 0;
                        --remaining;
                    }
            }
            if (remaining == 0) break;
        }
        if (remaining > 0) {
            rep.failure = "no sub-family escapes every grid energy";
            return {W, rep};
        }
        std::sort(keep.begin(), keep.end());
        keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
        // Reverse pruning: drop members whose removal keeps every cell
        // escaped (greedy over two tables tends to over-collect).
        for (std::size_t drop = keep.size(); drop-- > 0;) {
            bool still_covered = true;
            for (std::size_t c = 0; c < cells && still_covered; ++c) {
                bool escaped = false;
                for (std::size_t k = 0; k < keep.size(); ++k)
                    if (k != drop && covers_exact[keep[k]][c]) {
                        escaped = true;
                        break;
                    }
                if (!escaped) still_covered = false;
            }
            if (still_covered) keep.erase(keep.begin() +
                                          static_cast<std::ptrdiff_t>(drop));
        }
        rep.thinned = true;
    } else {
        keep.resize(collected.size());
        for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = i;
    }
    std::vector<PeriodicPotential> members;
    for (std::size_t i : keep) members.push_back(collected[i]);
    PotentialFamily family(std::move(members));

    rep.covered = true;
    for (std::size_t c = 0; c < cells && rep.covered; ++c) {
        bool escaped = false;
        for (std::size_t i : keep)
            if (covers_exact[i][c]) {
                escaped = true;
                break;
            }
        if (!escaped) rep.covered = false;
    }
    for (const auto& m : family.members())
        if (!ball.contains(m)) rep.in_ball = false;
    double drift = 0.0, min_l = std::numeric_limits<double>::infinity();
    for (double lam : lambdas) {
        drift = std::max(drift, family_drift(family, W, lam, grid, p.threads));
        min_l = std::min(min_l, family_min_lyap(family, lam, grid, p.threads));
    }
    rep.drift = drift;
    rep.min_lyap = min_l;
    rep.ok = rep.covered && rep.in_ball && min_l > 0.0;
    if (!rep.covered) rep.failure = "grid coverage failed";
    if (!rep.in_ball) rep.failure = "family escapes the ball";
    return {family, rep};
}

// --- block / staircase stage ---------------------------------------------------

struct InductionParams {
    std::int64_t n_K = 0;           // target period
    std::int64_t r = 0;             // 0 = floor(n_K / (m * n_k))
    double amp_exponent = 20.0;     // staircase amplitude r^(-amp_exponent)
    double angle_threshold = 0.0;   // 0 = r^(-70)
    std::int64_t max_family = 0;    // 0 = full r^m enumeration
    std::vector<std::int64_t> partition;  // j_0..j_m; empty = computed
    double grid_step = 1e-2;
    int lambda_points = 3;
    bool both_signs = true;
    double M = 1.0;
    int threads = 1;
};

// Partition 0 = j_0 < ... < j_m = q with j_i - j_{i-1} - r in {0, 1}.
inline std::vector<std::int64_t> make_partition(std::int64_t m,
                                                std::int64_t q) {
    if (m < 1 || q < 2 * m)
        throw std::invalid_argument("make_partition: need q >= 2m");
    std::int64_t r = q / m;
    std::int64_t slack = q - m * r;  // < m, spread over the first parts
    std::vector<std::int64_t> j(static_cast<std::size_t>(m) + 1, 0);
    for (std::int64_t i = 1; i <= m; ++i)
        j[static_cast<std::size_t>(i)] =
            j[static_cast<std::size_t>(i - 1)] + r + (i <= slack ? 1 : 0);
    return j;
}

inline void validate_partition(const std::vector<std::int64_t>& j,
                               std::int64_t r, std::int64_t q) {
    if (j.size() < 2 || j.front() != 0 || j.back() != q)
        throw std::invalid_argument("partition: must run from 0 to n_K/n_k");
    for (std::size_t i = 1; i < j.size(); ++i) {
        std::int64_t d = j[i] - j[i - 1] - r;
        if (d != 0 && d != 1)
            throw std::invalid_argument("partition: slack outside {0,1}");
    }
}

// Lays down ~r repetitions of each member in order, block width n_k.
inline PeriodicPotential build_block_potential(
    const std::vector<PeriodicPotential>& W, const InductionParams& p) {
    if (W.empty()) throw std::invalid_argument("build_block_potential: empty");
    std::int64_t n_k = W.front().period();
    for (const auto& w : W)
        if (w.period() != n_k)
            throw std::invalid_argument("build_block_potential: mixed periods");
    std::int64_t m = static_cast<std::int64_t>(W.size());
    if (p.n_K < 2 * m * n_k || p.n_K % n_k != 0)
        throw std::invalid_argument("build_block_potential: n_K too small");
    std::int64_t q = p.n_K / n_k;
    std::int64_t r = p.r > 0 ? p.r : q / m;
    std::vector<std::int64_t> part =
        p.partition.empty() ? make_partition(m, q) : p.partition;
    validate_partition(part, r, q);
    std::vector<double> vals(static_cast<std::size_t>(p.n_K), 0.0);
    for (std::int64_t l = 0; l < p.n_K; ++l) {
        std::int64_t j = l / n_k;
        std::int64_t i = 0;
        while (part[static_cast<std::size_t>(i + 1)] <= j) ++i;
        vals[static_cast<std::size_t>(l)] =
            W[static_cast<std::size_t>(i)].at(l);
    }
    return PeriodicPotential(std::move(vals));
}

struct StaircaseResult {
    PotentialFamily family;
    double amp = 0.0;
    bool amp_underflow = false;
    bool sampled = false;  // t-enumeration truncated by max_family
    std::vector<std::vector<std::int64_t>> tuples;
};

namespace detail {

inline std::vector<std::vector<std::int64_t>> enumerate_tuples(
    std::int64_t m, std::int64_t r, std::int64_t max_family) {
    double total = std::pow(static_cast<double>(r), static_cast<double>(m));
    std::vector<std::vector<std::int64_t>> out;
    if (max_family <= 0 || total <= static_cast<double>(max_family)) {
        std::vector<std::int64_t> t(static_cast<std::size_t>(m), 0);
        while (true) {
            out.push_back(t);
            std::int64_t i = m - 1;
            while (i >= 0 && ++t[static_cast<std::size_t>(i)] == r) {
                t[static_cast<std::size_t>(i)] = 0;
                --i;
            }
            if (i < 0) break;
        }
        return out;
    }
    // Deterministic diagonal sample: spread max_family tuples over the grid.
    SplitMix64 gen(0x5eedbeef);
    std::vector<std::int64_t> t(static_cast<std::size_t>(m), 0);
    out.push_back(t);  // always keep the unperturbed base
    while (static_cast<std::int64_t>(out.size()) < max_family) {
        for (auto& ti : t) ti = static_cast<std::int64_t>(gen.below(
                               static_cast<std::uint64_t>(r)));
        out.push_back(t);
    }
    return out;
}

}  // namespace detail

// Staircase family: each tuple t shifts the last block of part i by amp*t_i.
inline StaircaseResult build_staircase_family(
    const std::vector<PeriodicPotential>& W, const PeriodicPotential& base,
    const InductionParams& p) {
    std::int64_t n_k = W.front().period();
    std::int64_t m = static_cast<std::int64_t>(W.size());
    std::int64_t q = p.n_K / n_k;
    std::int64_t r = p.r > 0 ? p.r : q / m;
    std::vector<std::int64_t> part =
        p.partition.empty() ? make_partition(m, q) : p.partition;
    double amp = std::pow(static_cast<double>(r), -p.amp_exponent);
    StaircaseResult out{PotentialFamily({base}), amp, false, false, {}};
    out.amp_underflow =
        amp < std::ldexp(1.0, -400) * std::max(1.0, base.sup_norm());
    out.tuples = detail::enumerate_tuples(m, r, p.max_family);
    out.sampled = p.max_family > 0 &&
                  static_cast<double>(out.tuples.size()) <
                      std::pow(static_cast<double>(r), static_cast<double>(m));
    std::vector<PeriodicPotential> members;
    members.reserve(out.tuples.size());
    for (const auto& t : out.tuples) {
        std::vector<double> vals = base.values();
        for (std::int64_t i = 1; i <= m; ++i) {
            std::int64_t jb = part[static_cast<std::size_t>(i)] - 1;
            for (std::int64_t l = jb * n_k; l < (jb + 1) * n_k; ++l)
                vals[static_cast<std::size_t>(l)] +=
                    amp * static_cast<double>(t[static_cast<std::size_t>(i - 1)]);
        }
        members.emplace_back(std::move(vals));
    }
    out.family = PotentialFamily(std::move(members));
    return out;
}

// --- niceness (transversality) census ------------------------------------------

struct NicenessReport {
    std::string status = "ok";  // "ok" | "no-good-blocks"
    double cutoff = 0.0;        // c with good blocks satisfying ||B|| >= e^(cr)
    std::vector<std::int64_t> good;  // 1-based good block indices i_1..i_d
    std::vector<double> angles;      // per good j: angle(C_hat u_j, s_{j+1})
    std::vector<int> flags;          // 1 nice, 0 not nice, -1 inconclusive
    bool very_nice = true;
};

namespace detail {

inline ScaledMat2 scaled_product(const ScaledMat2& lhs, const ScaledMat2& rhs) {
    ScaledMat2 out;
    out.unit = lhs.unit * rhs.unit;
    out.log_scale = lhs.log_scale + rhs.log_scale;
    renormalize(out.unit, out.log_scale);
    return out;
}

// Cutoff selection by pigeonhole: pick ln c in the scan window outside every
// block's excluded interval (ln ln ||B|| - ln r, .. + gap].
inline double select_cutoff(const std::vector<double>& log_norms,
                            std::int64_t r) {
    double m = static_cast<double>(log_norms.size());
    double lr = std::log(static_cast<double>(r));
    double lo, hi, gap;
    // The nested-log window only makes sense once ln ln ln r > 1.
    if (lr > 1.0 && std::log(lr) > 1.0 && std::log(std::log(lr)) > 1.0) {
        double lllr = std::log(std::log(lr));
        double llllr = std::log(lllr);
        lo = -m * lllr;
        hi = lo + m * llllr;
        gap = llllr;
    } else {
        // Small-r fallback window.
        lo = -m * std::log(2.0);
        hi = 0.0;
        gap = (hi - lo) / (2.0 * m);
    }
    auto excluded = [&](double lnc) {
        for (double ln_norm : log_norms) {
            if (ln_norm <= 0.0) continue;  // ||B|| = 1: never good, no interval
            double a = std::log(ln_norm) - lr;
            if (lnc > a && lnc <= a + gap) return true;
        }
        return false;
    };
    int steps = 64 * static_cast<int>(m);
    for (int widen = 0; widen < 64; ++widen) {
        for (int s = 0; s <= steps; ++s) {
            double lnc = lo + (hi - lo) * static_cast<double>(s) /
                                  static_cast<double>(steps);
            if (!excluded(lnc)) return std::exp(lnc);
        }
        // Scan lower: excluded intervals are bounded below, so this exits.
        hi = lo;
        lo -= m * gap + 1.0;
    }
    throw std::runtime_error("select_cutoff: no admissible cutoff found");
}

}  // namespace detail

// Block factorization of one staircase member at (E, lambda), with the
// contracted/expanded-direction transversality flags per good block.
inline NicenessReport classify_niceness(const std::vector<PeriodicPotential>& W,
                                        const std::vector<std::int64_t>& t,
                                        double E, double lambda,
                                        const InductionParams& p) {
    std::int64_t n_k = W.front().period();
    std::int64_t m = static_cast<std::int64_t>(W.size());
    if (static_cast<std::int64_t>(t.size()) != m)
        throw std::invalid_argument("classify_niceness: tuple size != m");
    std::int64_t q = p.n_K / n_k;
    std::int64_t r = p.r > 0 ? p.r : q / m;
    std::vector<std::int64_t> part =
        p.partition.empty() ? make_partition(m, q) : p.partition;
    double amp = std::pow(static_cast<double>(r), -p.amp_exponent);
    double theta_min = p.angle_threshold > 0.0
                           ? p.angle_threshold
                           : std::pow(static_cast<double>(r), -70.0);

    // Per-part factors: C_i at the shifted energy, B_i = (monodromy)^(len-1).
    std::vector<ScaledMat2> C(static_cast<std::size_t>(m)), B(
        static_cast<std::size_t>(m));
    std::vector<double> log_norms(static_cast<std::size_t>(m), 0.0);
    for (std::int64_t i = 0; i < m; ++i) {
        const PeriodicPotential w = W[static_cast<std::size_t>(i)].scaled(lambda);
        double Ei = E - lambda * amp * static_cast<double>(
                            t[static_cast<std::size_t>(i)]);
        C[static_cast<std::size_t>(i)] = transfer_scaled(Ei, w, n_k);
        ScaledMat2 one = transfer_scaled(E, w, n_k);
        ScaledMat2 acc;  // identity
        std::int64_t reps = part[static_cast<std::size_t>(i + 1)] -
                            part[static_cast<std::size_t>(i)] - 1;
        for (std::int64_t k = 0; k < reps; ++k)
            acc = detail::scaled_product(one, acc);
        B[static_cast<std::size_t>(i)] = acc;
        log_norms[static_cast<std::size_t>(i)] = acc.log_op_norm();
    }

    NicenessReport rep;
    rep.cutoff = detail::select_cutoff(log_norms, r);
    double good_level = rep.cutoff * static_cast<double>(r);
    for (std::int64_t i = 0; i < m; ++i)
        if (log_norms[static_cast<std::size_t>(i)] >= good_level)
            rep.good.push_back(i + 1);
    if (rep.good.empty()) {
        rep.status = "no-good-blocks";
        return rep;  // vacuously very nice
    }

    std::int64_t d = static_cast<std::int64_t>(rep.good.size());
    std::vector<ScaledMat2> Bhat(static_cast<std::size_t>(d));
    std::vector<ScaledMat2> Chat(static_cast<std::size_t>(d));
    std::int64_t prev = 0;  // i_0 = 0 (1-based block indices)
    for (std::int64_t j = 0; j < d; ++j) {
        std::int64_t ij = rep.good[static_cast<std::size_t>(j)];
        ScaledMat2 D;  // identity; product C_i B_i for prev < i < ij
        for (std::int64_t i = prev + 1; i < ij; ++i) {
            ScaledMat2 cb = detail::scaled_product(
                C[static_cast<std::size_t>(i - 1)],
                B[static_cast<std::size_t>(i - 1)]);
            D = detail::scaled_product(cb, D);
        }
        Bhat[static_cast<std::size_t>(j)] = detail::scaled_product(
            B[static_cast<std::size_t>(ij - 1)], D);
        Chat[static_cast<std::size_t>(j)] = C[static_cast<std::size_t>(ij - 1)];
        prev = ij;
    }

    std::vector<SingularDecomposition> sd(static_cast<std::size_t>(d));
    for (std::int64_t j = 0; j < d; ++j)
        sd[static_cast<std::size_t>(j)] =
            singular_directions(Bhat[static_cast<std::size_t>(j)].unit);
    for (std::int64_t j = 0; j < d; ++j) {
        const auto& here = sd[static_cast<std::size_t>(j)];
        const auto& next = sd[static_cast<std::size_t>((j + 1) % d)];
        if (here.degenerate || next.degenerate) {
            rep.angles.push_back(0.0);
            rep.flags.push_back(-1);
            rep.very_nice = false;
            continue;
        }
        const Mat2& Cu = Chat[static_cast<std::size_t>(j)].unit;
        double ux = here.expanded_image.vx(), uy = here.expanded_image.vy();
        double zx, zy;
        Cu.apply(ux, uy, zx, zy);
        double ang = direction_angle(Direction::of_vector(zx, zy),
                                     next.contracted);
        rep.angles.push_back(ang);
        bool nice = ang >= theta_min;
        rep.flags.push_back(nice ? 1 : 0);
        if (!nice) rep.very_nice = false;
    }
    return rep;
}

// --- induction certificate ------------------------------------------------------

struct MeasureEntry {
    double lambda = 0.0;
    double delta = 0.0;          // hypothesis constant
    double min_grid_lyap = 0.0;  // grid min of L(E, lambda W) on the window
    bool hypothesis_certified = false;
    double bound = 0.0;          // 4 pi n_K exp(-delta m (r-1) n_k^2)
    double worst_measure = 0.0;  // max member spectrum measure
    bool applicable = false;
    bool pass = false;
    double norm_target_log = 0.0;    // delta m (r-1) n_k^2
    double norm_certified_log = 0.0; // grid-certified in-band log norm
    // Per-member spectrum data at this coupling; band computations at large
    // periods dominate the stage cost, so callers reuse these.
    std::vector<double> member_measures;
    std::vector<double> member_log_measures;  // log-scale companions
    std::int64_t worst_components = 0;
};

struct InductionCertificate {
    std::int64_t n_k = 0, n_K = 0, m = 0, r = 0;
    double amp = 0.0;
    double amp_exponent = 0.0;
    double diameter = 0.0;
    double diameter_bound = 0.0;  // n_K^-10 or the override
    bool diameter_overridden = false;
    bool diameter_ok = false;
    double drift = 0.0;
    bool family_sampled = false;
    std::size_t family_size = 0;
    std::vector<MeasureEntry> measures;
    bool ok = false;
    std::string failure;
};

struct InductionResult {
    PotentialFamily family;
    InductionCertificate cert;
};

// Block + staircase stage with the drift / diameter / measure certificate.
// `hypotheses` supplies (lambda, delta) pairs to check the measure bound for.
inline InductionResult lemma_induction(
    const PotentialFamily& W, const InductionParams& p,
    const std::vector<std::pair<double, double>>& hypotheses = {}) {
    std::int64_t n_k = W.period();
    if (n_k < 2)
        throw std::invalid_argument("lemma_induction: need n_k >= 2");
    std::int64_t m = static_cast<std::int64_t>(W.count());
    std::int64_t q = p.n_K / n_k;
    std::int64_t r = p.r > 0 ? p.r : q / m;
    if (r < 2) throw std::invalid_argument("lemma_induction: need r >= 2");

    PeriodicPotential base = build_block_potential(W.members(), p);
    StaircaseResult stair = build_staircase_family(W.members(), base, p);

    InductionCertificate cert;
    cert.n_k = n_k;
    cert.n_K = p.n_K;
    cert.m = m;
    cert.r = r;
    cert.amp = stair.amp;
    cert.amp_exponent = p.amp_exponent;
    cert.family_sampled = stair.sampled;
    cert.family_size = stair.family.count();
    cert.diameter = family_diameter(stair.family);
    cert.diameter_overridden = p.amp_exponent != 20.0;
    cert.diameter_bound =
        cert.diameter_overridden
            ? stair.amp * static_cast<double>(r - 1) + 1e-15
            : std::pow(static_cast<double>(p.n_K), -10.0);
    cert.diameter_ok = cert.diameter <= cert.diameter_bound;

    auto lambdas = lambda_grid(p.M, p.lambda_points, p.both_signs);
    GridSpec grid = GridSpec::window_for(base.sup_norm() + 1.0, p.M,
                                         p.grid_step);
    double drift = 0.0;
    for (double lam : lambdas)
        drift = std::max(drift,
                         family_drift(stair.family, W, lam, grid, p.threads));
    cert.drift = drift;

    for (auto [lam, delta] : hypotheses) {
        MeasureEntry e;
        e.lambda = lam;
        e.delta = delta;
        e.min_grid_lyap = family_min_lyap(W, lam, grid, p.threads);
        e.hypothesis_certified =
            e.min_grid_lyap >=
            delta * static_cast<double>(m) * static_cast<double>(n_k);
        e.norm_target_log = delta * static_cast<double>(m) *
                            static_cast<double>(r - 1) *
                            static_cast<double>(n_k) *
                            static_cast<double>(n_k);
        e.bound = 4.0 * kPi * static_cast<double>(p.n_K) *
                  std::exp(-e.norm_target_log);
        // Spectra are computed once per member and reused for the measure,
        // the component count, and the norm certification.
        std::vector<SpectrumDescription> specs;
        specs.reserve(stair.family.count());
        for (const auto& member : stair.family.members())
            specs.push_back(compute_bands(member, lam));
        for (const auto& s : specs) {
            e.member_measures.push_back(s.measure);
            e.member_log_measures.push_back(s.log_measure);
            e.worst_measure = std::max(e.worst_measure, s.measure);
            e.worst_components = std::max(e.worst_components,
                                          s.component_count);
        }
        if (!e.hypothesis_certified) {
            cert.measures.push_back(e);
            continue;  // bound not applicable
        }
        e.applicable = true;
        e.pass = true;
        double min_norm_log = std::numeric_limits<double>::infinity();
        NormBoundOptions nopt;
        nopt.samples_per_band = 2;
        nopt.site_stride = n_k;
        nopt.k_max = (r - 1) * n_k;
        for (std::size_t i = 0; i < stair.family.count(); ++i) {
            NormMeasureReport nm = verify_norm_measure_bound(
                stair.family.member(i), lam,
                std::exp(std::min(e.norm_target_log, 650.0)), nopt, {},
                &specs[i]);
            min_norm_log = std::min(min_norm_log, nm.certified_log_c);
            if (nm.measured > e.bound) e.pass = false;
        }
        e.norm_certified_log = min_norm_log;
        cert.measures.push_back(e);
    }

    cert.ok = cert.diameter_ok;
    for (const auto& e : cert.measures)
        if (e.applicable && !e.pass) cert.ok = false;
    if (!cert.diameter_ok) cert.failure = "family diameter above bound";
    for (const auto& e : cert.measures)
        if (e.applicable && !e.pass)
            cert.failure = "measured spectrum above the norm bound";
    return {stair.family, cert};
}

// --- joining and iteration -------------------------------------------------------

struct JoiningOptions {
    double amp_exponent = 20.0;
    std::int64_t max_family = 8;  // t-enumeration sample size per stage
    std::int64_t N2_cap = 4096;   // shifts are cheap: spectra just translate
    double grid_step = 1e-2;
    int lambda_points = 3;
    bool both_signs = true;
    std::int64_t max_period = 1 << 14;
    // New-ball radius floor. The literal choice (family diameter) starves the
    // next stage: its constant shifts need room of order 4*pi*M/n. 0 keeps
    // the literal diameter-based radius.
    double min_radius = 0.0;
    std::int64_t min_r = 2;  // least per-member repetition count
    // Measure-transfer target; 0 = 1/M. Overrides are recorded.
    double measure_target = 0.0;
    // Cap on the number of cover members carried into the block induction;
    // 0 = all. The induction period grows like min_r * members * period, so
    // an uncapped cover pushes later stages past max_period. Sampling is
    // deterministic (even stride) and recorded in the certificate.
    std::int64_t max_blocks = 0;
    // Exponent-drift target; 0 = 1/M. At small periods the constant shifts
    // (span 4*pi*M/n) move spectra too far for the literal target.
    double drift_target = 0.0;
    // Couplings whose delta-hypothesis / measure bound is certified.
    std::vector<double> hypothesis_lambdas = {1.0};
    int threads = 1;
};

struct JoiningCertificate {
    StartReport start;
    InductionCertificate induction;
    double delta = 0.0;          // certified exponent floor (half grid min)
    double drift = 0.0;          // |L(W') - L(W)| on the window grid
    double drift_target = 0.0;   // 1/M or the recorded override
    bool drift_target_overridden = false;
    bool drift_ok = false;       // < target
    // The exponent floor is certified for the covering (pre-staircase)
    // family; the staircase members only separate their spectra — and so
    // restore a positive average on them — asymptotically. The staircase
    // family's own grid minimum is recorded for inspection.
    bool lyap_ok = false;        // floor delta certified for the start family
    double final_family_min_lyap = 0.0;
    bool blocks_sampled = false;     // cover subsampled before induction
    std::int64_t full_block_count = 0;  // cover size before the cap
    double ball_radius = 0.0;
    double tight_radius = 0.0;   // diameter-based radius (measure transfer)
    bool radius_overridden = false;  // floor above the family diameter
    bool containment_ok = false; // closure of ball' inside ball
    double center_measure = 0.0; // spectrum measure of the new center, lam=1
    double center_log_measure = 0.0;  // log-scale measure of the new center
    double transfer_bound = 0.0; // measure bound over the whole new ball
    double measure_target = 0.0; // 1/M or the recorded override
    bool measure_target_overridden = false;
    bool measure_ok = false;     // transfer bound <= target
    bool ok = false;
    std::string failure;
};

struct JoiningResult {
    Ball ball;
    PotentialFamily family;
    double delta = 0.0;
    JoiningCertificate cert;
};

// One full stage: gap opening, exponent floor, block/staircase refinement,
// and the Lipschitz transfer of the measure bound to the new ball.
inline JoiningResult lemma_joining(const PotentialFamily& W, const Ball& ball,
                                   double M, const JoiningOptions& opt = {}) {
    JoiningCertificate cert;
    std::int64_t n_k = W.period();

    // Start period: the shift span 4 pi M / n must fit inside half the ball.
    std::int64_t n_start = std::max<std::int64_t>(2 * n_k, 2);
    while (static_cast<double>(n_start) < 8.0 * kPi * M / ball.radius ||
           n_start == n_k)
        n_start *= 2;
    StartParams sp;
    sp.M = M;
    sp.n_K = n_start;
    sp.N2_cap = opt.N2_cap;
    sp.grid_step = opt.grid_step;
    sp.lambda_points = opt.lambda_points;
    sp.both_signs = opt.both_signs;
    sp.threads = opt.threads;
    StartResult start = lemma_start(W, ball, sp);
    cert.start = start.report;
    if (!start.report.ok) {
        cert.failure = "start stage: " + start.report.failure;
        return {ball, W, 0.0, cert};
    }

    // Desk-scale cap: carry at most max_blocks cover members into the block
    // induction (even-stride selection keeps the first and last member). The
    // coverage certificate above was established on the full cover.
    PotentialFamily blocks = start.family;
    cert.full_block_count = static_cast<std::int64_t>(start.family.count());
    if (opt.max_blocks > 0 &&
        cert.full_block_count > opt.max_blocks) {
        std::vector<PeriodicPotential> picked;
        picked.reserve(static_cast<std::size_t>(opt.max_blocks));
        std::size_t nfull = start.family.count();
        std::size_t keep = static_cast<std::size_t>(opt.max_blocks);
        for (std::size_t i = 0; i < keep; ++i) {
            std::size_t idx = (i * (nfull - 1)) / (keep - 1 ? keep - 1 : 1);
            picked.push_back(start.family.member(idx));
        }
        blocks = PotentialFamily(std::move(picked));
        cert.blocks_sampled = true;
    }

    auto lambdas = lambda_grid(M, opt.lambda_points, opt.both_signs);
    // Same grid as the start stage, so its coverage guarantee applies here.
    GridSpec grid = GridSpec::window_for(W.members()[0].sup_norm() + 4.0, M,
                                         opt.grid_step);
    double grid_min = std::numeric_limits<double>::infinity();
    for (double lam : lambdas)
        grid_min = std::min(grid_min, family_min_lyap(start.family, lam, grid,
                                                      opt.threads));
    double delta = grid_min / 2.0;
    cert.delta = delta;
    if (!(delta > 0.0)) {
        cert.failure = "exponent floor is zero on the grid";
        return {ball, W, 0.0, cert};
    }

    // Induction period: at least min_r blocks per member, capped for desk
    // scale.
    std::int64_t nt = blocks.period();
    std::int64_t mt = static_cast<std::int64_t>(blocks.count());
    std::int64_t n_ind = nt;
    while (n_ind < std::max<std::int64_t>(opt.min_r, 2) * mt * nt) n_ind *= 2;
    if (n_ind > opt.max_period) {
        cert.failure = "induction period above the configured cap";
        return {ball, W, 0.0, cert};
    }
    InductionParams ip;
    ip.n_K = n_ind;
    ip.amp_exponent = opt.amp_exponent;
    // The measure transfer below pays 4 * components * M * amp * (r-1), and
    // the component count grows with the period; a fixed amplitude exponent
    // therefore stops certifying once the period is large. Deepen the
    // exponent whenever r^-amp_exponent exceeds the amplitude that keeps the
    // Lipschitz term within half the measure target (components <= n_ind).
    {
        std::int64_t q = n_ind / nt;
        std::int64_t r = q / mt;
        double target = opt.measure_target > 0.0 ? opt.measure_target : 1.0 / M;
        double amp_req = target /
                         (8.0 * M * static_cast<double>(n_ind) *
                          std::max(static_cast<double>(r - 1), 1.0));
        double need = std::ceil(std::log(1.0 / amp_req) /
                                std::log(static_cast<double>(r)));
        if (need > ip.amp_exponent) ip.amp_exponent = need;
    }
    ip.max_family = opt.max_family;
    ip.grid_step = opt.grid_step;
    ip.lambda_points = opt.lambda_points;
    ip.both_signs = opt.both_signs;
    ip.M = M;
    ip.threads = opt.threads;
    double delta_ind = delta / (static_cast<double>(mt) *
                                static_cast<double>(nt));
    std::vector<std::pair<double, double>> hyps;
    for (double lam : opt.hypothesis_lambdas) hyps.emplace_back(lam, delta_ind);
    // The new-ball center is selected by measure at coupling 1; make sure the
    // induction stage records per-member spectra there.
    bool has_one = false;
    for (const auto& [lam, d] : hyps) has_one = has_one || lam == 1.0;
    if (!has_one) hyps.emplace_back(1.0, delta_ind);
    InductionResult ind = lemma_induction(blocks, ip, hyps);
    cert.induction = ind.cert;
    if (!ind.cert.ok) {
        cert.failure = "induction stage: " + ind.cert.failure;
        return {ball, W, 0.0, cert};
    }

    // New ball around the member with the smallest spectrum at lambda = 1,
    // reusing the spectra recorded by the induction stage.
    const MeasureEntry* entry_one = nullptr;
    for (const auto& e : ind.cert.measures)
        if (e.lambda == 1.0) entry_one = &e;
    std::size_t best = 0;
    double best_log = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < entry_one->member_log_measures.size(); ++i) {
        if (entry_one->member_log_measures[i] < best_log) {
            best_log = entry_one->member_log_measures[i];
            best = i;
        }
    }
    cert.center_measure = entry_one->member_measures[best];
    cert.center_log_measure = best_log;
    cert.tight_radius = std::max(ind.cert.diameter * 2.0, 1e-12);
    double radius = cert.tight_radius;
    if (opt.min_radius > radius) {
        radius = opt.min_radius;
        cert.radius_overridden = true;
    }
    Ball ball_prime(ind.family.member(best), radius);
    cert.ball_radius = radius;
    double center_dist = sup_distance(ball.center, ball_prime.center);
    cert.containment_ok = center_dist + radius < ball.radius;

    double drift = 0.0;
    GridSpec mgrid{-M, M, opt.grid_step};
    for (double lam : lambdas)
        drift = std::max(drift,
                         family_drift(ind.family, W, lam, mgrid, opt.threads));
    cert.drift = drift;
    cert.drift_target = opt.drift_target > 0.0 ? opt.drift_target : 1.0 / M;
    cert.drift_target_overridden = opt.drift_target > 0.0;
    cert.drift_ok = drift < cert.drift_target;
    double min_l = std::numeric_limits<double>::infinity();
    for (double lam : lambdas)
        min_l = std::min(min_l, family_min_lyap(ind.family, lam, grid,
                                                opt.threads));
    cert.final_family_min_lyap = min_l;
    cert.lyap_ok = delta > 0.0;

    // Lipschitz transfer: every w in the new ball has spectrum inside an
    // M*radius neighborhood of the center's spectrum.
    double worst = 0.0;
    std::int64_t worst_components = 0;
    for (const auto& e : ind.cert.measures) {
        worst = std::max(worst, e.worst_measure);
        worst_components = std::max(worst_components, e.worst_components);
    }
    // The transfer uses the literal diameter-based ball; the returned ball
    // may be inflated for the next stage and is recorded separately.
    cert.transfer_bound = worst + 2.0 * static_cast<double>(worst_components) *
                                      M * cert.tight_radius;
    cert.measure_target = opt.measure_target > 0.0 ? opt.measure_target
                                                   : 1.0 / M;
    cert.measure_target_overridden = opt.measure_target > 0.0;
    cert.measure_ok = cert.transfer_bound <= cert.measure_target;

    cert.ok = cert.containment_ok && cert.drift_ok && cert.lyap_ok &&
              cert.measure_ok;
    if (!cert.containment_ok) cert.failure = "new ball escapes the old one";
    else if (!cert.drift_ok) cert.failure = "exponent drift above 1/M";
    else if (!cert.lyap_ok) cert.failure = "exponent floor not maintained";
    else if (!cert.measure_ok) cert.failure = "measure transfer above 1/M";
    return {ball_prime, ind.family, delta, cert};
}

struct StageCertificate {
    int stage = 0;
    Ball ball;
    PotentialFamily family;
    double delta = 0.0;
    double eps = 0.0;
    double M = 1.0;
    double measure = 0.0;       // spectrum measure of the ball center, lam=1
    double log_measure = 0.0;   // log-scale measure of the ball center
    double measure_bound = 0.0; // transfer bound from the joining certificate
    double lyap_drift = 0.0;
    double lyap_floor = 0.0;
    JoiningCertificate joining;
};

struct IterateOptions {
    double M_cap = 2.0;  // desk-scale cap on the per-stage coupling window
    // Stage-ball radius schedule: stage i gets first_radius/radius_shrink^(i-1)
    // as its radius floor, so later stages keep room for their shifts.
    double first_radius = 8.0;
    double radius_shrink = 3.0;
    JoiningOptions joining;
};

struct IterateResult {
    std::vector<StageCertificate> stages;
    PeriodicPotential w_infinity;
    double w_infinity_error = 0.0;
    bool ok = false;
    std::string failure;
};

// Nested-ball iteration: each stage runs one joining step at coupling window
// M_i = min(1/eps_i, M_cap) and tightens eps by the delta it certifies.
inline IterateResult iterate_scheme(const Ball& B0, const PotentialFamily& W0,
                                    double eps1, int depth,
                                    const IterateOptions& opt = {}) {
    if (depth < 1) throw std::invalid_argument("iterate_scheme: depth < 1");
    if (!(eps1 > 0.0)) throw std::invalid_argument("iterate_scheme: eps1 <= 0");
    IterateResult out{.stages = {},
                      .w_infinity = B0.center,
                      .w_infinity_error = B0.radius,
                      .ok = false,
                      .failure = ""};
    Ball ball = B0;
    PotentialFamily W = W0;
    double eps = eps1;
    double floor_radius = opt.first_radius;
    for (int i = 1; i <= depth; ++i) {
        double M = std::min(1.0 / eps, opt.M_cap);
        if (M < 1.0) M = 1.0;
        JoiningOptions jopt = opt.joining;
        if (jopt.min_radius == 0.0 && opt.first_radius > 0.0)
            jopt.min_radius = floor_radius;
        JoiningResult jr = lemma_joining(W, ball, M, jopt);
        if (!jr.cert.ok) {
            out.failure = "stage " + std::to_string(i) + ": " +
                          jr.cert.failure;
            return out;
        }
        StageCertificate sc{.stage = i,
                            .ball = jr.ball,
                            .family = jr.family,
                            .delta = jr.delta,
                            .eps = eps,
                            .M = M,
                            .measure = jr.cert.center_measure,
                            .log_measure = jr.cert.center_log_measure,
                            .measure_bound = jr.cert.transfer_bound,
                            .lyap_drift = jr.cert.drift,
                            .lyap_floor = jr.delta,
                            .joining = jr.cert};
        out.stages.push_back(sc);
        ball = jr.ball;
        W = jr.family;
        eps = std::min(eps, jr.delta) / 10.0;
        floor_radius /= opt.radius_shrink;
        out.w_infinity = ball.center;
        out.w_infinity_error = ball.radius;
    }
    out.ok = true;
    return out;
}

}  // namespace speclab
