// Odometer model of a Cantor group through its tower of finite cyclic
// quotients, and the algebra of periodic potentials living on them.
#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace speclab {

// Tower of finite quotients Z/n_1 <- Z/n_2 <- ... ; each index divides
// the next one.
class GroupSchedule {
public:
    explicit GroupSchedule(std::vector<std::int64_t> indices)
        : indices_(std::move(indices)) {
        if (indices_.empty())
            throw std::invalid_argument("GroupSchedule: empty index list");
        std::int64_t prev = 0;
        for (std::size_t i = 0; i < indices_.size(); ++i) {
            if (indices_[i] < 1)
                throw std::invalid_argument("GroupSchedule: index < 1");
            if (i > 0) {
                if (indices_[i] <= prev)
                    throw std::invalid_argument("GroupSchedule: not ascending");
                if (indices_[i] % prev != 0)
                    throw std::invalid_argument(
                        "GroupSchedule: index does not divide successor");
            }
            prev = indices_[i];
        }
    }

    // Doubling tower n_k = 2^k, k = 1..depth.
    static GroupSchedule doubling(int depth) {
        std::vector<std::int64_t> idx;
        std::int64_t n = 1;
        for (int k = 1; k <= depth; ++k) {
            n *= 2;
            idx.push_back(n);
        }
        return GroupSchedule(std::move(idx));
    }

    std::size_t levels() const { return indices_.size(); }
    // Levels are 1-based, matching the tower notation.
    std::int64_t period(std::size_t level) const {
        if (level < 1 || level > indices_.size())
            throw std::out_of_range("GroupSchedule: level out of range");
        return indices_[level - 1];
    }
    const std::vector<std::int64_t>& indices() const { return indices_; }

    // Smallest level whose period is >= n and a multiple of n; throws if none.
    std::size_t level_of_multiple(std::int64_t n) const {
        for (std::size_t k = 1; k <= levels(); ++k)
            if (period(k) % n == 0) return k;
        throw std::invalid_argument("GroupSchedule: no level is a multiple");
    }

private:
    std::vector<std::int64_t> indices_;
};

// A real sequence of period n; evaluation at any integer site wraps mod n.
class PeriodicPotential {
public:
    PeriodicPotential() : values_(1, 0.0) {}
    explicit PeriodicPotential(std::vector<double> values)
        : values_(std::move(values)) {
        if (values_.empty())
            throw std::invalid_argument("PeriodicPotential: empty value list");
        for (double v : values_)
            if (!std::isfinite(v))
                throw std::invalid_argument("PeriodicPotential: non-finite entry");
    }

    static PeriodicPotential constant(double c, std::int64_t period = 1) {
        return PeriodicPotential(std::vector<double>(
            static_cast<std::size_t>(period), c));
    }
    static PeriodicPotential zero(std::int64_t period = 1) {
        return constant(0.0, period);
    }

    std::int64_t period() const {
        return static_cast<std::int64_t>(values_.size());
    }
    const std::vector<double>& values() const { return values_; }

    // Value at an arbitrary site (negative sites wrap as well).
    double at(std::int64_t site) const {
        std::int64_t n = period();
        std::int64_t r = site % n;
        if (r < 0) r += n;
        return values_[static_cast<std::size_t>(r)];
    }

    double sup_norm() const {
        double m = 0.0;
        for (double v : values_) m = std::max(m, std::abs(v));
        return m;
    }

    PeriodicPotential scaled(double lambda) const {
        std::vector<double> out(values_);
        for (double& v : out) v *= lambda;
        return PeriodicPotential(std::move(out));
    }

    PeriodicPotential shifted(double c) const {
        std::vector<double> out(values_);
        for (double& v : out) v += c;
        return PeriodicPotential(std::move(out));
    }

    // Cyclic rotation: result[i] = this[i + k].
    PeriodicPotential rotated(std::int64_t k) const {
        std::vector<double> out(values_.size());
        for (std::int64_t i = 0; i < period(); ++i)
            out[static_cast<std::size_t>(i)] = at(i + k);
        return PeriodicPotential(std::move(out));
    }

    bool operator==(const PeriodicPotential& o) const {
        return values_ == o.values_;
    }

private:
    std::vector<double> values_;
};

// Tiles v out to period N; N must be a multiple of period(v).
inline PeriodicPotential embed(const PeriodicPotential& v, std::int64_t N) {
    if (N < v.period() || N % v.period() != 0)
        throw std::invalid_argument("embed: target period not a multiple");
    std::vector<double> out(static_cast<std::size_t>(N));
    for (std::int64_t i = 0; i < N; ++i)
        out[static_cast<std::size_t>(i)] = v.at(i);
    return PeriodicPotential(std::move(out));
}

// Convolution with the level-k subgroup: averages v over each residue
// class mod n_k. The result is exactly n_k-periodic.
inline PeriodicPotential convolve_subgroup(const PeriodicPotential& v,
                                           std::int64_t nk) {
    std::int64_t nK = v.period();
    if (nk < 1 || nK % nk != 0)
        throw std::invalid_argument(
            "convolve_subgroup: subgroup period does not divide");
    std::int64_t reps = nK / nk;
    std::vector<double> out(static_cast<std::size_t>(nk), 0.0);
    for (std::int64_t i = 0; i < nk; ++i) {
        double s = 0.0;
        for (std::int64_t m = 0; m < reps; ++m) s += v.at(i + m * nk);
        out[static_cast<std::size_t>(i)] = s / static_cast<double>(reps);
    }
    return PeriodicPotential(std::move(out));
}

inline PeriodicPotential convolve_subgroup(const PeriodicPotential& v,
                                           const GroupSchedule& sched,
                                           std::size_t level) {
    std::int64_t nk = sched.period(level);
    if (v.period() % nk != 0)
        throw std::invalid_argument("convolve_subgroup: level above potential");
    return convolve_subgroup(v, nk);
}

// Sup distance over one common period; potentials of different periods are
// compared over the lcm.
inline double sup_distance(const PeriodicPotential& v,
                           const PeriodicPotential& w) {
    std::int64_t n = std::lcm(v.period(), w.period());
    double m = 0.0;
    for (std::int64_t i = 0; i < n; ++i)
        m = std::max(m, std::abs(v.at(i) - w.at(i)));
    return m;
}

// Finite multiset of potentials with a coupling-free common period
// (materialized by embedding into the lcm).
class PotentialFamily {
public:
    explicit PotentialFamily(std::vector<PeriodicPotential> members) {
        if (members.empty())
            throw std::invalid_argument("PotentialFamily: empty family");
        std::int64_t n = 1;
        for (const auto& m : members) n = std::lcm(n, m.period());
        members_.reserve(members.size());
        for (auto& m : members) members_.push_back(embed(m, n));
    }

    std::size_t count() const { return members_.size(); }
    std::int64_t period() const { return members_.front().period(); }
    const std::vector<PeriodicPotential>& members() const { return members_; }
    const PeriodicPotential& member(std::size_t i) const { return members_[i]; }

private:
    std::vector<PeriodicPotential> members_;
};

inline double family_diameter(const PotentialFamily& W) {
    double d = 0.0;
    for (std::size_t i = 0; i < W.count(); ++i)
        for (std::size_t j = i + 1; j < W.count(); ++j)
            d = std::max(d, sup_distance(W.member(i), W.member(j)));
    return d;
}

// Sup-norm ball around a periodic center.
struct Ball {
    PeriodicPotential center;
    double radius = 0.0;

    Ball(PeriodicPotential c, double r) : center(std::move(c)), radius(r) {
        if (!(r >= 0.0)) throw std::invalid_argument("Ball: negative radius");
    }
    bool contains(const PeriodicPotential& v) const {
        return sup_distance(center, v) < radius;
    }
};

// --- plain-text serialization: "n\nv0 v1 ... v{n-1}\n" ---------------------

inline std::string format_double(double x) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

inline void write_potential(std::ostream& os, const PeriodicPotential& v) {
    os << v.period() << '\n';
    const auto& vals = v.values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
        if (i) os << ' ';
        os << format_double(vals[i]);
    }
    os << '\n';
}

inline PeriodicPotential read_potential(std::istream& is) {
    std::int64_t n = 0;
    if (!(is >> n) || n < 1)
        throw std::runtime_error("read_potential: bad period line");
    std::vector<double> vals(static_cast<std::size_t>(n));
    for (auto& v : vals) {
        std::string tok;
        if (!(is >> tok))
            throw std::runtime_error("read_potential: missing value");
        double x = 0.0;
        auto res = std::from_chars(tok.data(), tok.data() + tok.size(), x);
        if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
            throw std::runtime_error("read_potential: bad value '" + tok + "'");
        v = x;
    }
    return PeriodicPotential(std::move(vals));
}

}  // namespace speclab
