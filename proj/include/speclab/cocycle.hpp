// 2x2 transfer-matrix machinery: step matrices, n-step products with
// log-norm renormalization, monodromy, Lyapunov exponents, singular
// directions and the argument-derivative probe.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>

#include "speclab/odometer.hpp"

namespace speclab {

inline constexpr double kPi = 3.14159265358979323846;

struct Mat2 {
    double a = 1.0, b = 0.0, c = 0.0, d = 1.0;  // row-major [[a,b],[c,d]]

    static Mat2 identity() { return Mat2{}; }

    double det() const { return a * d - b * c; }
    double trace() const { return a + d; }
    double frobenius_sq() const { return a * a + b * b + c * c + d * d; }

    // Operator norm (largest singular value).
    double op_norm() const {
        double f = frobenius_sq();
        double dt = det();
        double disc = f * f - 4.0 * dt * dt;
        if (disc < 0.0) disc = 0.0;
        return std::sqrt(0.5 * (f + std::sqrt(disc)));
    }

    Mat2 operator*(const Mat2& o) const {
        return Mat2{a * o.a + b * o.c, a * o.b + b * o.d,
                    c * o.a + d * o.c, c * o.b + d * o.d};
    }
    Mat2 operator*(double s) const { return Mat2{a * s, b * s, c * s, d * s}; }

    void apply(double x, double y, double& ox, double& oy) const {
        ox = a * x + b * y;
        oy = c * x + d * y;
    }
};

inline double max_entry_diff(const Mat2& m, const Mat2& n) {
    double e = std::abs(m.a - n.a);
    e = std::max(e, std::abs(m.b - n.b));
    e = std::max(e, std::abs(m.c - n.c));
    e = std::max(e, std::abs(m.d - n.d));
    return e;
}

// Product stored as exp(log_scale) * unit with ||unit||_F kept near sqrt(2).
struct ScaledMat2 {
    Mat2 unit;
    double log_scale = 0.0;

    double log_op_norm() const { return log_scale + std::log(unit.op_norm()); }
    double log_abs_trace() const {
        double t = std::abs(unit.trace());
        return t == 0.0 ? -std::numeric_limits<double>::infinity()
                        : log_scale + std::log(t);
    }
    // Collapses to a plain matrix; overflows for very long hyperbolic products.
    Mat2 collapse() const { return unit * std::exp(log_scale); }
};

inline Mat2 step_matrix(double E, double vval) {
    return Mat2{E - vval, -1.0, 1.0, 0.0};
}

namespace detail {
inline void renormalize(Mat2& m, double& log_scale) {
    double f = std::sqrt(m.frobenius_sq() / 2.0);
    if (f > 0.0 && std::isfinite(f)) {
        double inv = 1.0 / f;
        m.a *= inv; m.b *= inv; m.c *= inv; m.d *= inv;
        log_scale += std::log(f);
    }
}
}  // namespace detail

// n-step product S_{n-1}...S_0 with the potential read at sites x, x+1, ...
// Rescaled every 32 steps so arbitrarily long hyperbolic products stay
// representable.
inline ScaledMat2 transfer_scaled(double E, const PeriodicPotential& v,
                                  std::int64_t n, std::int64_t x = 0) {
    if (n < 0) throw std::invalid_argument("transfer: negative step count");
    ScaledMat2 r;
    std::int64_t period = v.period();
    std::int64_t site = x % period;
    if (site < 0) site += period;
    const auto& vals = v.values();
    for (std::int64_t i = 0; i < n; ++i) {
        r.unit = step_matrix(E, vals[static_cast<std::size_t>(site)]) * r.unit;
        if (++site == period) site = 0;
        if ((i & 31) == 31) detail::renormalize(r.unit, r.log_scale);
    }
    detail::renormalize(r.unit, r.log_scale);
    return r;
}

inline Mat2 transfer(double E, const PeriodicPotential& v, std::int64_t n,
                     std::int64_t x = 0) {
    return transfer_scaled(E, v, n, x).collapse();
}

inline double transfer_log_norm(double E, const PeriodicPotential& v,
                                std::int64_t n, std::int64_t x = 0) {
    return transfer_scaled(E, v, n, x).log_op_norm();
}

inline ScaledMat2 monodromy_scaled(double E, const PeriodicPotential& v,
                                   std::int64_t x = 0) {
    return transfer_scaled(E, v, v.period(), x);
}

inline Mat2 monodromy(double E, const PeriodicPotential& v,
                      std::int64_t x = 0) {
    return monodromy_scaled(E, v, x).collapse();
}

// Lyapunov exponent of a periodic potential: (1/n) log of the spectral
// radius of the monodromy, read off the trace. Zero in the elliptic regime
// |tr| <= 2.
inline double lyapunov_periodic(double E, const PeriodicPotential& v) {
    ScaledMat2 m = monodromy_scaled(E, v);
    double lt = m.log_abs_trace();  // log |psi(E)|
    static const double kLog2 = std::log(2.0);
    if (lt <= kLog2) {
        return 0.0;
    }
    // (1/n) log((|t| + sqrt(t^2-4))/2), evaluated in the log domain.
    double ratio = 4.0 * std::exp(-2.0 * lt);  // 4/t^2, in (0,1)
    double s = std::sqrt(std::max(0.0, 1.0 - ratio));
    double L = (lt - kLog2 + std::log1p(s)) / static_cast<double>(v.period());
    return std::max(0.0, L);
}

// Multiplicity-weighted family mean L(E, lambda W).
inline double lyapunov_family(double E, double lambda,
                              const PotentialFamily& W) {
    double s = 0.0;
    for (const auto& w : W.members()) s += lyapunov_periodic(E, w.scaled(lambda));
    return s / static_cast<double>(W.count());
}

// (1/2^k) * site-average of log||A_{2^k}(x)||. With samples >= period the
// average runs over the whole quotient (exact Haar), which makes the
// sequence in k genuinely non-increasing.
inline double subadditive_average(double E, const PeriodicPotential& v, int k,
                                  std::int64_t samples) {
    if (k < 0) throw std::invalid_argument("subadditive_average: k < 0");
    if (samples < 1) throw std::invalid_argument("subadditive_average: samples < 1");
    std::int64_t steps = std::int64_t{1} << k;
    std::int64_t S = std::min<std::int64_t>(samples, v.period());
    double acc = 0.0;
    for (std::int64_t i = 0; i < S; ++i) {
        std::int64_t x = i * v.period() / S;
        acc += transfer_log_norm(E, v, steps, x);
    }
    return acc / (static_cast<double>(S) * static_cast<double>(steps));
}

// Projective direction on RP^1, angle in [0, pi).
struct Direction {
    double angle = 0.0;

    Direction() = default;
    explicit Direction(double theta) {
        angle = std::fmod(theta, kPi);
        if (angle < 0.0) angle += kPi;
    }
    static Direction of_vector(double x, double y) {
        return Direction(std::atan2(y, x));
    }
    double vx() const { return std::cos(angle); }
    double vy() const { return std::sin(angle); }
};

// Projective angle between two directions, in [0, pi/2].
inline double direction_angle(const Direction& p, const Direction& q) {
    double d = std::abs(p.angle - q.angle);
    d = std::fmod(d, kPi);
    return std::min(d, kPi - d);
}

namespace detail {
// Argument of A_n(E) z, continuous branch not needed: callers difference
// nearby values and wrap.
inline double transfer_argument(double E, const PeriodicPotential& v,
                                std::int64_t n, double zx, double zy) {
    ScaledMat2 m = transfer_scaled(E, v, n, 0);
    double ox, oy;
    m.unit.apply(zx, zy, ox, oy);
    return std::atan2(oy, ox);
}
inline double wrap_pm_pi(double a) {
    while (a > kPi) a -= 2.0 * kPi;
    while (a < -kPi) a += 2.0 * kPi;
    return a;
}
inline double central_arg_diff(double E, const PeriodicPotential& v,
                               std::int64_t n, double zx, double zy, double h) {
    double ap = transfer_argument(E + h, v, n, zx, zy);
    double am = transfer_argument(E - h, v, n, zx, zy);
    return wrap_pm_pi(ap - am) / (2.0 * h);
}
}  // namespace detail

// Finite-difference d/dE of the argument of A_n(E) z. Falls back to a
// Richardson extrapolation when the h and h/2 estimates disagree by more
// than 10%.
inline double argument_derivative(double E, const PeriodicPotential& v,
                                  std::int64_t n, const Direction& z,
                                  double h = 1e-6) {
    if (n < 0) throw std::invalid_argument("argument_derivative: n < 0");
    double zx = z.vx(), zy = z.vy();
    double d1 = detail::central_arg_diff(E, v, n, zx, zy, h);
    double d2 = detail::central_arg_diff(E, v, n, zx, zy, h / 2.0);
    double scale = std::max({std::abs(d1), std::abs(d2), 1e-300});
    if (std::abs(d1 - d2) > 0.1 * scale) return (4.0 * d2 - d1) / 3.0;
    return d2;
}

struct SingularDecomposition {
    Direction contracted;  // most contracted input direction s
    Direction expanded_image;  // image u of the most expanded input direction
    double sigma = 1.0;  // ||M|| (largest singular value)
    bool degenerate = false;  // conformal matrix: directions undefined
};

// Singular directions of an SL(2,R) matrix. sigma within 1e-12 of 1 is
// reported as degenerate with both angles zero.
inline SingularDecomposition singular_directions(const Mat2& M) {
    if (!std::isfinite(M.frobenius_sq()))
        throw std::domain_error("singular_directions: non-finite matrix");
    // Eigen-decompose M^T M.
    double p = M.a * M.a + M.c * M.c;
    double q = M.b * M.b + M.d * M.d;
    double r = M.a * M.b + M.c * M.d;
    double mean = 0.5 * (p + q);
    double disc = std::sqrt(0.25 * (p - q) * (p - q) + r * r);
    double lam_max = mean + disc;
    SingularDecomposition out;
    out.sigma = std::sqrt(std::max(lam_max, 0.0));
    if (out.sigma <= 1.0 + 1e-12) {
        out.degenerate = true;
        return out;
    }
    // Eigenvector of M^T M for lam_max = most expanded input direction.
    double ex, ey;
    if (std::abs(lam_max - q) >= std::abs(lam_max - p)) {
        ex = lam_max - q;
        ey = r;
    } else {
        ex = r;
        ey = lam_max - p;
    }
    // Contracted direction is orthogonal (symmetric matrix).
    out.contracted = Direction::of_vector(-ey, ex);
    double ux, uy;
    M.apply(ex, ey, ux, uy);
    out.expanded_image = Direction::of_vector(ux, uy);
    return out;
}

}  // namespace speclab
