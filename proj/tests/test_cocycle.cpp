#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "speclab/cocycle.hpp"
#include "speclab/rng.hpp"

using namespace speclab;

namespace {

PeriodicPotential random_potential(SplitMix64& rng, std::int64_t period,
                                   double amp = 2.0) {
    std::vector<double> vals(static_cast<std::size_t>(period));
    for (auto& v : vals) v = rng.uniform(-amp, amp);
    return PeriodicPotential(std::move(vals));
}

Mat2 random_sl2(SplitMix64& rng) {
    double a = rng.uniform(0.3, 3.0) * (rng.below(2) ? 1.0 : -1.0);
    double b = rng.uniform(-2.0, 2.0);
    double c = rng.uniform(-2.0, 2.0);
    return Mat2{a, b, c, (1.0 + b * c) / a};
}

}  // namespace

TEST_CASE("step matrix") {
    Mat2 s = step_matrix(0.0, 0.0);
    CHECK(s.a == 0.0);
    CHECK(s.b == -1.0);
    CHECK(s.c == 1.0);
    CHECK(s.d == 0.0);
    Mat2 t = step_matrix(3.0, 1.0);
    CHECK(t.a == 2.0);
    SplitMix64 rng(1);
    for (int i = 0; i < 1000; ++i)
        CHECK(step_matrix(rng.uniform(-10, 10), rng.uniform(-10, 10)).det() ==
              1.0);
}

TEST_CASE("transfer basics") {
    PeriodicPotential zero = PeriodicPotential::zero();
    CHECK(max_entry_diff(transfer(1.7, zero, 0), Mat2::identity()) == 0.0);
    // Free E=0: the step matrix is a quarter rotation, so two steps give -id.
    CHECK(max_entry_diff(transfer(0.0, zero, 2), Mat2{-1, 0, 0, -1}) <= 1e-15);
    // Direct two-matrix product oracle.
    PeriodicPotential v({1.0, 0.0});
    Mat2 m = transfer(2.0, v, 2, 0);
    Mat2 oracle = step_matrix(2.0, 0.0) * step_matrix(2.0, 1.0);
    CHECK(max_entry_diff(m, oracle) <= 1e-12);
    CHECK(oracle.a == 1.0);
    CHECK(oracle.b == -2.0);
    CHECK(oracle.c == 1.0);
    CHECK(oracle.d == -1.0);
}

TEST_CASE("cocycle law") {
    SplitMix64 rng(2);
    for (int rep = 0; rep < 100; ++rep) {
        auto v = random_potential(rng, 1 + static_cast<std::int64_t>(rng.below(6)));
        double E = rng.uniform(-3, 3);
        std::int64_t n = static_cast<std::int64_t>(rng.below(65));
        std::int64_t m = static_cast<std::int64_t>(rng.below(65));
        std::int64_t x = static_cast<std::int64_t>(rng.below(7)) - 3;
        Mat2 lhs = transfer(E, v, n + m, x);
        Mat2 rhs = transfer(E, v, m, x + n) * transfer(E, v, n, x);
        double tol = 1e-9 * (1.0 + lhs.op_norm());
        CHECK(max_entry_diff(lhs, rhs) <= tol);
    }
}

TEST_CASE("determinant stays one under renormalization") {
    SplitMix64 rng(3);
    int checked = 0;
    for (std::int64_t n : {64, 256, 1024}) {
        for (int rep = 0; rep < 40; ++rep) {
            // Small coupling and low energy keep most samples elliptic.
            auto v = random_potential(rng, 4, 0.3);
            double E = rng.uniform(-1.5, 1.5);
            ScaledMat2 s = transfer_scaled(E, v, n);
            // The determinant check is only meaningful while the product
            // stays bounded: for strongly hyperbolic products the smallest
            // singular value falls below the float resolution of the
            // largest one.
            if (s.log_scale < 5.0) {
                CHECK(std::abs(s.collapse().det() - 1.0) <=
                      1e-9 * static_cast<double>(n));
                ++checked;
            }
        }
    }
    CHECK(checked >= 20);
}

TEST_CASE("monodromy trace") {
    PeriodicPotential zero = PeriodicPotential::zero();
    for (double E : {-1.5, 0.0, 2.5}) {
        Mat2 m = monodromy(E, zero);
        CHECK(m.a == doctest::Approx(E));
        CHECK(m.trace() == doctest::Approx(E));
    }
    SplitMix64 rng(4);
    for (int rep = 0; rep < 100; ++rep) {
        double v0 = rng.uniform(-2, 2), v1 = rng.uniform(-2, 2);
        double E = rng.uniform(-4, 4);
        PeriodicPotential v({v0, v1});
        CHECK(monodromy(E, v).trace() ==
              doctest::Approx((E - v0) * (E - v1) - 2.0).epsilon(1e-12));
    }
}

TEST_CASE("monodromy trace is rotation invariant") {
    SplitMix64 rng(5);
    for (int rep = 0; rep < 1000; ++rep) {
        auto v = random_potential(rng, 1 + static_cast<std::int64_t>(rng.below(6)));
        double E = rng.uniform(-4, 4);
        std::int64_t k = static_cast<std::int64_t>(rng.below(6));
        CHECK(std::abs(monodromy(E, v).trace() -
                       monodromy(E, v.rotated(k)).trace()) <= 1e-9);
    }
}

TEST_CASE("lyapunov exponent of a periodic potential") {
    PeriodicPotential zero = PeriodicPotential::zero();
    CHECK(lyapunov_periodic(1.0, zero) == 0.0);
    // Eigenvalue of [[3,-1],[1,0]] is (3+sqrt(5))/2.
    CHECK(lyapunov_periodic(3.0, zero) ==
          doctest::Approx(std::log((3.0 + std::sqrt(5.0)) / 2.0))
              .epsilon(1e-12));
    // Cyclic shift leaves the value unchanged.
    SplitMix64 rng(6);
    for (int rep = 0; rep < 100; ++rep) {
        auto v = random_potential(rng, 4);
        double E = rng.uniform(-5, 5);
        CHECK(lyapunov_periodic(E, v) ==
              doctest::Approx(lyapunov_periodic(E, v.rotated(1)))
                  .epsilon(1e-10));
    }
}

TEST_CASE("lyapunov >= 1 outside the coupling window") {
    SplitMix64 rng(7);
    for (int rep = 0; rep < 50; ++rep) {
        auto v = random_potential(rng, 4);
        double lambda = rng.uniform(0.2, 2.0);
        auto w = v.scaled(lambda);
        for (double sgn : {-1.0, 1.0}) {
            for (double extra : {0.0, 0.5, 2.0}) {
                double E = sgn * (w.sup_norm() + 4.0 + extra);
                CHECK(lyapunov_periodic(E, w) >= 1.0);
            }
        }
    }
}

TEST_CASE("family lyapunov is a multiplicity-weighted mean") {
    PeriodicPotential zero = PeriodicPotential::zero();
    PotentialFamily single({zero});
    PotentialFamily doubled({zero, zero});
    double L = lyapunov_periodic(3.0, zero);
    CHECK(lyapunov_family(3.0, 1.0, single) == doctest::Approx(L));
    CHECK(lyapunov_family(3.0, 1.0, doubled) == doctest::Approx(L));
    // Shifted copy of the same sequence.
    PotentialFamily shifted({zero, embed(zero, 2).rotated(1)});
    CHECK(lyapunov_family(3.0, 1.0, shifted) ==
          doctest::Approx(std::log((3.0 + std::sqrt(5.0)) / 2.0))
              .epsilon(1e-12));
}

TEST_CASE("subadditive averages decrease to the lyapunov exponent") {
    PeriodicPotential zero = PeriodicPotential::zero();
    CHECK(subadditive_average(0.0, zero, 3, 1) == doctest::Approx(0.0));
    CHECK(subadditive_average(3.0, zero, 6, 1) ==
          doctest::Approx(std::log((3.0 + std::sqrt(5.0)) / 2.0))
              .epsilon(0.05));
    SplitMix64 rng(8);
    for (int rep = 0; rep < 100; ++rep) {
        auto v = random_potential(rng, 4);
        double E = rng.uniform(-4, 4);
        double prev = subadditive_average(E, v, 2, 4);
        for (int k = 3; k <= 8; ++k) {
            double cur = subadditive_average(E, v, k, 4);
            CHECK(cur <= prev + 1e-9);
            prev = cur;
        }
        CHECK(prev >= lyapunov_periodic(E, v) - 1e-9);
        CHECK(std::abs(subadditive_average(E, v, 8, 4) -
                       lyapunov_periodic(E, v)) <= 0.01 + 0.05);
    }
}

TEST_CASE("argument derivative is strictly negative for n >= 2") {
    PeriodicPotential zero = PeriodicPotential::zero();
    CHECK(argument_derivative(0.0, zero, 2, Direction(0.0)) < 0.0);
    // n = 1 with a vertical direction is the excluded degenerate case.
    CHECK(argument_derivative(0.0, zero, 1, Direction(kPi / 2)) ==
          doctest::Approx(0.0).epsilon(1e-6));
    SplitMix64 rng(9);
    for (int rep = 0; rep < 1000; ++rep) {
        auto v = random_potential(rng, 2);
        double E = rng.uniform(-5, 5);
        std::int64_t n = 2 + static_cast<std::int64_t>(rng.below(7));
        Direction z(rng.uniform(0, kPi));
        CHECK(argument_derivative(E, v, n, z) < 0.0);
    }
}

TEST_CASE("singular directions") {
    auto id = singular_directions(Mat2::identity());
    CHECK(id.degenerate);
    CHECK(id.sigma == doctest::Approx(1.0));
    CHECK(id.contracted.angle == 0.0);

    auto diag = singular_directions(Mat2{2.0, 0.0, 0.0, 0.5});
    CHECK(!diag.degenerate);
    CHECK(diag.sigma == doctest::Approx(2.0));
    CHECK(direction_angle(diag.contracted, Direction(kPi / 2)) <= 1e-12);
    CHECK(direction_angle(diag.expanded_image, Direction(0.0)) <= 1e-12);
}

TEST_CASE("svd reconstruction oracle") {
    SplitMix64 rng(10);
    for (int rep = 0; rep < 200; ++rep) {
        Mat2 m = random_sl2(rng);
        auto sd = singular_directions(m);
        if (sd.degenerate) continue;
        // Rebuild M from (s, u, sigma): expanded input direction is s
        // rotated by 90 degrees; the contracted image is perpendicular to u
        // with the sign fixed by det = +1.
        double ex = -sd.contracted.vy(), ey = sd.contracted.vx();
        double ux = sd.expanded_image.vx(), uy = sd.expanded_image.vy();
        double best = 1e300;
        for (double sgn : {1.0, -1.0}) {
            double wx = -sgn * uy, wy = sgn * ux;
            Mat2 rec{
                sd.sigma * ux * ex + wx * sd.contracted.vx() / sd.sigma,
                sd.sigma * ux * ey + wx * sd.contracted.vy() / sd.sigma,
                sd.sigma * uy * ex + wy * sd.contracted.vx() / sd.sigma,
                sd.sigma * uy * ey + wy * sd.contracted.vy() / sd.sigma};
            // Projective directions: the overall sign is free too.
            best = std::min({best, max_entry_diff(rec, m),
                             max_entry_diff(rec * -1.0, m)});
        }
        CHECK(best < 1e-9);
    }
}

TEST_CASE("tan-angle product identity") {
    SplitMix64 rng(12);
    for (int rep = 0; rep < 200; ++rep) {
        Mat2 b = random_sl2(rng);
        auto sd = singular_directions(b);
        if (sd.degenerate || sd.sigma < 1.1) continue;
        Direction z(rng.uniform(0, kPi));
        double theta = direction_angle(z, sd.contracted);
        if (theta < 1e-3 || theta > kPi / 2 - 1e-3) continue;
        double zx, zy;
        b.apply(z.vx(), z.vy(), zx, zy);
        double theta_p = direction_angle(Direction::of_vector(zx, zy),
                                         sd.expanded_image);
        double lhs = std::tan(theta_p) * std::tan(theta);
        double rhs = 1.0 / (sd.sigma * sd.sigma);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-7));
    }
}
