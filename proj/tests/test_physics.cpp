#include "uqtse/physics.hpp"

#include "support/oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

using namespace uqtse;

using uqtse::testing::Manufactured;

TEST_SUITE("physics") {

TEST_CASE("Greenshields closed forms") {
    const PhysicsParams p(0.4, 20.0, 10.0);
    CHECK(equilibrium_speed(0.0, p) == 20.0);
    CHECK(equilibrium_speed(0.4, p) == 0.0);
    CHECK(equilibrium_speed(0.1, p) == doctest::Approx(15.0));
    CHECK(lwr_flux(0.2, p) == doctest::Approx(0.2 * 10.0));
    CHECK(arz_h(0.1, p) == doctest::Approx(20.0 - 15.0));
    CHECK(arz_h_prime(p) == doctest::Approx(50.0));
}

TEST_CASE("residuals match hand-differentiated oracles on manufactured fields") {
    const Manufactured m;
    const PhysicsParams p(0.38, 22.9, 10.0);
    for (double x : {0.0, 137.0, 512.5, 999.0})
        for (double t : {0.0, 31.0, 250.0}) {
            const auto b = m.at(x, t);
            CHECK(std::abs(lwr_residual(b, p).r1 - m.r1(x, t)) <= 1e-10);
            const auto r = arz_residual(b, p);
            CHECK(std::abs(r.r1 - m.r1(x, t)) <= 1e-10);
            CHECK(std::abs(r.r2 - m.r2(x, t, p)) <= 1e-10);
        }
}

TEST_CASE("the oracle agrees on a lattice of points and parameters") {
    CHECK(uqtse::testing::manufactured_residual_error() <= 1e-10);
    CHECK(uqtse::testing::equilibrium_residual() == 0.0);
}

TEST_CASE("equilibrium constant states have zero residual") {
    const PhysicsParams p(0.38, 22.9, 10.0);
    for (double rho : {0.0, 0.1, 0.3, 0.38}) {
        DerivativeBundle b;
        b.rho = rho;
        b.u = equilibrium_speed(rho, p);
        CHECK(lwr_residual(b, p).r1 == 0.0);
        const auto r = arz_residual(b, p);
        CHECK(r.r1 == 0.0);
        CHECK(r.r2 == 0.0);
    }
}

TEST_CASE("residual partials agree with central differences") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    for (int trial = 0; trial < 10; ++trial) {
        DerivativeBundle b{0.2 + 0.1 * U(rng), 15 + 5 * U(rng), 0.01 * U(rng), 1e-3 * U(rng), U(rng), 0.05 * U(rng)};
        const PhysicsParams p(0.38 + 0.05 * U(rng), 22.9 + 2 * U(rng), 10 + 3 * U(rng));
        const auto c = conservation_residual_partials(b);
        const auto m = arz_momentum_residual_partials(b, p);
        double* fields[6] = {&b.rho, &b.u, &b.d_rho_dt, &b.d_rho_dx, &b.d_u_dt, &b.d_u_dx};
        for (int q = 0; q < 6; ++q) {
            const double h = 1e-6 * std::max(1.0, std::abs(*fields[q]));
            const double v = *fields[q];
            *fields[q] = v + h;
            const auto rp = arz_residual(b, p);
            *fields[q] = v - h;
            const auto rm = arz_residual(b, p);
            *fields[q] = v;
            CHECK(c.wrt_bundle[q] == doctest::Approx((rp.r1 - rm.r1) / (2 * h)).epsilon(1e-6));
            CHECK(m.wrt_bundle[q] == doctest::Approx((rp.r2 - rm.r2) / (2 * h)).epsilon(1e-6));
        }
        for (int q = 0; q < 3; ++q) {
            PhysicsParams pp = p, pm = p;
            double* a = q == 0 ? &pp.rho_max : q == 1 ? &pp.u_max : &pp.tau;
            double* z = q == 0 ? &pm.rho_max : q == 1 ? &pm.u_max : &pm.tau;
            const double h = 1e-6 * *a;
            *a += h;
            *z -= h;
            CHECK(m.wrt_params[q] == doctest::Approx((arz_residual(b, pp).r2 - arz_residual(b, pm).r2) / (2 * h))
                                          .epsilon(1e-6));
        }
    }
}

TEST_CASE("physics parameters must be positive") {
    CHECK_THROWS_AS(PhysicsParams(0.0, 20.0), std::invalid_argument);
    CHECK_THROWS_AS(PhysicsParams(0.4, -1.0), std::invalid_argument);
    CHECK_THROWS_AS(PhysicsParams(0.4, 20.0, NAN), std::invalid_argument);
}

}
