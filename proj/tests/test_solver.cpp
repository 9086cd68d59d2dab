#include "uqtse/solver.hpp"

#include "support/oracles.hpp"

#include "uqtse/errors.hpp"
#include "uqtse/physics.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <stdexcept>

using namespace uqtse;

using uqtse::testing::interface_cell;
using uqtse::testing::riemann;
using uqtse::testing::transmissive;

namespace {

const PhysicsParams& kP = uqtse::testing::kSolverParams;

}  // namespace

TEST_SUITE("solver") {

TEST_CASE("demand, supply and the Godunov flux") {
    CHECK(demand(0.1, kP) == doctest::Approx(lwr_flux(0.1, kP)));
    CHECK(demand(0.3, kP) == doctest::Approx(2.0)); // capacity u_max rho_max / 4
    CHECK(supply(0.1, kP) == doctest::Approx(2.0));
    CHECK(supply(0.3, kP) == doctest::Approx(lwr_flux(0.3, kP)));
    CHECK(godunov_flux_lwr(0.1, 0.3, kP) == doctest::Approx(std::min(lwr_flux(0.1, kP), lwr_flux(0.3, kP))));
    CHECK(godunov_flux_lwr(0.3, 0.1, kP) == doctest::Approx(2.0));
    CHECK(godunov_flux_lwr(0.05, 0.05, kP) == doctest::Approx(lwr_flux(0.05, kP)));
}

TEST_CASE("CFL bound") {
    CHECK(max_wave_speed(TrafficModel::Lwr, kP) == doctest::Approx(20.0));
    // u_max + rho_max h' bounds both ARZ characteristic speeds.
    CHECK(max_wave_speed(TrafficModel::Arz, kP) == doctest::Approx(40.0));
    CHECK(cfl_timestep(20.0, kP, TrafficModel::Lwr) == doctest::Approx(kCflNumber * 20.0 / 20.0));
    const SpaceTimeDomain d(1000.0, 300.0);
    const int nt = cfl_step_count(d, 50, kP, TrafficModel::Arz);
    CHECK(300.0 / nt <= cfl_timestep(20.0, kP, TrafficModel::Arz));
    CHECK(300.0 / (nt - 1) > cfl_timestep(20.0, kP, TrafficModel::Arz));
    const Grid too_coarse(d, 50, 10);
    CHECK_THROWS_AS(solve_lwr(riemann(50, 0.1, 0.1), transmissive(), kP, too_coarse), NumericalError);
}

TEST_CASE("mass balance closes on every boundary setting") {
    const auto r = uqtse::testing::mass_balance_runs();
    CHECK(r.runs == 6);
    CHECK(r.worst <= 1e-10);
    CHECK(r.clamped_cells == 0);
}

TEST_CASE("LWR Riemann self-convergence is first order") {
    for (double order : uqtse::testing::riemann_convergence_orders()) {
        INFO("order " << order);
        CHECK(order >= 0.7);
        CHECK(order <= 1.2);
    }
}

TEST_CASE("symmetric Riemann shock stays in place") {
    CHECK(uqtse::testing::stationary_shock_drift() <= 1);
    const SpaceTimeDomain d(1000.0, 80.0);
    const auto s = solve_lwr(riemann(100, 0.1, 0.3), transmissive(), kP, Grid(d, 100, 201));
    CHECK(interface_cell(s.field.rho_level(0), 0.2) == 50);
}

TEST_CASE("ARZ preserves equilibrium constants and relaxes exactly") {
    const SpaceTimeDomain d(1000.0, 60.0);
    const Grid g(d, 20, cfl_step_count(d, 20, kP, TrafficModel::Arz));
    const std::vector<double> rho(20, 0.15), u(20, equilibrium_speed(0.15, kP));
    const auto s = solve_arz(rho, u, transmissive(), kP, g);
    for (double v : s.field.rho()) CHECK(v == doctest::Approx(0.15).epsilon(1e-14));
    for (double v : s.field.u()) CHECK(v == doctest::Approx(equilibrium_speed(0.15, kP)).epsilon(1e-14));

    ArzStepper stepper(50.0, 0.5, kP, transmissive());
    std::vector<double> r{0.1, 0.2}, v{5.0, 18.0};
    stepper.relaxation_step(r, v);
    const double decay = std::exp(-0.5 / kP.tau);
    CHECK(v[0] == doctest::Approx(15.0 + (5.0 - 15.0) * decay));
    CHECK(v[1] == doctest::Approx(10.0 + (18.0 - 10.0) * decay));
}

TEST_CASE("congested exit builds a backward-moving queue") {
    Scenario sc;
    sc.domain = SpaceTimeDomain(1000.0, 300.0);
    sc.nx = 50;
    sc.lambda = {{0.4, 0.0, 0.3, 0.5}, {20.0, 0.0, 15.0, 25.0}, {10.0, 0.0, 5.0, 20.0}};
    sc.initial.background = 0.05;
    sc.boundary.inflow_mean = 0.05;
    sc.boundary.downstream = BoundaryCondition::Downstream::Congested;
    sc.boundary.congestion_fraction = 0.9;
    const Grid g = sc.grid();
    for (auto model : {TrafficModel::Lwr, TrafficModel::Arz}) {
        sc.model = model;
        const auto s = solve(sc, kP, g);
        const auto last = s.field.rho_level(g.nt() - 1);
        CHECK(last.back() > 0.3);
        CHECK(last.front() < 0.1);
        CHECK(s.diagnostics.mass_balance_residual() <= 1e-10);
    }
}

TEST_CASE("ensembles are independent of the thread count") {
    Scenario sc;
    sc.nx = 20;
    sc.lambda = {{0.38, 0.02, 0.3, 0.5}, {22.9, 1.5, 18.0, 28.0}, {10.0, 2.0, 5.0, 30.0}};
    sc.initial.blocks = {{400.0, 600.0, 0.2, 0.7}};
    const auto a = generate_ensemble(sc, 5, 11, 1);
    const auto b = generate_ensemble(sc, 5, 11, 3);
    REQUIRE(a.size() == 5u);
    for (std::size_t r = 0; r < a.size(); ++r) {
        CHECK(a.lambdas[r] == b.lambdas[r]);
        CHECK(std::equal(a.realizations[r].rho().begin(), a.realizations[r].rho().end(),
                         b.realizations[r].rho().begin()));
    }
    CHECK_FALSE(a.lambdas[0] == a.lambdas[1]);
}

TEST_CASE("invalid settings are rejected") {
    const SpaceTimeDomain d(1000.0, 60.0);
    const Grid g(d, 20, cfl_step_count(d, 20, kP, TrafficModel::Arz));
    BoundaryCondition bc;
    bc.inflow_mean = 0.5;
    CHECK_THROWS_AS(solve_lwr(riemann(20, 0.1, 0.1), bc, kP, g), std::invalid_argument);
    bc.inflow_mean = 0.1;
    bc.inflow_speed_factor = 1.5;
    CHECK_THROWS_AS(solve_arz(riemann(20, 0.1, 0.1), riemann(20, 10, 10), bc, kP, g), std::invalid_argument);
    CHECK_THROWS_AS(solve_lwr(riemann(19, 0.1, 0.1), transmissive(), kP, g), std::invalid_argument);
}

}
