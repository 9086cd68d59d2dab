#pragma once

// Reference computations for the solver and residual checks, shared by the
// unit tests and the acceptance runner.

#include "uqtse/physics.hpp"
#include "uqtse/solver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <span>
#include <vector>

namespace uqtse::testing {

inline const PhysicsParams kSolverParams(0.4, 20.0, 10.0);

inline BoundaryCondition transmissive() {
    BoundaryCondition bc;
    bc.upstream = BoundaryCondition::Upstream::Transmissive;
    bc.downstream = BoundaryCondition::Downstream::Transmissive;
    return bc;
}

inline std::vector<double> riemann(int nx, double left, double right, double split = 0.5) {
    std::vector<double> rho(static_cast<std::size_t>(nx));
    for (int i = 0; i < nx; ++i) rho[i] = (i + 0.5) / nx < split ? left : right;
    return rho;
}

// Final density of an LWR Riemann problem on [0, 1000] m over 20 s.
inline std::vector<double> lwr_final(int nx, double left, double right) {
    const SpaceTimeDomain d(1000.0, 20.0);
    const Grid g(d, nx, cfl_step_count(d, nx, kSolverParams, TrafficModel::Lwr));
    const auto s = solve_lwr(riemann(nx, left, right), transmissive(), kSolverParams, g);
    const auto last = s.field.rho_level(g.nt() - 1);
    return {last.begin(), last.end()};
}

// L1 distance after averaging the fine solution onto the coarse cells.
inline double l1_to_reference(const std::vector<double>& coarse, const std::vector<double>& fine) {
    const std::size_t r = fine.size() / coarse.size();
    double e = 0.0;
    for (std::size_t i = 0; i < coarse.size(); ++i) {
        double avg = 0.0;
        for (std::size_t j = 0; j < r; ++j) avg += fine[i * r + j];
        e += std::abs(coarse[i] - avg / r);
    }
    return e / coarse.size();
}

inline int interface_cell(std::span<const double> rho, double level) {
    for (std::size_t i = 1; i < rho.size(); ++i)
        if ((rho[i - 1] - level) * (rho[i] - level) <= 0.0 && rho[i - 1] != rho[i]) return static_cast<int>(i);
    return -1;
}

struct MassBalanceReport {
    double worst = 0.0;
    int clamped_cells = 0;
    int runs = 0;
};

/// LWR and ARZ runs over every downstream boundary with a modulated inflow.
inline MassBalanceReport mass_balance_runs() {
    const SpaceTimeDomain d(1000.0, 300.0);
    const Grid g(d, 50, cfl_step_count(d, 50, kSolverParams, TrafficModel::Arz));
    MassBalanceReport r;
    for (auto down : {BoundaryCondition::Downstream::FreeOutflow, BoundaryCondition::Downstream::Transmissive,
                      BoundaryCondition::Downstream::Congested}) {
        BoundaryCondition bc;
        bc.inflow_mean = 0.08;
        bc.inflow_amplitude = 0.03;
        bc.inflow_period = 50.0;
        bc.downstream = down;
        bc.congestion_start = 60.0;
        bc.congestion_end = 200.0;
        const auto rho0 = riemann(50, 0.05, 0.3, 0.6);
        const auto lwr = solve_lwr(rho0, bc, kSolverParams, g);
        std::vector<double> u0(50);
        for (int i = 0; i < 50; ++i) u0[i] = 0.8 * equilibrium_speed(rho0[i], kSolverParams);
        const auto arz = solve_arz(rho0, u0, bc, kSolverParams, g);
        r.worst = std::max({r.worst, lwr.diagnostics.mass_balance_residual(), arz.diagnostics.mass_balance_residual()});
        r.clamped_cells += arz.diagnostics.clamped_cells;
        r.runs += 2;
    }
    return r;
}

/// Observed orders between successive refinements nx = 100, 200, 400, 800 of
/// a rarefaction next to a moving shock, against an nx = 3200 reference.
inline std::vector<double> riemann_convergence_orders() {
    const auto fine = lwr_final(3200, 0.3, 0.05);
    std::vector<double> errors, orders;
    for (int nx : {100, 200, 400, 800}) errors.push_back(l1_to_reference(lwr_final(nx, 0.3, 0.05), fine));
    for (std::size_t i = 1; i < errors.size(); ++i) orders.push_back(std::log2(errors[i - 1] / errors[i]));
    return orders;
}

/// Interface displacement in cells of the stationary shock 0.1 | 0.3 after
/// 200 steps (rho_L + rho_R = rho_max gives zero shock speed).
inline int stationary_shock_drift() {
    const SpaceTimeDomain d(1000.0, 80.0);
    const Grid g(d, 100, 201);
    const auto s = solve_lwr(riemann(100, 0.1, 0.3), transmissive(), kSolverParams, g);
    const int start = interface_cell(s.field.rho_level(0), 0.2);
    const int end = interface_cell(s.field.rho_level(200), 0.2);
    return start < 0 || end < 0 ? 1 << 20 : std::abs(end - start);
}

// Manufactured fields rho = a + b sin(kx - wt), u = c + d cos(kx - wt) and
// their hand-differentiated partials.
struct Manufactured {
    double a = 0.2, b = 0.05, c = 15.0, d = 3.0, k = 0.01, w = 0.05;

    DerivativeBundle at(double x, double t) const {
        const double s = std::sin(k * x - w * t), co = std::cos(k * x - w * t);
        return {a + b * s, c + d * co, -w * b * co, k * b * co, w * d * s, -k * d * s};
    }
    double r1(double x, double t) const {
        const double s = std::sin(k * x - w * t), co = std::cos(k * x - w * t);
        const double rho = a + b * s, u = c + d * co;
        // d_t rho + u d_x rho + rho d_x u
        return -w * b * co + u * k * b * co + rho * (-k * d * s);
    }
    double r2(double x, double t, const PhysicsParams& p) const {
        const double s = std::sin(k * x - w * t), co = std::cos(k * x - w * t);
        const double rho = a + b * s, u = c + d * co;
        const double hp = p.u_max / p.rho_max;
        const double yt = w * d * s + hp * (-w * b * co);
        const double yx = -k * d * s + hp * (k * b * co);
        const double ueq = p.u_max * (1 - rho / p.rho_max);
        return yt + u * yx - (ueq - u) / p.tau;
    }
};

/// Largest deviation of the LWR and ARZ residuals from the oracle over a
/// space-time lattice and a few parameter sets.
inline double manufactured_residual_error() {
    const Manufactured m;
    double worst = 0.0;
    for (const PhysicsParams& p : {PhysicsParams(0.38, 22.9, 10.0), PhysicsParams(0.3, 18.0, 5.0)})
        for (double x = 0.0; x <= 1000.0; x += 62.5)
            for (double t = 0.0; t <= 300.0; t += 37.5) {
                const auto b = m.at(x, t);
                const auto r = arz_residual(b, p);
                worst = std::max({worst, std::abs(lwr_residual(b, p).r1 - m.r1(x, t)), std::abs(r.r1 - m.r1(x, t)),
                                  std::abs(r.r2 - m.r2(x, t, p))});
            }
    return worst;
}

/// Largest absolute residual over equilibrium constant states (rho, Ueq(rho)).
inline double equilibrium_residual() {
    const PhysicsParams p(0.38, 22.9, 10.0);
    double worst = 0.0;
    for (double rho : {0.0, 0.05, 0.1, 0.2, 0.3, 0.38}) {
        DerivativeBundle b;
        b.rho = rho;
        b.u = equilibrium_speed(rho, p);
        const auto r = arz_residual(b, p);
        worst = std::max({worst, std::abs(lwr_residual(b, p).r1), std::abs(r.r1), std::abs(r.r2)});
    }
    return worst;
}

}  // namespace uqtse::testing
