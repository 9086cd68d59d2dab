#pragma once

// First-order finite-volume solvers for the LWR and ARZ models. They produce
// the ground-truth ensembles and serve as the EKF process model.
//
// LWR: Godunov scheme in demand/supply form.
// ARZ: HLL flux on the conservative pair (rho, y = rho (u + h(rho))), followed
// by an exact relaxation substep toward U_eq at frozen density.

#include "uqtse/domain.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace uqtse {

enum class TrafficModel { Lwr, Arz };

std::string to_string(TrafficModel m);
TrafficModel traffic_model_from_string(const std::string& s);

struct DensityBlock {
    double x_begin;
    double x_end;
    double density;
    double speed_factor = 1.0; // ARZ initial speed as a multiple of U_eq
};

/// Initial density: background + blocks (override) + sinusoidal modulation.
/// Velocity starts at speed_factor(x) * U_eq(rho) for the sampled parameters
/// (factor 1 outside blocks); LWR ignores the factor.
struct InitialProfile {
    double background = 0.05;
    std::vector<DensityBlock> blocks;
    double amplitude = 0.0;
    double wavenumber = 1.0; // full periods over the segment

    double density_at(double x, double length) const;
    double speed_factor_at(double x) const;
};

/// Upstream: prescribed inflow density rho_in(t) = mean + amplitude sin(2 pi t / period),
/// or a zero-gradient ghost cell. Downstream: free outflow (supply at capacity),
/// zero-gradient, or a congested exit whose ghost cell holds
/// congestion_fraction * rho_max at equilibrium speed while
/// congestion_start <= t < congestion_end (free outflow otherwise).
struct BoundaryCondition {
    enum class Upstream { Inflow, Transmissive };
    enum class Downstream { FreeOutflow, Transmissive, Congested };

    Upstream upstream = Upstream::Inflow;
    Downstream downstream = Downstream::FreeOutflow;
    double inflow_mean = 0.05;
    double inflow_amplitude = 0.0;
    double inflow_period = 60.0;
    double inflow_speed_factor = 1.0; // ARZ inflow speed as a multiple of U_eq
    double congestion_fraction = 0.9;
    double congestion_start = 0.0;
    double congestion_end = 1e9;

    double inflow_density(double t) const;
    bool congested_at(double t) const;
};

struct Scenario {
    SpaceTimeDomain domain{1000.0, 300.0};
    int nx = 50;
    TrafficModel model = TrafficModel::Arz;
    InitialProfile initial;
    BoundaryCondition boundary;
    ParamDistribution lambda;
    NoiseModel noise;
    std::uint64_t seed = 0;

    // Grid whose dt is the largest step dividing T that satisfies the CFL
    // bound for every admissible parameter draw.
    Grid grid() const;
};

inline constexpr double kCflNumber = 0.9;

double max_wave_speed(TrafficModel model, const PhysicsParams& p);
double cfl_timestep(double dx, const PhysicsParams& p, TrafficModel model);
double cfl_timestep(const Grid& grid, const PhysicsParams& p, TrafficModel model);

/// Smallest nt with T / nt <= the CFL bound.
int cfl_step_count(const SpaceTimeDomain& domain, int nx, const PhysicsParams& worst, TrafficModel model);

double demand(double rho, const PhysicsParams& p);
double supply(double rho, const PhysicsParams& p);
double godunov_flux_lwr(double rho_left, double rho_right, const PhysicsParams& p);

/// Boundary mass fluxes (veh/s) of one step.
struct StepFluxes {
    double inflow = 0.0;
    double outflow = 0.0;
};

class LwrStepper {
public:
    LwrStepper(double dx, double dt, PhysicsParams params, BoundaryCondition boundary);

    // Advances rho in place from time t to t + dt.
    StepFluxes step(std::span<double> rho, double t) const;

private:
    double dx_, dt_;
    PhysicsParams params_;
    BoundaryCondition boundary_;
};

class ArzStepper {
public:
    ArzStepper(double dx, double dt, PhysicsParams params, BoundaryCondition boundary);

    // Hyperbolic HLL update followed by exact relaxation. Negative densities are
    // clamped to zero and counted.
    StepFluxes step(std::span<double> rho, std::span<double> u, double t);
    StepFluxes hyperbolic_step(std::span<double> rho, std::span<double> u, double t);
    void relaxation_step(std::span<const double> rho, std::span<double> u) const;

    long clamp_count() const { return clamp_count_; }
    const PhysicsParams& params() const { return params_; }

private:
    double dx_, dt_;
    PhysicsParams params_;
    BoundaryCondition boundary_;
    long clamp_count_ = 0;
    std::vector<double> flux_rho_, flux_y_;
};

struct SolverDiagnostics {
    double initial_mass = 0.0;
    double final_mass = 0.0;
    double net_boundary_inflow = 0.0; // integral of (inflow - outflow) dt
    long clamped_cells = 0;

    double mass_balance_residual() const;
};

struct Solution {
    StateField field;
    SolverDiagnostics diagnostics;
};

// Initial states per cell for the given parameters; throws if the profile
// leaves [0, rho_max].
std::vector<double> initial_density(const Scenario& scenario, const Grid& grid, const PhysicsParams& p);

Solution solve_lwr(const Scenario& scenario, const PhysicsParams& p, const Grid& grid);
Solution solve_arz(const Scenario& scenario, const PhysicsParams& p, const Grid& grid);
Solution solve(const Scenario& scenario, const PhysicsParams& p, const Grid& grid);

/// Explicit initial state versions.
Solution solve_lwr(std::vector<double> rho0, const BoundaryCondition& bc, const PhysicsParams& p,
                   const Grid& grid);
Solution solve_arz(std::vector<double> rho0, std::vector<double> u0, const BoundaryCondition& bc,
                   const PhysicsParams& p, const Grid& grid);

struct Ensemble {
    Grid grid;
    std::vector<StateField> realizations;
    std::vector<PhysicsParams> lambdas;

    std::size_t size() const { return realizations.size(); }
};

/// Realization r uses parameters drawn with derive_seed(seed, r). Output is
/// independent of `threads`.
Ensemble generate_ensemble(const Scenario& scenario, int n_realizations, std::uint64_t seed,
                           int threads = 1);

}  // namespace uqtse
