#include "uqtse/solver.hpp"

#include "uqtse/errors.hpp"
#include "uqtse/parallel.hpp"
#include "uqtse/physics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>
#include <stdexcept>

namespace uqtse {

std::string to_string(TrafficModel m) {
    return m == TrafficModel::Lwr ? "lwr" : "arz";
}

TrafficModel traffic_model_from_string(const std::string& s) {
    if (s == "lwr") return TrafficModel::Lwr;
    if (s == "arz") return TrafficModel::Arz;
    throw std::invalid_argument("unknown traffic model '" + s + "'");
}

double InitialProfile::density_at(double x, double length) const {
    double rho = background;
    for (const auto& b : blocks)
        if (x >= b.x_begin && x < b.x_end) rho = b.density;
    return rho + amplitude * std::sin(2.0 * std::numbers::pi * wavenumber * x / length);
}

double InitialProfile::speed_factor_at(double x) const {
    double f = 1.0;
    for (const auto& b : blocks)
        if (x >= b.x_begin && x < b.x_end) f = b.speed_factor;
    return f;
}

double BoundaryCondition::inflow_density(double t) const {
    return inflow_mean + inflow_amplitude * std::sin(2.0 * std::numbers::pi * t / inflow_period);
}

bool BoundaryCondition::congested_at(double t) const {
    return downstream == Downstream::Congested && t >= congestion_start && t < congestion_end;
}

double max_wave_speed(TrafficModel model, const PhysicsParams& p) {
    // ARZ characteristic speeds are u and u - rho h'(rho); over admissible
    // states |.| <= u_max + rho_max h' = 2 u_max.
    return model == TrafficModel::Lwr ? p.u_max : p.u_max + p.rho_max * arz_h_prime(p);
}

double cfl_timestep(double dx, const PhysicsParams& p, TrafficModel model) {
    return kCflNumber * dx / max_wave_speed(model, p);
}

double cfl_timestep(const Grid& grid, const PhysicsParams& p, TrafficModel model) {
    return cfl_timestep(grid.dx(), p, model);
}

int cfl_step_count(const SpaceTimeDomain& domain, int nx, const PhysicsParams& worst, TrafficModel model) {
    const double dt_max = cfl_timestep(domain.length() / nx, worst, model);
    return std::max(2, static_cast<int>(std::ceil(domain.horizon() / dt_max - 1e-9)));
}

Grid Scenario::grid() const {
    lambda.validate();
    return Grid(domain, nx, cfl_step_count(domain, nx, lambda.upper(), model));
}

double demand(double rho, const PhysicsParams& p) {
    return lwr_flux(std::min(rho, 0.5 * p.rho_max), p);
}

double supply(double rho, const PhysicsParams& p) {
    return lwr_flux(std::max(rho, 0.5 * p.rho_max), p);
}

double godunov_flux_lwr(double rho_left, double rho_right, const PhysicsParams& p) {
    return std::min(demand(rho_left, p), supply(rho_right, p));
}

LwrStepper::LwrStepper(double dx, double dt, PhysicsParams params, BoundaryCondition boundary)
    : dx_(dx), dt_(dt), params_(params), boundary_(boundary) {}

StepFluxes LwrStepper::step(std::span<double> rho, double t) const {
    const std::size_t n = rho.size();
    std::vector<double> flux(n + 1);
    const double upstream = boundary_.upstream == BoundaryCondition::Upstream::Inflow
                                ? boundary_.inflow_density(t)
                                : rho[0];
    flux[0] = godunov_flux_lwr(upstream, rho[0], params_);
    for (std::size_t i = 1; i < n; ++i) flux[i] = godunov_flux_lwr(rho[i - 1], rho[i], params_);
    if (boundary_.congested_at(t))
        flux[n] = godunov_flux_lwr(rho[n - 1], boundary_.congestion_fraction * params_.rho_max, params_);
    else if (boundary_.downstream == BoundaryCondition::Downstream::Transmissive)
        flux[n] = godunov_flux_lwr(rho[n - 1], rho[n - 1], params_);
    else
        flux[n] = demand(rho[n - 1], params_);
    const double ratio = dt_ / dx_;
    for (std::size_t i = 0; i < n; ++i) rho[i] -= ratio * (flux[i + 1] - flux[i]);
    return {flux[0], flux[n]};
}

ArzStepper::ArzStepper(double dx, double dt, PhysicsParams params, BoundaryCondition boundary)
    : dx_(dx), dt_(dt), params_(params), boundary_(boundary) {}

namespace {

struct ArzState {
    double rho;
    double u;
};

struct ArzFlux {
    double rho;
    double y;
};

ArzFlux hll_flux(const ArzState& l, const ArzState& r, const PhysicsParams& p) {
    const double hp = arz_h_prime(p);
    const double yl = l.rho * (l.u + arz_h(l.rho, p));
    const double yr = r.rho * (r.u + arz_h(r.rho, p));
    const ArzFlux fl{l.rho * l.u, yl * l.u};
    if (l.rho == r.rho && l.u == r.u) return fl;
    const ArzFlux fr{r.rho * r.u, yr * r.u};
    const double s_left = std::min(l.u - l.rho * hp, r.u - r.rho * hp);
    const double s_right = std::max(l.u, r.u);
    if (s_left >= 0.0) return fl;
    if (s_right <= 0.0) return fr;
    const double inv = 1.0 / (s_right - s_left);
    return {(s_right * fl.rho - s_left * fr.rho + s_left * s_right * (r.rho - l.rho)) * inv,
            (s_right * fl.y - s_left * fr.y + s_left * s_right * (yr - yl)) * inv};
}

}  // namespace

StepFluxes ArzStepper::hyperbolic_step(std::span<double> rho, std::span<double> u, double t) {
    const std::size_t n = rho.size();
    flux_rho_.assign(n + 1, 0.0);
    flux_y_.assign(n + 1, 0.0);
    ArzState upstream{rho[0], u[0]};
    if (boundary_.upstream == BoundaryCondition::Upstream::Inflow) {
        const double r_in = boundary_.inflow_density(t);
        upstream = {r_in, boundary_.inflow_speed_factor * equilibrium_speed(r_in, params_)};
    }
    auto put = [&](std::size_t face, const ArzFlux& f) {
        flux_rho_[face] = f.rho;
        flux_y_[face] = f.y;
    };
    put(0, hll_flux(upstream, {rho[0], u[0]}, params_));
    for (std::size_t i = 1; i < n; ++i) put(i, hll_flux({rho[i - 1], u[i - 1]}, {rho[i], u[i]}, params_));
    const ArzState last{rho[n - 1], u[n - 1]};
    if (boundary_.congested_at(t)) {
        const double r_out = boundary_.congestion_fraction * params_.rho_max;
        put(n, hll_flux(last, {r_out, equilibrium_speed(r_out, params_)}, params_));
    } else {
        put(n, hll_flux(last, last, params_));
    }

    const double ratio = dt_ / dx_;
    for (std::size_t i = 0; i < n; ++i) {
        const double y = rho[i] * (u[i] + arz_h(rho[i], params_)) - ratio * (flux_y_[i + 1] - flux_y_[i]);
        double r = rho[i] - ratio * (flux_rho_[i + 1] - flux_rho_[i]);
        if (r < 0.0) {
            r = 0.0;
            ++clamp_count_;
        }
        rho[i] = r;
        u[i] = r > 1e-14 ? std::max(0.0, y / r - arz_h(r, params_)) : equilibrium_speed(r, params_);
    }
    return {flux_rho_[0], flux_rho_[n]};
}

void ArzStepper::relaxation_step(std::span<const double> rho, std::span<double> u) const {
    const double decay = std::exp(-dt_ / params_.tau);
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double ueq = equilibrium_speed(rho[i], params_);
        u[i] = ueq + (u[i] - ueq) * decay;
    }
}

StepFluxes ArzStepper::step(std::span<double> rho, std::span<double> u, double t) {
    const StepFluxes f = hyperbolic_step(rho, u, t);
    relaxation_step(rho, u);
    return f;
}

double SolverDiagnostics::mass_balance_residual() const {
    const double scale = std::max({std::abs(initial_mass), std::abs(final_mass), 1e-300});
    return std::abs(final_mass - initial_mass - net_boundary_inflow) / scale;
}

namespace {

void check_cfl(const Grid& grid, const PhysicsParams& p, TrafficModel model) {
    const double limit = cfl_timestep(grid, p, model);
    if (grid.dt() > limit * (1.0 + 1e-12))
        throw NumericalError("CFL violation: dt = " + std::to_string(grid.dt()) + " s exceeds " +
                             std::to_string(limit) + " s");
}

void check_inflow(const BoundaryCondition& bc, const PhysicsParams& p, const Grid& grid) {
    if (bc.downstream == BoundaryCondition::Downstream::Congested &&
        (!(bc.congestion_fraction > 0.0 && bc.congestion_fraction <= 1.0) || !(bc.congestion_start <= bc.congestion_end)))
        throw std::invalid_argument("congested exit needs a fraction in (0, 1] and start <= end");
    if (bc.upstream != BoundaryCondition::Upstream::Inflow) return;
    if (!(bc.inflow_speed_factor >= 0.0 && bc.inflow_speed_factor <= 1.0))
        throw std::invalid_argument("inflow speed factor must lie in [0, 1]");
    for (int k = 0; k < grid.nt(); ++k) {
        const double r = bc.inflow_density(k * grid.dt());
        if (r < 0.0 || r > p.rho_max)
            throw std::invalid_argument("inflow density leaves [0, rho_max]");
    }
}

void check_finite(std::span<const double> values, int level, const char* what) {
    for (std::size_t i = 0; i < values.size(); ++i)
        if (!std::isfinite(values[i]))
            throw NumericalError(std::string("non-finite ") + what + " at cell " + std::to_string(i) +
                                 ", level " + std::to_string(level));
}

double mass(std::span<const double> rho, double dx) {
    return std::accumulate(rho.begin(), rho.end(), 0.0) * dx;
}

}  // namespace

std::vector<double> initial_density(const Scenario& scenario, const Grid& grid, const PhysicsParams& p) {
    std::vector<double> rho(grid.nx());
    for (int i = 0; i < grid.nx(); ++i) {
        rho[i] = scenario.initial.density_at(grid.cell_center(i, 0).first, grid.domain().length());
        if (rho[i] < 0.0 || rho[i] > p.rho_max)
            throw std::invalid_argument("initial density leaves [0, rho_max] at cell " + std::to_string(i));
    }
    return rho;
}

Solution solve_lwr(std::vector<double> rho, const BoundaryCondition& bc, const PhysicsParams& p,
                   const Grid& grid) {
    check_cfl(grid, p, TrafficModel::Lwr);
    check_inflow(bc, p, grid);
    const int nx = grid.nx();
    if (static_cast<int>(rho.size()) != nx) throw std::invalid_argument("initial state size mismatch");

    std::vector<double> rho_out(grid.size()), u_out(grid.size());
    SolverDiagnostics diag;
    diag.initial_mass = mass(rho, grid.dx());
    LwrStepper stepper(grid.dx(), grid.dt(), p, bc);
    for (int k = 0;; ++k) {
        check_finite(rho, k, "density");
        for (int i = 0; i < nx; ++i) {
            // Round-off can push a value an ulp outside the invariant region.
            const double r = std::clamp(rho[i], 0.0, p.rho_max);
            rho_out[grid.index(i, k)] = r;
            u_out[grid.index(i, k)] = std::max(0.0, equilibrium_speed(r, p));
        }
        if (k + 1 == grid.nt()) break;
        const StepFluxes f = stepper.step(rho, k * grid.dt());
        diag.net_boundary_inflow += grid.dt() * (f.inflow - f.outflow);
    }
    diag.final_mass = mass(rho, grid.dx());
    return {StateField(grid, std::move(rho_out), std::move(u_out)), diag};
}

Solution solve_arz(std::vector<double> rho, std::vector<double> u, const BoundaryCondition& bc,
                   const PhysicsParams& p, const Grid& grid) {
    check_cfl(grid, p, TrafficModel::Arz);
    check_inflow(bc, p, grid);
    const int nx = grid.nx();
    if (static_cast<int>(rho.size()) != nx || static_cast<int>(u.size()) != nx)
        throw std::invalid_argument("initial state size mismatch");

    std::vector<double> rho_out(grid.size()), u_out(grid.size());
    SolverDiagnostics diag;
    diag.initial_mass = mass(rho, grid.dx());
    ArzStepper stepper(grid.dx(), grid.dt(), p, bc);
    for (int k = 0;; ++k) {
        check_finite(rho, k, "density");
        check_finite(u, k, "velocity");
        std::copy(rho.begin(), rho.end(), rho_out.begin() + grid.index(0, k));
        std::copy(u.begin(), u.end(), u_out.begin() + grid.index(0, k));
        if (k + 1 == grid.nt()) break;
        const StepFluxes f = stepper.step(rho, u, k * grid.dt());
        diag.net_boundary_inflow += grid.dt() * (f.inflow - f.outflow);
    }
    diag.final_mass = mass(rho, grid.dx());
    diag.clamped_cells = stepper.clamp_count();
    return {StateField(grid, std::move(rho_out), std::move(u_out)), diag};
}

Solution solve_lwr(const Scenario& scenario, const PhysicsParams& p, const Grid& grid) {
    return solve_lwr(initial_density(scenario, grid, p), scenario.boundary, p, grid);
}

Solution solve_arz(const Scenario& scenario, const PhysicsParams& p, const Grid& grid) {
    auto rho = initial_density(scenario, grid, p);
    std::vector<double> u(rho.size());
    for (const auto& b : scenario.initial.blocks)
        if (!(b.speed_factor >= 0.0 && b.speed_factor <= 1.0))
            throw std::invalid_argument("block speed factor must lie in [0, 1]");
    for (int i = 0; i < grid.nx(); ++i)
        u[i] = scenario.initial.speed_factor_at(grid.cell_center(i, 0).first) * equilibrium_speed(rho[i], p);
    return solve_arz(std::move(rho), std::move(u), scenario.boundary, p, grid);
}

Solution solve(const Scenario& scenario, const PhysicsParams& p, const Grid& grid) {
    return scenario.model == TrafficModel::Lwr ? solve_lwr(scenario, p, grid) : solve_arz(scenario, p, grid);
}

Ensemble generate_ensemble(const Scenario& scenario, int n_realizations, std::uint64_t seed, int threads) {
    if (n_realizations < 1) throw std::invalid_argument("ensemble needs at least one realization");
    const Grid grid = scenario.grid();
    std::vector<PhysicsParams> lambdas;
    lambdas.reserve(n_realizations);
    for (int r = 0; r < n_realizations; ++r)
        lambdas.push_back(sample_params(scenario.lambda, derive_seed(seed, static_cast<std::uint64_t>(r))));

    std::vector<std::optional<StateField>> slots(n_realizations);
    parallel_for(static_cast<std::size_t>(n_realizations), threads, [&](std::size_t r) {
        slots[r].emplace(solve(scenario, lambdas[r], grid).field);
    });
    Ensemble ensemble{grid, {}, std::move(lambdas)};
    ensemble.realizations.reserve(n_realizations);
    for (auto& s : slots) ensemble.realizations.push_back(std::move(*s));
    return ensemble;
}

}  // namespace uqtse
