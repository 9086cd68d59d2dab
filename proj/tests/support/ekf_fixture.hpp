#pragma once

// A small ARZ truth run with a jam pocket, used to exercise the EKF.

#include "uqtse/ekf.hpp"
#include "uqtse/evaluation.hpp"
#include "uqtse/physics.hpp"
#include "uqtse/sensing.hpp"
#include "uqtse/solver.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

namespace uqtse::testing {

inline const PhysicsParams kEkfParams(0.4, 20.0, 10.0);

struct EkfTruth {
    Grid grid;
    Solution solution;
    std::vector<double> rho0, u0;
    BoundaryCondition bc;
};

inline EkfTruth arz_truth() {
    const SpaceTimeDomain d(1000.0, 60.0);
    const Grid g(d, 20, cfl_step_count(d, 20, kEkfParams, TrafficModel::Arz));
    BoundaryCondition bc;
    bc.inflow_mean = 0.08;
    bc.inflow_amplitude = 0.02;
    bc.inflow_period = 30.0;
    std::vector<double> rho(20), u(20);
    for (int i = 0; i < 20; ++i) {
        rho[i] = i >= 8 && i < 12 ? 0.3 : 0.06;
        u[i] = 0.7 * equilibrium_speed(rho[i], kEkfParams);
    }
    auto sol = solve_arz(rho, u, bc, kEkfParams, g);
    return {g, std::move(sol), rho, u, bc};
}

inline ObservationSet read_truth(const EkfTruth& t, int detectors, double sigma_rho, double sigma_u) {
    Ensemble e{t.grid, {t.solution.field}, {kEkfParams}};
    return extract_observations(e, place_detectors(detectors, t.grid.domain(), t.grid.dt()), {sigma_rho, sigma_u}, 1);
}

/// Relative error of zero-noise tracking started from the true initial state.
inline std::pair<double, double> exact_model_tracking_error() {
    const EkfTruth t = arz_truth();
    EkfConfig cfg;
    cfg.q_rho = 1e-8;
    cfg.q_u = 1e-6;
    cfg.p0_rho = 1e-6;
    cfg.p0_u = 1e-2;
    const auto obs = read_truth(t, 5, 0.0, 0.0);
    const auto r = run_ekf(obs, t.bc, kEkfParams, t.grid, {0.0, 0.0}, cfg, std::make_pair(t.rho0, t.u0));
    return {relative_error(r.mean.rho(), t.solution.field.rho()), relative_error(r.mean.u(), t.solution.field.u())};
}

/// Smallest eigenvalue of the covariance relative to its largest diagonal
/// entry, and the largest asymmetry, over every step of a noisy run.
inline std::pair<double, double> noisy_run_covariance_extremes() {
    const EkfTruth t = arz_truth();
    const auto obs = read_truth(t, 4, 0.01, 1.0);
    double lowest = INFINITY, asymmetry = 0.0;
    run_ekf(obs, t.bc, kEkfParams, t.grid, {0.01, 1.0}, EkfConfig{}, std::nullopt, [&](int, const EkfState& s) {
        asymmetry = std::max(asymmetry, (s.cov - s.cov.transpose()).cwiseAbs().maxCoeff());
        const double lo = Eigen::SelfAdjointEigenSolver<Matrix>(s.cov).eigenvalues().minCoeff();
        lowest = std::min(lowest, lo / s.cov.diagonal().maxCoeff());
    });
    return {lowest, asymmetry};
}

}  // namespace uqtse::testing
