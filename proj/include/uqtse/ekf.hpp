#pragma once

// Extended Kalman filter over the ARZ discretization.
//
// State layout: x = [rho_0 .. rho_{nx-1}, u_0 .. u_{nx-1}] (primitive
// variables). The process model is one ArzStepper step; its Jacobian comes
// from central differences. Detectors observe rho and u of their cell, so
// the measurement map is a row selection.

#include "uqtse/domain.hpp"
#include "uqtse/nn.hpp"
#include "uqtse/solver.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace uqtse {

struct EkfConfig {
    double q_rho = 1e-6;  // process noise per cell per step, veh^2/m^2
    double q_u = 1e-4;    // m^2/s^2
    double p0_rho = 1e-4; // initial variance
    double p0_u = 1.0;
    double fd_step = 1e-6;

    void validate() const;
};

struct EkfState {
    Vector mean;
    Matrix cov;
};

/// Measurement rows: entry j observes state component index[j].
struct MeasurementMap {
    std::vector<int> index;

    /// rho and u of each listed cell, cell-major.
    static MeasurementMap cells(const std::vector<int>& cells, int nx);
    std::size_t size() const { return index.size(); }
    Matrix matrix(int state_size) const;
};

using StepMap = std::function<Vector(const Vector&)>;

/// Central-difference Jacobian of f at x with perturbation h per component.
Matrix fd_jacobian(const StepMap& f, const Vector& x, double h);

/// mean <- f(mean); P <- F P F^T + diag(q); P symmetrized.
void ekf_predict(EkfState& state, const StepMap& f, const Vector& q_diag, double fd_step = 1e-6);

/// Standard gain with Joseph-form covariance update. A singular innovation
/// covariance is regularized by +1e-10 I; the return value reports that.
bool ekf_update(EkfState& state, const Vector& z, const MeasurementMap& map, const Vector& r_diag);

/// One ARZ step from time t as a map on the stacked state. Throws
/// NumericalError if dt violates the CFL bound for p.
StepMap arz_step_map(const Grid& grid, const PhysicsParams& p, const BoundaryCondition& bc, double t);

struct EkfResult {
    StateField mean;
    StateField variance;
    long regularized_updates = 0;
};

/// Filters over every grid level: predict each step, then update with the
/// detector reads mapped to that level (labels at one (x, t) are averaged).
/// Without `initial`, the first mean is interpolated from the earliest reads.
/// The observer, if set, sees the state after each level's update.
EkfResult run_ekf(const ObservationSet& obs, const BoundaryCondition& bc, const PhysicsParams& p, const Grid& grid,
                  const NoiseModel& noise, const EkfConfig& config,
                  std::optional<std::pair<std::vector<double>, std::vector<double>>> initial = std::nullopt,
                  const std::function<void(int, const EkfState&)>& observer = {});

}  // namespace uqtse
