#include "uqtse/ekf.hpp"

#include "uqtse/errors.hpp"
#include "uqtse/physics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <stdexcept>

namespace uqtse {

void EkfConfig::validate() const {
    if (!(q_rho >= 0.0) || !(q_u >= 0.0)) throw std::invalid_argument("process noise must be >= 0");
    if (!(p0_rho >= 0.0) || !(p0_u >= 0.0)) throw std::invalid_argument("initial variance must be >= 0");
    if (!(fd_step > 0.0)) throw std::invalid_argument("fd_step must be > 0");
}

MeasurementMap MeasurementMap::cells(const std::vector<int>& cells, int nx) {
    MeasurementMap m;
    for (int c : cells) {
        if (c < 0 || c >= nx) throw std::out_of_range("measurement cell outside the grid");
        m.index.push_back(c);
        m.index.push_back(nx + c);
    }
    return m;
}

Matrix MeasurementMap::matrix(int state_size) const {
    Matrix h = Matrix::Zero(static_cast<Eigen::Index>(index.size()), state_size);
    for (std::size_t j = 0; j < index.size(); ++j) {
        if (index[j] < 0 || index[j] >= state_size) throw std::out_of_range("measurement index outside the state");
        h(static_cast<Eigen::Index>(j), index[j]) = 1.0;
    }
    return h;
}

Matrix fd_jacobian(const StepMap& f, const Vector& x, double h) {
    const Eigen::Index n = x.size();
    Matrix jac;
    Vector xp = x;
    for (Eigen::Index c = 0; c < n; ++c) {
        xp[c] = x[c] + h;
        const Vector fp = f(xp);
        xp[c] = x[c] - h;
        const Vector fm = f(xp);
        xp[c] = x[c];
        if (c == 0) jac.resize(fp.size(), n);
        jac.col(c) = (fp - fm) / (2.0 * h);
    }
    return jac;
}

namespace {

void symmetrize(Matrix& p) {
    p = 0.5 * (p + p.transpose()).eval();
}

}  // namespace

void ekf_predict(EkfState& state, const StepMap& f, const Vector& q_diag, double fd_step) {
    const Matrix F = fd_jacobian(f, state.mean, fd_step);
    state.mean = f(state.mean);
    state.cov = F * state.cov * F.transpose();
    state.cov.diagonal() += q_diag;
    symmetrize(state.cov);
}

bool ekf_update(EkfState& state, const Vector& z, const MeasurementMap& map, const Vector& r_diag) {
    const auto m = static_cast<Eigen::Index>(map.size());
    if (z.size() != m || r_diag.size() != m) throw std::invalid_argument("measurement length does not match map");
    if (m == 0) return false;
    const auto n = static_cast<int>(state.mean.size());
    const Matrix H = map.matrix(n);
    const Matrix PHt = state.cov * H.transpose();
    Matrix S = H * PHt;
    S.diagonal() += r_diag;

    bool regularized = false;
    Eigen::LDLT<Matrix> ldlt(S);
    const double scale = std::max(1.0, S.diagonal().cwiseAbs().maxCoeff());
    const auto d = ldlt.vectorD();
    if (ldlt.info() != Eigen::Success || d.minCoeff() <= 1e-14 * scale) {
        S.diagonal().array() += 1e-10;
        ldlt.compute(S);
        regularized = true;
        std::cerr << "warning: singular innovation covariance, regularized by 1e-10 I\n";
    }
    const Matrix K = ldlt.solve(PHt.transpose()).transpose();
    const Vector innovation = z - H * state.mean;
    state.mean += K * innovation;

    Matrix A = -K * H;
    A.diagonal().array() += 1.0;
    state.cov = A * state.cov * A.transpose() + K * r_diag.asDiagonal() * K.transpose();
    symmetrize(state.cov);
    return regularized;
}

StepMap arz_step_map(const Grid& grid, const PhysicsParams& p, const BoundaryCondition& bc, double t) {
    const double limit = cfl_timestep(grid, p, TrafficModel::Arz);
    if (grid.dt() > limit * (1.0 + 1e-12))
        throw NumericalError("CFL violation in EKF process model: dt = " + std::to_string(grid.dt()) + " s");
    const int nx = grid.nx();
    ArzStepper stepper(grid.dx(), grid.dt(), p, bc);
    return [stepper, nx, t](const Vector& x) mutable {
        Vector out = x;
        std::span<double> rho(out.data(), static_cast<std::size_t>(nx));
        std::span<double> u(out.data() + nx, static_cast<std::size_t>(nx));
        stepper.step(rho, u, t);
        return out;
    };
}

namespace {

struct Reading {
    double rho = 0.0;
    double u = 0.0;
    int count = 0;
};

using LevelReadings = std::map<int, Reading>; // cell -> averaged reading

// Piecewise-linear interpolation over cell index, constant beyond the ends.
std::vector<double> interpolate_cells(const LevelReadings& readings, int nx, double Reading::*field) {
    std::vector<double> out(static_cast<std::size_t>(nx));
    std::vector<std::pair<int, double>> knots;
    for (const auto& [cell, r] : readings) knots.emplace_back(cell, r.*field / r.count);
    for (int i = 0; i < nx; ++i) {
        if (i <= knots.front().first) {
            out[i] = knots.front().second;
        } else if (i >= knots.back().first) {
            out[i] = knots.back().second;
        } else {
            std::size_t j = 1;
            while (knots[j].first < i) ++j;
            const auto [c0, v0] = knots[j - 1];
            const auto [c1, v1] = knots[j];
            out[i] = v0 + (v1 - v0) * static_cast<double>(i - c0) / (c1 - c0);
        }
    }
    return out;
}

}  // namespace

EkfResult run_ekf(const ObservationSet& obs, const BoundaryCondition& bc, const PhysicsParams& p, const Grid& grid,
                  const NoiseModel& noise, const EkfConfig& config,
                  std::optional<std::pair<std::vector<double>, std::vector<double>>> initial,
                  const std::function<void(int, const EkfState&)>& observer) {
    config.validate();
    noise.validate();
    const int nx = grid.nx();
    const int n = 2 * nx;

    std::map<int, LevelReadings> by_level;
    for (const auto& r : obs.records()) {
        Reading& acc = by_level[grid.level_of(r.t)][grid.cell_of(r.x)];
        acc.rho += r.rho;
        acc.u += r.u;
        ++acc.count;
    }

    EkfState state{Vector(n), Matrix::Zero(n, n)};
    if (initial) {
        if (static_cast<int>(initial->first.size()) != nx || static_cast<int>(initial->second.size()) != nx)
            throw std::invalid_argument("initial EKF state has wrong size");
        for (int i = 0; i < nx; ++i) {
            state.mean[i] = initial->first[i];
            state.mean[nx + i] = initial->second[i];
        }
    } else {
        if (by_level.empty()) throw std::invalid_argument("EKF needs observations or an explicit initial state");
        const auto& first = by_level.begin()->second;
        const auto rho0 = interpolate_cells(first, nx, &Reading::rho);
        const auto u0 = interpolate_cells(first, nx, &Reading::u);
        for (int i = 0; i < nx; ++i) {
            state.mean[i] = std::clamp(rho0[i], 0.0, p.rho_max);
            state.mean[nx + i] = std::max(0.0, u0[i]);
        }
    }
    for (int i = 0; i < nx; ++i) {
        state.cov(i, i) = config.p0_rho;
        state.cov(nx + i, nx + i) = config.p0_u;
    }

    Vector q(n);
    q.head(nx).setConstant(config.q_rho);
    q.tail(nx).setConstant(config.q_u);

    std::vector<double> mean_rho(grid.size()), mean_u(grid.size()), var_rho(grid.size()), var_u(grid.size());
    EkfResult result{StateField(grid, std::vector<double>(grid.size()), std::vector<double>(grid.size())),
                     StateField(grid, std::vector<double>(grid.size()), std::vector<double>(grid.size())), 0};

    for (int k = 0; k < grid.nt(); ++k) {
        if (k > 0) ekf_predict(state, arz_step_map(grid, p, bc, (k - 1) * grid.dt()), q, config.fd_step);
        const auto it = by_level.find(k);
        if (it != by_level.end()) {
            std::vector<int> cells;
            for (const auto& [cell, r] : it->second) cells.push_back(cell);
            const MeasurementMap map = MeasurementMap::cells(cells, nx);
            Vector z(static_cast<Eigen::Index>(map.size())), r_diag(static_cast<Eigen::Index>(map.size()));
            Eigen::Index j = 0;
            for (const auto& [cell, r] : it->second) {
                z[j] = r.rho / r.count;
                r_diag[j++] = noise.sigma_rho * noise.sigma_rho;
                z[j] = r.u / r.count;
                r_diag[j++] = noise.sigma_u * noise.sigma_u;
            }
            if (ekf_update(state, z, map, r_diag)) ++result.regularized_updates;
            // Project back onto physical states before the next solver step.
            for (int i = 0; i < nx; ++i) {
                state.mean[i] = std::clamp(state.mean[i], 0.0, p.rho_max);
                state.mean[nx + i] = std::max(0.0, state.mean[nx + i]);
            }
        }
        if (!state.mean.allFinite() || !state.cov.allFinite())
            throw NumericalError("EKF diverged at level " + std::to_string(k));
        if (observer) observer(k, state);
        for (int i = 0; i < nx; ++i) {
            const std::size_t idx = grid.index(i, k);
            mean_rho[idx] = state.mean[i];
            mean_u[idx] = state.mean[nx + i];
            var_rho[idx] = std::max(0.0, state.cov(i, i));
            var_u[idx] = std::max(0.0, state.cov(nx + i, nx + i));
        }
    }
    result.mean = StateField(grid, std::move(mean_rho), std::move(mean_u));
    result.variance = StateField(grid, std::move(var_rho), std::move(var_u));
    return result;
}

}  // namespace uqtse
