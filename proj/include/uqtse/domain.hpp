#pragma once

// Geometry, grids, state fields, physics parameters and datasets shared by
// every other part of the library. All types validate on construction and are
// immutable afterwards, so they can be shared read-only between workers.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace uqtse {

/// Road segment [0, L] observed over [0, T].
class SpaceTimeDomain {
public:
    SpaceTimeDomain(double length_m, double horizon_s);

    double length() const { return length_; }
    double horizon() const { return horizon_; }
    bool contains(double x, double t) const;

private:
    double length_;
    double horizon_;
};

/// Uniform discretization: nx cells in space (cell-centred), nt levels in time
/// (node-indexed, t_k = k * dt for k < nt).
class Grid {
public:
    Grid(SpaceTimeDomain domain, int nx, int nt);

    const SpaceTimeDomain& domain() const { return domain_; }
    int nx() const { return nx_; }
    int nt() const { return nt_; }
    double dx() const { return dx_; }
    double dt() const { return dt_; }
    std::size_t size() const { return static_cast<std::size_t>(nx_) * static_cast<std::size_t>(nt_); }

    // Throws std::out_of_range for indices outside the grid.
    std::pair<double, double> cell_center(int i, int k) const;
    std::size_t index(int i, int k) const { return static_cast<std::size_t>(k) * nx_ + i; }

    // Nearest cell / time level for a physical point, clamped to the grid.
    int cell_of(double x) const;
    int level_of(double t) const;

private:
    SpaceTimeDomain domain_;
    int nx_;
    int nt_;
    double dx_;
    double dt_;
};

/// Density (veh/m) and velocity (m/s) on a grid, stored level-major:
/// value(i, k) = data[k * nx + i].
class StateField {
public:
    StateField(Grid grid, std::vector<double> rho, std::vector<double> u);

    const Grid& grid() const { return grid_; }
    double rho(int i, int k) const { return rho_[grid_.index(i, k)]; }
    double u(int i, int k) const { return u_[grid_.index(i, k)]; }
    std::span<const double> rho() const { return rho_; }
    std::span<const double> u() const { return u_; }
    std::span<const double> rho_level(int k) const;
    std::span<const double> u_level(int k) const;

private:
    Grid grid_;
    std::vector<double> rho_;
    std::vector<double> u_;
};

/// Fundamental-diagram parameters. tau is only used by the ARZ model.
struct PhysicsParams {
    double rho_max;
    double u_max;
    double tau;

    PhysicsParams(double rho_max_, double u_max_, double tau_ = 5.0);
    bool operator==(const PhysicsParams&) const = default;
};

struct TruncatedGaussian {
    double mean;
    double stddev;
    double lower;
    double upper;

    void validate(const char* name) const;
    double sample(std::mt19937_64& rng) const;
};

/// Independent truncated Gaussians over (rho_max, u_max, tau).
struct ParamDistribution {
    TruncatedGaussian rho_max;
    TruncatedGaussian u_max;
    TruncatedGaussian tau;

    void validate() const;
    PhysicsParams mean() const;
    PhysicsParams upper() const;
};

PhysicsParams sample_params(const ParamDistribution& dist, std::uint64_t seed);
PhysicsParams sample_params(const ParamDistribution& dist, std::mt19937_64& rng);

struct NoiseModel {
    double sigma_rho = 0.0;
    double sigma_u = 0.0;

    void validate() const;
};

struct ObservationRecord {
    double x;
    double t;
    double rho;
    double u;
};

class ObservationSet {
public:
    ObservationSet() = default;
    // Validates every record against the domain.
    ObservationSet(const SpaceTimeDomain& domain, std::vector<ObservationRecord> records);

    std::span<const ObservationRecord> records() const { return records_; }
    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }
    const ObservationRecord& operator[](std::size_t i) const { return records_[i]; }

private:
    std::vector<ObservationRecord> records_;
};

struct CollocationPoint {
    double x;
    double t;
};

class CollocationSet {
public:
    CollocationSet() = default;
    CollocationSet(const SpaceTimeDomain& domain, std::vector<CollocationPoint> points);

    std::span<const CollocationPoint> points() const { return points_; }
    std::size_t size() const { return points_.size(); }
    bool empty() const { return points_.empty(); }
    const CollocationPoint& operator[](std::size_t i) const { return points_[i]; }

private:
    std::vector<CollocationPoint> points_;
};

/// Maps physical coordinates onto [0, 1] (or [-1, 1] when centered) and
/// states onto O(1) network quantities by fixed scales.
class Normalization {
public:
    static constexpr double kRhoScale = 1.0;    // veh/m
    static constexpr double kSpeedScale = 50.0; // m/s

    explicit Normalization(SpaceTimeDomain domain, double rho_scale = kRhoScale, double u_scale = kSpeedScale,
                           bool centered = false);

    const SpaceTimeDomain& domain() const { return domain_; }
    std::pair<double, double> normalize_point(double x, double t) const;
    std::pair<double, double> denormalize_point(double xn, double tn) const;
    double rho_scale() const { return rho_scale_; }
    double u_scale() const { return u_scale_; }
    bool centered() const { return centered_; }
    // Chain-rule factors d(xn)/dx and d(tn)/dt.
    double dxn_dx() const { return span() / domain_.length(); }
    double dtn_dt() const { return span() / domain_.horizon(); }

private:
    double span() const { return centered_ ? 2.0 : 1.0; }

    SpaceTimeDomain domain_;
    double rho_scale_;
    double u_scale_;
    bool centered_;
};

/// Deterministic sub-seed for stream `stream` of a master seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

}  // namespace uqtse
