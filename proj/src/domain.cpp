#include "uqtse/domain.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace uqtse {

SpaceTimeDomain::SpaceTimeDomain(double length_m, double horizon_s)
    : length_(length_m), horizon_(horizon_s) {
    if (!(length_m > 0.0) || !std::isfinite(length_m))
        throw std::invalid_argument("domain length must be positive");
    if (!(horizon_s > 0.0) || !std::isfinite(horizon_s))
        throw std::invalid_argument("domain horizon must be positive");
}

bool SpaceTimeDomain::contains(double x, double t) const {
    return x >= 0.0 && x <= length_ && t >= 0.0 && t <= horizon_;
}

Grid::Grid(SpaceTimeDomain domain, int nx, int nt)
    : domain_(domain), nx_(nx), nt_(nt) {
    if (nx < 2) throw std::invalid_argument("grid needs at least 2 cells");
    if (nt < 2) throw std::invalid_argument("grid needs at least 2 time levels");
    dx_ = domain.length() / nx;
    dt_ = domain.horizon() / nt;
}

std::pair<double, double> Grid::cell_center(int i, int k) const {
    if (i < 0 || i >= nx_ || k < 0 || k >= nt_)
        throw std::out_of_range("cell index (" + std::to_string(i) + ", " + std::to_string(k) +
                                ") outside grid");
    return {(i + 0.5) * dx_, k * dt_};
}

int Grid::cell_of(double x) const {
    return std::clamp(static_cast<int>(std::floor(x / dx_)), 0, nx_ - 1);
}

int Grid::level_of(double t) const {
    return std::clamp(static_cast<int>(std::lround(t / dt_)), 0, nt_ - 1);
}

StateField::StateField(Grid grid, std::vector<double> rho, std::vector<double> u)
    : grid_(grid), rho_(std::move(rho)), u_(std::move(u)) {
    if (rho_.size() != grid_.size() || u_.size() != grid_.size())
        throw std::invalid_argument("state field size does not match grid");
    for (std::size_t n = 0; n < rho_.size(); ++n) {
        if (!std::isfinite(rho_[n]) || rho_[n] < 0.0)
            throw std::invalid_argument("density must be finite and nonnegative (index " +
                                        std::to_string(n) + ")");
        if (!std::isfinite(u_[n]) || u_[n] < 0.0)
            throw std::invalid_argument("velocity must be finite and nonnegative (index " +
                                        std::to_string(n) + ")");
    }
}

std::span<const double> StateField::rho_level(int k) const {
    return std::span<const double>(rho_).subspan(grid_.index(0, k), grid_.nx());
}

std::span<const double> StateField::u_level(int k) const {
    return std::span<const double>(u_).subspan(grid_.index(0, k), grid_.nx());
}

PhysicsParams::PhysicsParams(double rho_max_, double u_max_, double tau_)
    : rho_max(rho_max_), u_max(u_max_), tau(tau_) {
    if (!(rho_max > 0.0) || !(u_max > 0.0) || !(tau > 0.0) || !std::isfinite(rho_max) ||
        !std::isfinite(u_max) || !std::isfinite(tau))
        throw std::invalid_argument("physics parameters must be finite and positive");
}

void TruncatedGaussian::validate(const char* name) const {
    const std::string n(name);
    if (!std::isfinite(stddev) || stddev < 0.0) throw std::invalid_argument(n + ": std must be >= 0");
    if (!(lower < upper)) throw std::invalid_argument(n + ": lower bound must be below upper");
    if (mean < lower || mean > upper)
        throw std::invalid_argument(n + ": mean must lie within the truncation bounds");
}

double TruncatedGaussian::sample(std::mt19937_64& rng) const {
    if (stddev == 0.0) return mean;
    std::normal_distribution<double> normal(mean, stddev);
    for (int attempt = 0; attempt < 1000; ++attempt) {
        const double v = normal(rng);
        if (v >= lower && v <= upper) return v;
    }
    throw std::runtime_error("truncated Gaussian rejection sampling exhausted 1000 attempts");
}

void ParamDistribution::validate() const {
    rho_max.validate("rho_max");
    u_max.validate("u_max");
    tau.validate("tau");
    if (rho_max.lower <= 0.0 || u_max.lower <= 0.0 || tau.lower <= 0.0)
        throw std::invalid_argument("physics parameter bounds must be positive");
}

PhysicsParams ParamDistribution::mean() const {
    return {rho_max.mean, u_max.mean, tau.mean};
}

PhysicsParams ParamDistribution::upper() const {
    return {rho_max.upper, u_max.upper, tau.upper};
}

PhysicsParams sample_params(const ParamDistribution& dist, std::mt19937_64& rng) {
    dist.validate();
    const double rm = dist.rho_max.sample(rng);
    const double um = dist.u_max.sample(rng);
    const double tau = dist.tau.sample(rng);
    return {rm, um, tau};
}

PhysicsParams sample_params(const ParamDistribution& dist, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return sample_params(dist, rng);
}

void NoiseModel::validate() const {
    if (!(sigma_rho >= 0.0) || !(sigma_u >= 0.0))
        throw std::invalid_argument("noise standard deviations must be nonnegative");
}

ObservationSet::ObservationSet(const SpaceTimeDomain& domain, std::vector<ObservationRecord> records)
    : records_(std::move(records)) {
    for (std::size_t n = 0; n < records_.size(); ++n) {
        const auto& r = records_[n];
        if (!domain.contains(r.x, r.t))
            throw std::invalid_argument("observation " + std::to_string(n) + " outside domain");
        if (!std::isfinite(r.rho) || !std::isfinite(r.u) || r.rho < 0.0 || r.u < 0.0)
            throw std::invalid_argument("observation " + std::to_string(n) +
                                        " has negative or non-finite state");
    }
}

CollocationSet::CollocationSet(const SpaceTimeDomain& domain, std::vector<CollocationPoint> points)
    : points_(std::move(points)) {
    for (std::size_t n = 0; n < points_.size(); ++n)
        if (!domain.contains(points_[n].x, points_[n].t))
            throw std::invalid_argument("collocation point " + std::to_string(n) + " outside domain");
}

Normalization::Normalization(SpaceTimeDomain domain, double rho_scale, double u_scale, bool centered)
    : domain_(domain), rho_scale_(rho_scale), u_scale_(u_scale), centered_(centered) {
    if (!(rho_scale > 0.0) || !(u_scale > 0.0) || !std::isfinite(rho_scale) || !std::isfinite(u_scale))
        throw std::invalid_argument("state scales must be positive and finite");
}

std::pair<double, double> Normalization::normalize_point(double x, double t) const {
    if (!domain_.contains(x, t)) throw std::out_of_range("point outside space-time domain");
    const double lo = centered_ ? -1.0 : 0.0;
    return {lo + span() * x / domain_.length(), lo + span() * t / domain_.horizon()};
}

std::pair<double, double> Normalization::denormalize_point(double xn, double tn) const {
    const double lo = centered_ ? -1.0 : 0.0;
    if (xn < lo || xn > 1.0 || tn < lo || tn > 1.0) throw std::out_of_range("normalized point outside the unit box");
    return {(xn - lo) / span() * domain_.length(), (tn - lo) / span() * domain_.horizon()};
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace uqtse
