#pragma once

// Greenshields fundamental diagram, LWR/ARZ fluxes and the PDE residuals the
// physics-informed losses penalize. Everything here is a pure function of SI
// quantities.

#include "uqtse/domain.hpp"

#include <array>

namespace uqtse {

/// Point values and first partial derivatives of a candidate (rho, u) field.
struct DerivativeBundle {
    double rho = 0.0;
    double u = 0.0;
    double d_rho_dt = 0.0;
    double d_rho_dx = 0.0;
    double d_u_dt = 0.0;
    double d_u_dx = 0.0;
};

struct ResidualValues {
    double r1 = 0.0; // conservation, veh/(m s)
    double r2 = 0.0; // ARZ momentum, m/s^2
};

/// U_eq(rho) = u_max (1 - rho / rho_max). Not clamped.
double equilibrium_speed(double rho, const PhysicsParams& p);

/// q = rho U_eq(rho).
double lwr_flux(double rho, const PhysicsParams& p);

/// h(rho) = U_eq(0) - U_eq(rho) = u_max rho / rho_max.
double arz_h(double rho, const PhysicsParams& p);
inline double arz_h_prime(const PhysicsParams& p) { return p.u_max / p.rho_max; }

/// r1 = d_t rho + d_x(rho u), expanded with the product rule.
ResidualValues lwr_residual(const DerivativeBundle& b, const PhysicsParams& p);

/// r1 as above plus
/// r2 = d_t(u + h) + u d_x(u + h) - (U_eq(rho) - u) / tau.
ResidualValues arz_residual(const DerivativeBundle& b, const PhysicsParams& p);

// Partials of one residual with respect to the bundle entries, ordered
// {rho, u, d_rho_dt, d_rho_dx, d_u_dt, d_u_dx}, and the parameters, ordered
// {rho_max, u_max, tau}.
struct ResidualPartials {
    std::array<double, 6> wrt_bundle{};
    std::array<double, 3> wrt_params{};
};

ResidualPartials conservation_residual_partials(const DerivativeBundle& b);
ResidualPartials arz_momentum_residual_partials(const DerivativeBundle& b, const PhysicsParams& p);

}  // namespace uqtse
