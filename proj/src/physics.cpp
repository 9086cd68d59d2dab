#include "uqtse/physics.hpp"

namespace uqtse {

double equilibrium_speed(double rho, const PhysicsParams& p) {
    return p.u_max * (1.0 - rho / p.rho_max);
}

double lwr_flux(double rho, const PhysicsParams& p) {
    return rho * equilibrium_speed(rho, p);
}

double arz_h(double rho, const PhysicsParams& p) {
    return p.u_max * rho / p.rho_max;
}

ResidualValues lwr_residual(const DerivativeBundle& b, const PhysicsParams&) {
    return {b.d_rho_dt + b.u * b.d_rho_dx + b.rho * b.d_u_dx, 0.0};
}

ResidualValues arz_residual(const DerivativeBundle& b, const PhysicsParams& p) {
    const double hp = arz_h_prime(p);
    const double r1 = b.d_rho_dt + b.u * b.d_rho_dx + b.rho * b.d_u_dx;
    const double transport = (b.d_u_dt + hp * b.d_rho_dt) + b.u * (b.d_u_dx + hp * b.d_rho_dx);
    const double relaxation = (equilibrium_speed(b.rho, p) - b.u) / p.tau;
    return {r1, transport - relaxation};
}

ResidualPartials conservation_residual_partials(const DerivativeBundle& b) {
    ResidualPartials out;
    out.wrt_bundle = {b.d_u_dx, b.d_rho_dx, 1.0, b.u, 0.0, b.rho};
    return out;
}

ResidualPartials arz_momentum_residual_partials(const DerivativeBundle& b, const PhysicsParams& p) {
    const double rm = p.rho_max;
    const double um = p.u_max;
    const double tau = p.tau;
    const double hp = um / rm;
    const double lagrangian_rho = b.d_rho_dt + b.u * b.d_rho_dx;

    ResidualPartials out;
    out.wrt_bundle = {
        hp / tau,                               // rho, through U_eq
        b.d_u_dx + hp * b.d_rho_dx + 1.0 / tau, // u
        hp,                                     // d_rho_dt
        b.u * hp,                               // d_rho_dx
        1.0,                                    // d_u_dt
        b.u,                                    // d_u_dx
    };
    out.wrt_params = {
        -lagrangian_rho * um / (rm * rm) - um * b.rho / (rm * rm * tau),
        lagrangian_rho / rm - (1.0 - b.rho / rm) / tau,
        (equilibrium_speed(b.rho, p) - b.u) / (tau * tau),
    };
    return out;
}

}  // namespace uqtse
