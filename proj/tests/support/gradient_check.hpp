#pragma once

// Central-difference checks of the analytic PhysGAN gradients on small random
// models. Shared by the unit tests and the acceptance runner.

#include "uqtse/io.hpp"
#include "uqtse/physgan.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace uqtse::testing {

enum class LossFamily { Discriminator, Generator, Physics };

inline const char* family_name(LossFamily f) {
    switch (f) {
    case LossFamily::Discriminator: return "L_D";
    case LossFamily::Generator: return "L_G";
    case LossFamily::Physics: return "L_phy";
    }
    return "?";
}

struct GradientCase {
    LossFamily family = LossFamily::Generator;
    GanMode mode = GanMode::Arz;
    double alpha = 0.5;
    bool classic = false;
    bool centered = false;
    bool nondimensional = false;
    std::uint64_t seed = 0;

    std::string label() const {
        return std::string(family_name(family)) + " mode=" + to_string(mode) + " alpha=" + format_double(alpha) +
               (classic ? " classic" : "") + (centered ? " centered" : "") + (nondimensional ? " nondim" : "") +
               " seed=" + std::to_string(seed);
    }
};

struct GradientReport {
    double rel_params = 0.0; // network parameters (phi for L_D, theta otherwise)
    double rel_lambda = 0.0; // log lambda; not checked for L_D, whose update leaves lambda alone
    double worst() const { return std::max(rel_params, rel_lambda); }
};

inline double relative_difference(const Vector& a, const Vector& b) {
    const double scale = std::max({a.norm(), b.norm(), 1e-12});
    return (a - b).norm() / scale;
}

/// Random widths, batch, latent size, parameters, standardization and lambda.
inline GradientReport check_gradients(const GradientCase& c) {
    std::mt19937_64 rng(c.seed * 7919 + 17);
    std::uniform_int_distribution<int> width(3, 7), batch(3, 9), latent(1, 2);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    PhysGanConfig cfg;
    cfg.mode = c.mode;
    cfg.latent_dim = latent(rng);
    cfg.generator_hidden = {width(rng), width(rng)};
    cfg.discriminator_hidden = {width(rng)};
    cfg.lambda_init = PhysicsParams(0.3 + 0.2 * unit(rng), 15.0 + 10.0 * unit(rng), 5.0 + 10.0 * unit(rng));
    cfg.classic_gan_losses = c.classic;
    cfg.centered_coordinates = c.centered;
    cfg.nondimensional_residuals = c.nondimensional;
    cfg.rho_scale = 0.2 + 0.8 * unit(rng);
    cfg.u_scale = 20.0 + 30.0 * unit(rng);
    PhysGan model(cfg, SpaceTimeDomain(1000.0, 300.0), rng());
    model.set_standardization({0.3 * normal(rng), 0.5 + unit(rng), 0.3 * normal(rng), 0.5 + unit(rng)});
    // Moderate output offsets keep densities positive and residuals non-trivial.
    Mlp& g = model.generator();
    g.bias(g.layer_count() - 1).setConstant(0.5);

    const Eigen::Index n = batch(rng);
    const double lo = c.centered ? -1.0 : 0.0;
    auto coords = [&] {
        Matrix m(2, n);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = lo + (1.0 - lo) * unit(rng);
        return m;
    };
    auto latents = [&] {
        Matrix m(cfg.latent_dim, n);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
        return m;
    };
    const Matrix obs_coords = coords(), col_coords = coords(), z_obs = latents(), z_col = latents();
    Matrix states(2, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        states(0, j) = 0.1 + 0.5 * unit(rng);
        states(1, j) = 0.2 + 0.6 * unit(rng);
    }

    const double alpha = c.alpha;
    std::function<double(const PhysGan&)> loss;
    switch (c.family) {
    case LossFamily::Discriminator:
        loss = [&](const PhysGan& m) { return loss_discriminator(m, obs_coords, states, z_obs, nullptr); };
        break;
    case LossFamily::Generator:
        loss = [&](const PhysGan& m) {
            return loss_generator(m, obs_coords, z_obs, col_coords, z_col, alpha, nullptr, nullptr).total;
        };
        break;
    case LossFamily::Physics:
        loss = [&](const PhysGan& m) { return loss_physics(m, col_coords, z_col, nullptr, nullptr); };
        break;
    }

    Vector g_params, g_lambda = Vector::Zero(3);
    if (c.family == LossFamily::Discriminator) {
        g_params = Vector::Zero(static_cast<Eigen::Index>(model.discriminator().parameter_count()));
        loss_discriminator(model, obs_coords, states, z_obs, &g_params);
    } else {
        g_params = Vector::Zero(static_cast<Eigen::Index>(model.generator().parameter_count()));
        if (c.family == LossFamily::Generator)
            loss_generator(model, obs_coords, z_obs, col_coords, z_col, alpha, &g_params, &g_lambda);
        else
            loss_physics(model, col_coords, z_col, &g_params, &g_lambda);
    }

    const double h = 1e-6;
    Vector fd_params(g_params.size()), fd_lambda(3);
    for (Eigen::Index i = 0; i < g_params.size(); ++i) {
        PhysGan plus = model, minus = model;
        Mlp& np = c.family == LossFamily::Discriminator ? plus.discriminator() : plus.generator();
        Mlp& nm = c.family == LossFamily::Discriminator ? minus.discriminator() : minus.generator();
        np.parameters()[i] += h;
        nm.parameters()[i] -= h;
        fd_params[i] = (loss(plus) - loss(minus)) / (2 * h);
    }
    for (Eigen::Index i = 0; i < 3; ++i) {
        PhysGan plus = model, minus = model;
        plus.log_lambda()[i] += h;
        minus.log_lambda()[i] -= h;
        fd_lambda[i] = (loss(plus) - loss(minus)) / (2 * h);
    }
    if (c.family == LossFamily::Discriminator) return {relative_difference(g_params, fd_params), 0.0};
    return {relative_difference(g_params, fd_params), relative_difference(g_lambda, fd_lambda)};
}

/// The fixed set of 20 configurations covering every loss family, alpha
/// value and both physics modes, with lambda gradients.
inline std::vector<GradientCase> standard_gradient_cases() {
    std::vector<GradientCase> out;
    std::uint64_t seed = 1;
    for (GanMode m : {GanMode::Lwr, GanMode::Arz, GanMode::PureGan})
        out.push_back({LossFamily::Discriminator, m, 0.5, false, false, false, seed++});
    out.push_back({LossFamily::Discriminator, GanMode::Arz, 0.5, true, true, false, seed++});
    for (GanMode m : {GanMode::Lwr, GanMode::Arz})
        for (double a : {0.0, 0.5, 1.0}) out.push_back({LossFamily::Generator, m, a, false, false, false, seed++});
    out.push_back({LossFamily::Generator, GanMode::PureGan, 0.5, false, false, false, seed++});
    out.push_back({LossFamily::Generator, GanMode::Arz, 0.5, true, true, false, seed++});
    out.push_back({LossFamily::Generator, GanMode::Lwr, 0.5, true, true, false, seed++});
    out.push_back({LossFamily::Generator, GanMode::Arz, 0.0, false, true, true, seed++});
    for (GanMode m : {GanMode::Lwr, GanMode::Arz}) {
        out.push_back({LossFamily::Physics, m, 0.5, false, false, false, seed++});
        out.push_back({LossFamily::Physics, m, 0.5, false, true, false, seed++});
        out.push_back({LossFamily::Physics, m, 0.5, false, false, true, seed++});
    }
    return out;
}

}  // namespace uqtse::testing
