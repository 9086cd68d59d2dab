#include "uqtse/physgan.hpp"

#include "uqtse/errors.hpp"
#include "uqtse/physics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace uqtse {

std::string to_string(GanMode m) {
    switch (m) {
    case GanMode::Lwr: return "lwr";
    case GanMode::Arz: return "arz";
    case GanMode::PureGan: return "gan";
    }
    return "?";
}

GanMode gan_mode_from_string(const std::string& s) {
    if (s == "lwr") return GanMode::Lwr;
    if (s == "arz") return GanMode::Arz;
    if (s == "gan") return GanMode::PureGan;
    throw std::invalid_argument("unknown model mode '" + s + "' (expected lwr, arz or gan)");
}

void PhysGanConfig::validate() const {
    if (latent_dim < 1) throw std::invalid_argument("latent_dim must be >= 1");
    if (!(output_init_scale >= 0.0)) throw std::invalid_argument("output_init_scale must be >= 0");
    if (!(rho_scale > 0.0) || !(u_scale > 0.0)) throw std::invalid_argument("state scales must be > 0");
    for (int w : generator_hidden)
        if (w < 1) throw std::invalid_argument("generator widths must be >= 1");
    for (int w : discriminator_hidden)
        if (w < 1) throw std::invalid_argument("discriminator widths must be >= 1");
}

namespace {

std::vector<int> generator_widths(const PhysGanConfig& c) {
    std::vector<int> w{2 + c.latent_dim};
    w.insert(w.end(), c.generator_hidden.begin(), c.generator_hidden.end());
    w.push_back(c.mode == GanMode::Lwr ? 1 : 2);
    return w;
}

std::vector<int> discriminator_widths(const PhysGanConfig& c) {
    std::vector<int> w{4};
    w.insert(w.end(), c.discriminator_hidden.begin(), c.discriminator_hidden.end());
    w.push_back(1);
    return w;
}

Vector log_params(const PhysicsParams& p) {
    Vector v(3);
    v << std::log(p.rho_max), std::log(p.u_max), std::log(p.tau);
    return v;
}

double sigmoid(double o) {
    return o >= 0.0 ? 1.0 / (1.0 + std::exp(-o)) : std::exp(o) / (1.0 + std::exp(o));
}

bool clamped(double s) {
    return s < kScoreClamp || s > 1.0 - kScoreClamp;
}

double clamp_score(double s) {
    return std::clamp(s, kScoreClamp, 1.0 - kScoreClamp);
}

}  // namespace

PhysGan::PhysGan(PhysGanConfig config, SpaceTimeDomain domain, std::uint64_t init_seed)
    : config_(std::move(config)), norm_(domain, config_.rho_scale, config_.u_scale, config_.centered_coordinates) {
    config_.validate();
    std::mt19937_64 rng(init_seed);
    generator_ = Mlp::xavier(generator_widths(config_), rng);
    discriminator_ = Mlp::xavier(discriminator_widths(config_), rng);
    log_lambda_ = log_params(config_.lambda_init);
}

PhysGan::PhysGan(PhysGanConfig config, SpaceTimeDomain domain, Mlp generator, Mlp discriminator, Vector log_lambda)
    : config_(std::move(config)), norm_(domain, config_.rho_scale, config_.u_scale, config_.centered_coordinates), generator_(std::move(generator)),
      discriminator_(std::move(discriminator)), log_lambda_(std::move(log_lambda)) {
    config_.validate();
    if (generator_.widths() != generator_widths(config_))
        throw std::invalid_argument("generator shape does not match configuration");
    if (discriminator_.widths() != discriminator_widths(config_))
        throw std::invalid_argument("discriminator shape does not match configuration");
    if (log_lambda_.size() != 3) throw std::invalid_argument("log_lambda must have 3 entries");
}

PhysicsParams PhysGan::lambda() const {
    if (!physics_enabled()) return config_.lambda_init;
    return {std::exp(log_lambda_[0]), std::exp(log_lambda_[1]), std::exp(log_lambda_[2])};
}

Matrix PhysGan::generator_inputs(const Matrix& coords, const Matrix& z) const {
    if (coords.rows() != 2 || z.rows() != config_.latent_dim || z.cols() != coords.cols())
        throw std::invalid_argument("generator batch shape mismatch");
    Matrix in(2 + config_.latent_dim, coords.cols());
    in.topRows(2) = coords;
    in.bottomRows(config_.latent_dim) = z;
    return in;
}

namespace {

// Normalized (rho, u) rows from raw generator outputs.
Matrix states_from_outputs(const PhysGan& model, const Matrix& g) {
    if (model.mode() != GanMode::Lwr) return g;
    const PhysicsParams p = model.lambda();
    const Normalization& n = model.normalization();
    Matrix s(2, g.cols());
    s.row(0) = g.row(0);
    for (Eigen::Index j = 0; j < g.cols(); ++j)
        s(1, j) = equilibrium_speed(n.rho_scale() * g(0, j), p) / n.u_scale();
    return s;
}

// Pulls adjoints of normalized states back onto generator outputs (and, in
// LWR mode, onto log lambda through the equilibrium speed map).
Matrix state_adjoint_to_outputs(const PhysGan& model, const Matrix& g, const Matrix& state_adj,
                                Vector* grad_log_lambda) {
    if (model.mode() != GanMode::Lwr) return state_adj;
    const PhysicsParams p = model.lambda();
    const double sr = model.normalization().rho_scale();
    const double su = model.normalization().u_scale();
    Matrix out(1, g.cols());
    double g_rm = 0.0, g_um = 0.0;
    for (Eigen::Index j = 0; j < g.cols(); ++j) {
        const double rho = sr * g(0, j);
        const double au = state_adj(1, j);
        out(0, j) = state_adj(0, j) - au * p.u_max * sr / (p.rho_max * su);
        g_um += au * (1.0 - rho / p.rho_max) / su;
        g_rm += au * p.u_max * rho / (p.rho_max * p.rho_max * su);
    }
    if (grad_log_lambda) {
        (*grad_log_lambda)[0] += g_rm * p.rho_max;
        (*grad_log_lambda)[1] += g_um * p.u_max;
    }
    return out;
}

}  // namespace

Matrix PhysGan::generate_normalized(const Matrix& coords, const Matrix& z) const {
    return states_from_outputs(*this, generator_.forward(generator_inputs(coords, z)));
}

std::pair<double, double> PhysGan::generate(double xn, double tn, std::span<const double> z) const {
    if (static_cast<int>(z.size()) != config_.latent_dim) throw std::invalid_argument("latent length mismatch");
    Matrix coords(2, 1);
    coords << xn, tn;
    const Matrix zm = Eigen::Map<const Matrix>(z.data(), config_.latent_dim, 1);
    const Matrix s = generate_normalized(coords, zm);
    return {s(0, 0) * norm_.rho_scale(), s(1, 0) * norm_.u_scale()};
}

double PhysGan::discriminator_score(double xn, double tn, double rho_n, double u_n) const {
    Matrix coords(2, 1), states(2, 1);
    coords << xn, tn;
    states << rho_n, u_n;
    return sigmoid(discriminator_.forward(discriminator_inputs(coords, states))(0, 0));
}

StateStandardization StateStandardization::fit(const Matrix& states) {
    if (states.rows() != 2 || states.cols() == 0) throw std::invalid_argument("standardization needs a 2 x n batch");
    const auto n = static_cast<double>(states.cols());
    const auto moments = [&](Eigen::Index r) {
        const double mean = states.row(r).mean();
        const double var = (states.row(r).array() - mean).square().sum() / n;
        return std::pair{mean, std::max(1e-3, std::sqrt(var))};
    };
    StateStandardization s;
    std::tie(s.rho_shift, s.rho_scale) = moments(0);
    std::tie(s.u_shift, s.u_scale) = moments(1);
    return s;
}

void PhysGan::set_standardization(const StateStandardization& s) {
    if (!(s.rho_scale > 0.0) || !(s.u_scale > 0.0) || !std::isfinite(s.rho_shift) || !std::isfinite(s.u_shift))
        throw std::invalid_argument("standardization scales must be positive and finite");
    standardization_ = s;
}

Matrix PhysGan::discriminator_inputs(const Matrix& coords, const Matrix& states) const {
    if (coords.rows() != 2 || states.rows() != 2 || coords.cols() != states.cols())
        throw std::invalid_argument("discriminator batch shape mismatch");
    const auto& s = standardization_;
    Matrix in(4, coords.cols());
    in.topRows(2) = coords;
    in.row(2) = (states.row(0).array() - s.rho_shift) / s.rho_scale;
    in.row(3) = (states.row(1).array() - s.u_shift) / s.u_scale;
    return in;
}

double PhysGan::residual_weight_r1() const {
    return config_.nondimensional_residuals ? domain().horizon() / norm_.rho_scale() : 1.0;
}

double PhysGan::residual_weight_r2() const {
    return config_.nondimensional_residuals ? domain().horizon() / norm_.u_scale() : 1.0;
}

void center_generator_outputs(PhysGan& model, const ObservationSet& obs) {
    const double scale = model.config().output_init_scale;
    if (scale == 0.0) return;
    if (obs.empty()) throw std::invalid_argument("centering needs at least one observation");
    double rho = 0.0, u = 0.0;
    for (const auto& r : obs.records()) {
        rho += r.rho;
        u += r.u;
    }
    const auto n = static_cast<double>(obs.size());
    const auto& norm = model.normalization();
    Mlp& g = model.generator();
    const int last = g.layer_count() - 1;
    g.weight(last) *= scale;
    g.bias(last)[0] = rho / n / norm.rho_scale();
    if (g.output_size() == 2) g.bias(last)[1] = u / n / norm.u_scale();
}

double loss_discriminator(const PhysGan& model, const Matrix& coords, const Matrix& states, const Matrix& z,
                          Vector* grad_phi) {
    const Eigen::Index m = coords.cols();
    if (m == 0) throw std::invalid_argument("empty observation batch");
    if (states.rows() != 2 || states.cols() != m) throw std::invalid_argument("state batch shape mismatch");
    const Matrix fake = model.generate_normalized(coords, z);

    Matrix in(4, 2 * m);
    in.leftCols(m) = model.discriminator_inputs(coords, fake);
    in.rightCols(m) = model.discriminator_inputs(coords, states);
    const auto& D = model.discriminator();
    const auto tape = D.record(in);
    const Matrix& o = tape.output();

    const bool classic = model.config().classic_gan_losses;
    double loss = 0.0;
    Matrix adj(1, 2 * m);
    for (Eigen::Index j = 0; j < 2 * m; ++j) {
        const double s = sigmoid(o(0, j));
        const double sc = clamp_score(s);
        const bool is_fake = j < m;
        // Default: push fakes toward 1 and reals toward 0; classic: the reverse.
        const bool toward_one = classic ? !is_fake : is_fake;
        if (toward_one) {
            loss -= std::log(sc);
            adj(0, j) = clamped(s) ? 0.0 : -(1.0 - s);
        } else {
            loss -= std::log(1.0 - sc);
            adj(0, j) = clamped(s) ? 0.0 : s;
        }
    }
    loss /= static_cast<double>(m);
    if (grad_phi) D.backward(tape, adj / static_cast<double>(m), {}, grad_phi);
    return loss;
}

double loss_physics(const PhysGan& model, const Matrix& coords, const Matrix& z, Vector* grad_theta,
                    Vector* grad_log_lambda, double weight) {
    if (!model.physics_enabled()) return 0.0;
    const Eigen::Index n = coords.cols();
    if (n == 0) throw std::invalid_argument("empty collocation batch");
    const auto& G = model.generator();
    const auto tape = G.record(model.generator_inputs(coords, z), 2);
    const Matrix& g = tape.output();
    const Matrix& jx = tape.output_tangent(0);
    const Matrix& jt = tape.output_tangent(1);

    const PhysicsParams p = model.lambda();
    const double fx = model.normalization().dxn_dx();
    const double ft = model.normalization().dtn_dt();
    const double sr = model.normalization().rho_scale();
    const double su = model.normalization().u_scale();
    const double w1 = model.residual_weight_r1();
    const double w2 = model.residual_weight_r2();
    const bool arz = model.mode() == GanMode::Arz;
    const double k = p.u_max / p.rho_max;

    const bool want_grad = grad_theta || grad_log_lambda;
    Matrix g_adj = Matrix::Zero(g.rows(), n);
    Matrix jx_adj = Matrix::Zero(g.rows(), n);
    Matrix jt_adj = Matrix::Zero(g.rows(), n);
    std::array<double, 3> lam_adj{0.0, 0.0, 0.0};

    double loss = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        DerivativeBundle b;
        b.rho = sr * g(0, j);
        b.d_rho_dx = sr * jx(0, j) * fx;
        b.d_rho_dt = sr * jt(0, j) * ft;
        if (arz) {
            b.u = su * g(1, j);
            b.d_u_dx = su * jx(1, j) * fx;
            b.d_u_dt = su * jt(1, j) * ft;
        } else {
            b.u = equilibrium_speed(b.rho, p);
            b.d_u_dx = -k * b.d_rho_dx;
            b.d_u_dt = -k * b.d_rho_dt;
        }
        const ResidualValues r = arz ? arz_residual(b, p) : lwr_residual(b, p);
        loss += (w1 * w1 * r.r1 * r.r1 + (arz ? w2 * w2 * r.r2 * r.r2 : 0.0)) * inv_n;
        if (!want_grad) continue;

        // Adjoints of the bundle entries {rho, u, rho_t, rho_x, u_t, u_x}.
        const double a1 = weight * 2.0 * w1 * w1 * r.r1 * inv_n;
        std::array<double, 6> bb{};
        const auto p1 = conservation_residual_partials(b);
        for (int q = 0; q < 6; ++q) bb[q] = a1 * p1.wrt_bundle[q];
        if (arz) {
            const double a2 = weight * 2.0 * w2 * w2 * r.r2 * inv_n;
            const auto p2 = arz_momentum_residual_partials(b, p);
            for (int q = 0; q < 6; ++q) bb[q] += a2 * p2.wrt_bundle[q];
            for (int q = 0; q < 3; ++q) lam_adj[q] += a2 * p2.wrt_params[q];
            g_adj(0, j) = sr * bb[0];
            g_adj(1, j) = su * bb[1];
            jt_adj(0, j) = sr * bb[2] * ft;
            jx_adj(0, j) = sr * bb[3] * fx;
            jt_adj(1, j) = su * bb[4] * ft;
            jx_adj(1, j) = su * bb[5] * fx;
        } else {
            // u, u_x, u_t are functions of rho, rho_x, rho_t and lambda.
            const double rm = p.rho_max, um = p.u_max;
            const double a_rho = bb[0] - k * bb[1];
            const double a_rho_t = bb[2] - k * bb[4];
            const double a_rho_x = bb[3] - k * bb[5];
            lam_adj[1] += bb[1] * (1.0 - b.rho / rm) - bb[5] * b.d_rho_dx / rm - bb[4] * b.d_rho_dt / rm;
            lam_adj[0] += (bb[1] * b.rho + bb[5] * b.d_rho_dx + bb[4] * b.d_rho_dt) * um / (rm * rm);
            g_adj(0, j) = sr * a_rho;
            jt_adj(0, j) = sr * a_rho_t * ft;
            jx_adj(0, j) = sr * a_rho_x * fx;
        }
    }
    if (grad_theta) {
        const Matrix tangents[2] = {jx_adj, jt_adj};
        G.backward(tape, g_adj, tangents, grad_theta);
    }
    if (grad_log_lambda) {
        (*grad_log_lambda)[0] += lam_adj[0] * p.rho_max;
        (*grad_log_lambda)[1] += lam_adj[1] * p.u_max;
        (*grad_log_lambda)[2] += lam_adj[2] * p.tau;
    }
    return loss;
}

GeneratorLoss loss_generator(const PhysGan& model, const Matrix& obs_coords, const Matrix& z_obs,
                             const Matrix& col_coords, const Matrix& z_col, double alpha, Vector* grad_theta,
                             Vector* grad_log_lambda) {
    const Eigen::Index m = obs_coords.cols();
    if (m == 0) throw std::invalid_argument("empty observation batch");
    const double data_weight = model.physics_enabled() ? alpha : 1.0;

    const auto& G = model.generator();
    const auto& D = model.discriminator();
    const auto gtape = G.record(model.generator_inputs(obs_coords, z_obs));
    const Matrix fake = states_from_outputs(model, gtape.output());
    const auto dtape = D.record(model.discriminator_inputs(obs_coords, fake));
    const Matrix& o = dtape.output();

    GeneratorLoss out;
    Matrix adj(1, m);
    const bool classic = model.config().classic_gan_losses;
    for (Eigen::Index j = 0; j < m; ++j) {
        const double s = sigmoid(o(0, j));
        if (classic) {
            out.data_term -= std::log(clamp_score(s));
            adj(0, j) = clamped(s) ? 0.0 : -(1.0 - s);
        } else {
            out.data_term += s;
            adj(0, j) = s * (1.0 - s);
        }
    }
    out.data_term /= static_cast<double>(m);

    if (grad_theta || grad_log_lambda) {
        Matrix in_adj;
        D.backward(dtape, adj * (data_weight / static_cast<double>(m)), {}, nullptr, &in_adj);
        Matrix state_adj = in_adj.bottomRows(2);
        state_adj.row(0) /= model.standardization().rho_scale;
        state_adj.row(1) /= model.standardization().u_scale;
        const Matrix g_adj = state_adjoint_to_outputs(model, gtape.output(), state_adj, grad_log_lambda);
        if (grad_theta) G.backward(gtape, g_adj, {}, grad_theta);
    }

    if (model.physics_enabled()) {
        out.physics_term = loss_physics(model, col_coords, z_col, grad_theta, grad_log_lambda, 1.0 - alpha);
        out.total = alpha * out.data_term + (1.0 - alpha) * out.physics_term;
    } else {
        out.total = out.data_term;
    }
    return out;
}

void TrainingConfig::validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw std::invalid_argument("beta1 must lie in [0, 1)");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw std::invalid_argument("ema_decay must lie in [0, 1)");
    if (!(learning_rate > 0.0) || !(discriminator_learning_rate > 0.0) || !(lambda_learning_rate > 0.0))
        throw std::invalid_argument("learning rates must be positive");
    if (z_per_collocation < 1) throw std::invalid_argument("z_per_collocation must be >= 1");
    if (snapshot_every < 1) throw std::invalid_argument("snapshot_every must be >= 1");
}

void EpochSampler::draw(std::size_t m, std::mt19937_64& rng, std::vector<std::size_t>& out) {
    out.resize(m);
    for (std::size_t j = 0; j < m; ++j) {
        if (pos_ >= order_.size()) {
            order_.resize(n_);
            for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
            std::shuffle(order_.begin(), order_.end(), rng);
            pos_ = 0;
        }
        out[j] = order_[pos_++];
    }
}

nlohmann::json EpochSampler::to_json() const {
    return {{"n", n_}, {"order", order_}, {"pos", pos_}};
}

EpochSampler EpochSampler::from_json(const nlohmann::json& j) {
    EpochSampler s(j.at("n").get<std::size_t>());
    s.order_ = j.at("order").get<std::vector<std::size_t>>();
    s.pos_ = j.at("pos");
    return s;
}

namespace {

void normalize_observations(const Normalization& norm, const ObservationSet& obs, Matrix& coords, Matrix& states) {
    const auto n = static_cast<Eigen::Index>(obs.size());
    coords.resize(2, n);
    states.resize(2, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const auto& r = obs[static_cast<std::size_t>(j)];
        const auto [xn, tn] = norm.normalize_point(r.x, r.t);
        coords(0, j) = xn;
        coords(1, j) = tn;
        states(0, j) = r.rho / norm.rho_scale();
        states(1, j) = r.u / norm.u_scale();
    }
}

Matrix normalize_collocation(const Normalization& norm, const CollocationSet& col) {
    Matrix coords(2, static_cast<Eigen::Index>(col.size()));
    for (Eigen::Index j = 0; j < coords.cols(); ++j) {
        const auto [xn, tn] = norm.normalize_point(col[static_cast<std::size_t>(j)].x, col[static_cast<std::size_t>(j)].t);
        coords(0, j) = xn;
        coords(1, j) = tn;
    }
    return coords;
}

bool finite(const Vector& v) {
    return v.allFinite();
}

}  // namespace

Trainer::Trainer(PhysGan model, TrainingConfig config, const ObservationSet& obs, const CollocationSet& col)
    : model_(std::move(model)), config_(config), rng_(config.seed), obs_sampler_(obs.size()),
      col_sampler_(col.size()) {
    config_.validate();
    if (obs.empty()) throw std::invalid_argument("training needs at least one observation");
    if (model_.physics_enabled() && col.empty())
        throw std::invalid_argument("physics-informed training needs collocation points");
    normalize_observations(model_.normalization(), obs, obs_coords_, obs_states_);
    col_coords_ = normalize_collocation(model_.normalization(), col);
    model_.set_standardization(StateStandardization::fit(obs_states_));
    adam_theta_ = Adam(model_.generator().parameter_count(), {config_.learning_rate, config_.beta1});
    adam_phi_ = Adam(model_.discriminator().parameter_count(), {config_.discriminator_learning_rate, config_.beta1});
    adam_lambda_ = Adam(3, {config_.lambda_learning_rate});
    ema_theta_ = model_.generator().parameters();
    ema_log_lambda_ = model_.log_lambda();
}

PhysGan Trainer::estimate() const {
    if (config_.ema_decay == 0.0) return model_;
    PhysGan out = model_;
    out.generator().set_parameters(ema_theta_);
    if (out.physics_enabled()) out.log_lambda() = ema_log_lambda_;
    return out;
}

void Trainer::draw_latents(Matrix& z, Eigen::Index n) {
    std::normal_distribution<double> normal(0.0, 1.0);
    z.resize(model_.config().latent_dim, n);
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index r = 0; r < z.rows(); ++r) z(r, j) = normal(rng_);
}

void Trainer::gather(const std::vector<std::size_t>& idx, const Matrix& src, Matrix& dst) const {
    dst.resize(src.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) dst.col(static_cast<Eigen::Index>(j)) = src.col(static_cast<Eigen::Index>(idx[j]));
}

HistoryRow Trainer::step() {
    const auto m = static_cast<std::size_t>(config_.batch_size);
    std::vector<std::size_t> obs_idx, col_idx;
    obs_sampler_.draw(m, rng_, obs_idx);
    Matrix obs_coords, obs_states, col_coords;
    gather(obs_idx, obs_coords_, obs_coords);
    gather(obs_idx, obs_states_, obs_states);
    if (model_.physics_enabled()) {
        col_sampler_.draw(m, rng_, col_idx);
        Matrix base;
        gather(col_idx, col_coords_, base);
        col_coords = base.replicate(1, config_.z_per_collocation);
    }

    HistoryRow row;
    row.iter = iteration_;

    // Discriminator step.
    Matrix z;
    draw_latents(z, obs_coords.cols());
    Vector grad_phi = Vector::Zero(static_cast<Eigen::Index>(model_.discriminator().parameter_count()));
    row.loss_d = loss_discriminator(model_, obs_coords, obs_states, z, &grad_phi);
    if (!std::isfinite(row.loss_d) || !finite(grad_phi))
        throw NumericalError("non-finite discriminator loss at iteration " + std::to_string(iteration_));
    adam_phi_.step(model_.discriminator().parameters(), grad_phi);
    if (update_hook) update_hook(UpdateKind::Discriminator, model_);

    // Generator and physics-parameter step with fresh latents.
    Matrix z_obs, z_col;
    draw_latents(z_obs, obs_coords.cols());
    if (model_.physics_enabled()) draw_latents(z_col, col_coords.cols());
    Vector grad_theta = Vector::Zero(static_cast<Eigen::Index>(model_.generator().parameter_count()));
    Vector grad_lambda = Vector::Zero(3);
    const GeneratorLoss g = loss_generator(model_, obs_coords, z_obs, col_coords, z_col, config_.alpha,
                                           &grad_theta, &grad_lambda);
    row.loss_g = g.total;
    row.loss_phy = g.physics_term;
    if (!std::isfinite(g.total) || !finite(grad_theta) || !finite(grad_lambda))
        throw NumericalError("non-finite generator loss at iteration " + std::to_string(iteration_));
    adam_theta_.step(model_.generator().parameters(), grad_theta);
    if (model_.physics_enabled()) adam_lambda_.step(model_.log_lambda(), grad_lambda);
    if (update_hook) update_hook(UpdateKind::GeneratorAndLambda, model_);
    if (config_.ema_decay > 0.0) {
        const double d = config_.ema_decay;
        ema_theta_ = d * ema_theta_ + (1.0 - d) * model_.generator().parameters();
        ema_log_lambda_ = d * ema_log_lambda_ + (1.0 - d) * model_.log_lambda();
    }

    const PhysicsParams lam = model_.lambda();
    row.rho_max = lam.rho_max;
    row.u_max = lam.u_max;
    row.tau = lam.tau;
    ++iteration_;
    history_.push_back(row);
    if (iteration_ % config_.snapshot_every == 0) snapshots_.push_back(row);
    return row;
}

void Trainer::run(long iterations, const std::function<void(const HistoryRow&)>& on_row) {
    for (long i = 0; i < iterations; ++i) {
        // Snapshot of the restorable state; the networks are small enough that
        // copying them each iteration is negligible next to the gradient work.
        const PhysGan model_before = model_;
        const Adam theta_before = adam_theta_, phi_before = adam_phi_, lambda_before = adam_lambda_;
        const Vector ema_theta_before = ema_theta_, ema_lambda_before = ema_log_lambda_;
        const std::mt19937_64 rng_before = rng_;
        const EpochSampler obs_before = obs_sampler_, col_before = col_sampler_;
        try {
            const HistoryRow row = step();
            if (on_row) on_row(row);
        } catch (const NumericalError&) {
            model_ = model_before;
            adam_theta_ = theta_before;
            adam_phi_ = phi_before;
            adam_lambda_ = lambda_before;
            ema_theta_ = ema_theta_before;
            ema_log_lambda_ = ema_lambda_before;
            rng_ = rng_before;
            obs_sampler_ = obs_before;
            col_sampler_ = col_before;
            throw;
        }
    }
}

nlohmann::json to_json(const PhysGanConfig& c) {
    return {{"mode", to_string(c.mode)},
            {"latent_dim", c.latent_dim},
            {"generator_hidden", c.generator_hidden},
            {"discriminator_hidden", c.discriminator_hidden},
            {"lambda_init", {{"rho_max", c.lambda_init.rho_max}, {"u_max", c.lambda_init.u_max}, {"tau", c.lambda_init.tau}}},
            {"classic_gan_losses", c.classic_gan_losses},
            {"output_init_scale", c.output_init_scale},
            {"rho_scale", c.rho_scale},
            {"u_scale", c.u_scale},
            {"centered_coordinates", c.centered_coordinates},
            {"nondimensional_residuals", c.nondimensional_residuals}};
}

PhysGanConfig physgan_config_from_json(const nlohmann::json& j) {
    PhysGanConfig c;
    c.mode = gan_mode_from_string(j.at("mode"));
    c.latent_dim = j.at("latent_dim");
    c.generator_hidden = j.at("generator_hidden").get<std::vector<int>>();
    c.discriminator_hidden = j.at("discriminator_hidden").get<std::vector<int>>();
    const auto& li = j.at("lambda_init");
    c.lambda_init = PhysicsParams(li.at("rho_max"), li.at("u_max"), li.at("tau"));
    c.classic_gan_losses = j.at("classic_gan_losses");
    c.output_init_scale = j.at("output_init_scale");
    c.rho_scale = j.at("rho_scale");
    c.u_scale = j.at("u_scale");
    c.centered_coordinates = j.at("centered_coordinates");
    c.nondimensional_residuals = j.at("nondimensional_residuals");
    return c;
}

nlohmann::json to_json(const TrainingConfig& c) {
    return {{"alpha", c.alpha},
            {"batch_size", c.batch_size},
            {"iterations", c.iterations},
            {"learning_rate", c.learning_rate},
            {"discriminator_learning_rate", c.discriminator_learning_rate},
            {"lambda_learning_rate", c.lambda_learning_rate},
            {"beta1", c.beta1},
            {"ema_decay", c.ema_decay},
            {"z_per_collocation", c.z_per_collocation},
            {"seed", c.seed},
            {"snapshot_every", c.snapshot_every}};
}

TrainingConfig training_config_from_json(const nlohmann::json& j) {
    TrainingConfig c;
    c.alpha = j.at("alpha");
    c.batch_size = j.at("batch_size");
    c.iterations = j.at("iterations");
    c.learning_rate = j.at("learning_rate");
    c.discriminator_learning_rate = j.at("discriminator_learning_rate");
    c.lambda_learning_rate = j.at("lambda_learning_rate");
    c.beta1 = j.at("beta1");
    c.ema_decay = j.at("ema_decay");
    c.z_per_collocation = j.at("z_per_collocation");
    c.seed = j.at("seed");
    c.snapshot_every = j.at("snapshot_every");
    return c;
}

nlohmann::json Trainer::checkpoint() const {
    std::ostringstream rng_state;
    rng_state << rng_;
    nlohmann::json history = nlohmann::json::array();
    const auto row_json = [](const HistoryRow& r) {
        return nlohmann::json::array({r.iter, r.loss_d, r.loss_g, r.loss_phy, r.rho_max, r.u_max, r.tau});
    };
    for (const auto& r : history_) history.push_back(row_json(r));
    nlohmann::json snaps = nlohmann::json::array();
    for (const auto& r : snapshots_) snaps.push_back(row_json(r));
    const auto& ll = model_.log_lambda();
    return {{"format", "uqtse-checkpoint"},
            {"version", 1},
            {"domain", {{"length_m", model_.domain().length()}, {"horizon_s", model_.domain().horizon()}}},
            {"model", to_json(model_.config())},
            {"training", to_json(config_)},
            {"generator", to_json(model_.generator())},
            {"discriminator", to_json(model_.discriminator())},
            {"log_lambda", {ll[0], ll[1], ll[2]}},
            {"standardization",
             {model_.standardization().rho_shift, model_.standardization().rho_scale,
              model_.standardization().u_shift, model_.standardization().u_scale}},
            {"adam_theta", adam_theta_.to_json()},
            {"adam_phi", adam_phi_.to_json()},
            {"adam_lambda", adam_lambda_.to_json()},
            {"ema_theta", std::vector<double>(ema_theta_.begin(), ema_theta_.end())},
            {"ema_log_lambda", std::vector<double>(ema_log_lambda_.begin(), ema_log_lambda_.end())},
            {"rng", rng_state.str()},
            {"obs_sampler", obs_sampler_.to_json()},
            {"col_sampler", col_sampler_.to_json()},
            {"iteration", iteration_},
            {"history", history},
            {"lambda_snapshots", snaps}};
}

namespace {

void check_checkpoint_format(const nlohmann::json& cp) {
    if (!cp.is_object() || cp.value("format", "") != "uqtse-checkpoint" || cp.value("version", 0) != 1)
        throw InputError("unsupported checkpoint format");
}

PhysGan checkpoint_model(const nlohmann::json& cp) {
    const SpaceTimeDomain domain(cp.at("domain").at("length_m"), cp.at("domain").at("horizon_s"));
    const auto ll = cp.at("log_lambda").get<std::vector<double>>();
    if (ll.size() != 3) throw InputError("checkpoint log_lambda needs 3 entries");
    Vector log_lambda(3);
    log_lambda << ll[0], ll[1], ll[2];
    PhysGan model(physgan_config_from_json(cp.at("model")), domain, mlp_from_json(cp.at("generator")),
                  mlp_from_json(cp.at("discriminator")), log_lambda);
    const auto st = cp.at("standardization").get<std::vector<double>>();
    if (st.size() != 4) throw InputError("checkpoint standardization needs 4 entries");
    model.set_standardization({st[0], st[1], st[2], st[3]});
    return model;
}

HistoryRow history_row_from_json(const nlohmann::json& a) {
    return HistoryRow{a.at(0), a.at(1), a.at(2), a.at(3), a.at(4), a.at(5), a.at(6)};
}

}  // namespace

Trainer Trainer::restore(const nlohmann::json& cp, const ObservationSet& obs, const CollocationSet& col) {
    check_checkpoint_format(cp);
    Trainer t(checkpoint_model(cp), training_config_from_json(cp.at("training")), obs, col);
    t.model_.set_standardization(checkpoint_model(cp).standardization());
    t.adam_theta_ = Adam::from_json(cp.at("adam_theta"));
    t.adam_phi_ = Adam::from_json(cp.at("adam_phi"));
    t.adam_lambda_ = Adam::from_json(cp.at("adam_lambda"));
    const auto ema_theta = cp.at("ema_theta").get<std::vector<double>>();
    const auto ema_lambda = cp.at("ema_log_lambda").get<std::vector<double>>();
    if (ema_theta.size() != t.model_.generator().parameter_count() || ema_lambda.size() != 3)
        throw InputError("checkpoint averages do not match the model");
    t.ema_theta_ = Eigen::Map<const Vector>(ema_theta.data(), static_cast<Eigen::Index>(ema_theta.size()));
    t.ema_log_lambda_ = Eigen::Map<const Vector>(ema_lambda.data(), 3);
    std::istringstream rng_state(cp.at("rng").get<std::string>());
    rng_state >> t.rng_;
    t.obs_sampler_ = EpochSampler::from_json(cp.at("obs_sampler"));
    t.col_sampler_ = EpochSampler::from_json(cp.at("col_sampler"));
    t.iteration_ = cp.at("iteration");
    for (const auto& r : cp.at("history")) t.history_.push_back(history_row_from_json(r));
    for (const auto& r : cp.at("lambda_snapshots")) t.snapshots_.push_back(history_row_from_json(r));
    return t;
}

PhysGan checkpoint_estimate(const nlohmann::json& cp) {
    check_checkpoint_format(cp);
    PhysGan model = checkpoint_model(cp);
    if (training_config_from_json(cp.at("training")).ema_decay == 0.0) return model;
    const auto ema_theta = cp.at("ema_theta").get<std::vector<double>>();
    const auto ema_lambda = cp.at("ema_log_lambda").get<std::vector<double>>();
    if (ema_theta.size() != model.generator().parameter_count() || ema_lambda.size() != 3)
        throw InputError("checkpoint averages do not match the model");
    model.generator().set_parameters(
        Eigen::Map<const Vector>(ema_theta.data(), static_cast<Eigen::Index>(ema_theta.size())));
    if (model.physics_enabled()) model.log_lambda() = Eigen::Map<const Vector>(ema_lambda.data(), 3);
    return model;
}

std::vector<HistoryRow> checkpoint_lambda_snapshots(const nlohmann::json& cp) {
    check_checkpoint_format(cp);
    std::vector<HistoryRow> out;
    for (const auto& r : cp.at("lambda_snapshots")) out.push_back(history_row_from_json(r));
    return out;
}

PredictiveEnsemble predict_ensemble(const PhysGan& model, std::span<const CollocationPoint> points, int n_samples,
                                    std::uint64_t seed) {
    if (n_samples < 1) throw std::invalid_argument("n_samples must be >= 1");
    const auto n_points = static_cast<Eigen::Index>(points.size());
    PredictiveEnsemble out{std::vector<CollocationPoint>(points.begin(), points.end()), Matrix(n_points, n_samples),
                           Matrix(n_points, n_samples)};
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const int dz = model.config().latent_dim;
    const auto& norm = model.normalization();

    // Evaluate in chunks of whole points to bound memory.
    const Eigen::Index chunk_points = std::max<Eigen::Index>(1, 8192 / n_samples);
    for (Eigen::Index p0 = 0; p0 < n_points; p0 += chunk_points) {
        const Eigen::Index np = std::min(chunk_points, n_points - p0);
        Matrix coords(2, np * n_samples), z(dz, np * n_samples);
        for (Eigen::Index p = 0; p < np; ++p) {
            const auto [xn, tn] = norm.normalize_point(points[static_cast<std::size_t>(p0 + p)].x,
                                                       points[static_cast<std::size_t>(p0 + p)].t);
            for (int s = 0; s < n_samples; ++s) {
                const Eigen::Index c = p * n_samples + s;
                coords(0, c) = xn;
                coords(1, c) = tn;
                for (int r = 0; r < dz; ++r) z(r, c) = normal(rng);
            }
        }
        const Matrix states = model.generate_normalized(coords, z);
        for (Eigen::Index p = 0; p < np; ++p)
            for (int s = 0; s < n_samples; ++s) {
                out.rho(p0 + p, s) = states(0, p * n_samples + s) * norm.rho_scale();
                out.u(p0 + p, s) = states(1, p * n_samples + s) * norm.u_scale();
            }
    }
    return out;
}

}  // namespace uqtse
