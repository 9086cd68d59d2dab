#pragma once

// Physics-regularized conditional GAN for traffic state estimation.
//
// The generator maps normalized (x, t, z) to normalized traffic states:
//   LWR mode      one output (density); velocity follows U_eq with the
//                 learnable parameters.
//   ARZ mode      two outputs (density, velocity).
//   pure GAN      two outputs, no physics term, parameters frozen.
// The discriminator maps normalized (x, t, rho, u) to a score in (0, 1).
//
// Loss convention (default): the discriminator minimizes
//   L_D = mean[-log D(fake) - log(1 - D(real))]
// and the generator minimizes
//   L_G = alpha * mean D(fake) + (1 - alpha) * L_phy.
// `classic_gan_losses` swaps in the standard non-saturating pair.
//
// Physics parameters are optimized as log(lambda) so they stay positive.
//
// The discriminator sees states standardized by the observation mean and
// spread (set by the trainer), so small density differences are not lost
// against the fixed normalization scales.

#include "uqtse/domain.hpp"
#include "uqtse/nn.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace uqtse {

enum class GanMode { Lwr, Arz, PureGan };

std::string to_string(GanMode m);
GanMode gan_mode_from_string(const std::string& s);

inline constexpr double kScoreClamp = 1e-7;

struct PhysGanConfig {
    GanMode mode = GanMode::Arz;
    int latent_dim = 1;
    std::vector<int> generator_hidden{64, 64, 64};
    std::vector<int> discriminator_hidden{64, 64};
    PhysicsParams lambda_init{1.0, 50.0, 5.0};
    bool classic_gan_losses = false;
    // Start the generator at the observed mean state: output bias set to the
    // data mean, output weights shrunk by this factor. Zero disables.
    double output_init_scale = 0.0;
    // Network state units: rho / rho_scale, u / u_scale.
    double rho_scale = Normalization::kRhoScale;
    double u_scale = Normalization::kSpeedScale;
    bool centered_coordinates = false; // network coordinates in [-1, 1] instead of [0, 1]
    // Scale r1 by T / rho_scale and r2 by T / u_scale so both residuals are
    // dimensionless in the normalized variables.
    bool nondimensional_residuals = false;

    void validate() const;
};

/// Affine map applied to normalized states before the discriminator.
struct StateStandardization {
    double rho_shift = 0.0;
    double rho_scale = 1.0;
    double u_shift = 0.0;
    double u_scale = 1.0;

    /// Mean and standard deviation of each row of a 2 x n state batch
    /// (scales floored at 1e-3).
    static StateStandardization fit(const Matrix& states);
};

class PhysGan {
public:
    PhysGan(PhysGanConfig config, SpaceTimeDomain domain, std::uint64_t init_seed);
    PhysGan(PhysGanConfig config, SpaceTimeDomain domain, Mlp generator, Mlp discriminator, Vector log_lambda);

    const PhysGanConfig& config() const { return config_; }
    GanMode mode() const { return config_.mode; }
    bool physics_enabled() const { return config_.mode != GanMode::PureGan; }
    const Normalization& normalization() const { return norm_; }
    const SpaceTimeDomain& domain() const { return norm_.domain(); }

    const Mlp& generator() const { return generator_; }
    Mlp& generator() { return generator_; }
    const Mlp& discriminator() const { return discriminator_; }
    Mlp& discriminator() { return discriminator_; }
    const Vector& log_lambda() const { return log_lambda_; }
    Vector& log_lambda() { return log_lambda_; }
    PhysicsParams lambda() const; // the configured initialization, exactly, for the pure GAN

    /// SI (rho, u) at normalized (xn, tn) for latent z.
    std::pair<double, double> generate(double xn, double tn, std::span<const double> z) const;

    /// Normalized states (2 x n) for normalized coordinates (2 x n) and latents (d_z x n).
    Matrix generate_normalized(const Matrix& coords, const Matrix& z) const;

    /// Score for normalized inputs.
    double discriminator_score(double xn, double tn, double rho_n, double u_n) const;

    const StateStandardization& standardization() const { return standardization_; }
    void set_standardization(const StateStandardization& s);

    /// Discriminator input batch (4 x n) from normalized coordinates and states.
    Matrix discriminator_inputs(const Matrix& coords, const Matrix& states) const;

    double residual_weight_r1() const;
    double residual_weight_r2() const;

    Matrix generator_inputs(const Matrix& coords, const Matrix& z) const;

private:
    PhysGanConfig config_;
    Normalization norm_;
    Mlp generator_;
    Mlp discriminator_;
    Vector log_lambda_; // log(rho_max, u_max, tau)
    StateStandardization standardization_;
};

/// Applies `output_init_scale`: sets the generator output bias to the mean
/// observed state and multiplies the output weights by the scale. No-op when
/// the scale is zero.
void center_generator_outputs(PhysGan& model, const ObservationSet& obs);

// Loss evaluations. Coordinates and states are normalized and stored one
// sample per column; gradient outputs are accumulated (+=) when non-null.

double loss_discriminator(const PhysGan& model, const Matrix& coords, const Matrix& states, const Matrix& z,
                          Vector* grad_phi);

double loss_physics(const PhysGan& model, const Matrix& coords, const Matrix& z, Vector* grad_theta,
                    Vector* grad_log_lambda, double weight = 1.0);

struct GeneratorLoss {
    double total = 0.0;
    double data_term = 0.0;    // mean raw score (or -log score, classic)
    double physics_term = 0.0; // L_phy, zero for the pure GAN
};

/// Physics modes: alpha * data + (1 - alpha) * physics. Pure GAN: data term only.
GeneratorLoss loss_generator(const PhysGan& model, const Matrix& obs_coords, const Matrix& z_obs,
                             const Matrix& col_coords, const Matrix& z_col, double alpha, Vector* grad_theta,
                             Vector* grad_log_lambda);

struct TrainingConfig {
    double alpha = 0.5;
    int batch_size = 256;
    long iterations = 0;
    double learning_rate = 0.0005; // generator
    double discriminator_learning_rate = 0.0005;
    double lambda_learning_rate = 0.0005; // Adam on log lambda
    double beta1 = 0.9;                   // first-moment decay for both networks
    // Exponential moving average of generator weights and log lambda kept
    // for estimate(); 0 disables it.
    double ema_decay = 0.0;
    int z_per_collocation = 1;
    std::uint64_t seed = 0;
    long snapshot_every = 100;

    void validate() const;
};

struct HistoryRow {
    long iter = 0;
    double loss_d = 0.0;
    double loss_g = 0.0;
    double loss_phy = 0.0;
    double rho_max = 0.0;
    double u_max = 0.0;
    double tau = 0.0;
};

enum class UpdateKind { Discriminator, GeneratorAndLambda };

/// Draws fixed-size batches from a shuffled index order, reshuffling when the
/// order is exhausted.
class EpochSampler {
public:
    EpochSampler() = default;
    explicit EpochSampler(std::size_t n) : n_(n) {}

    void draw(std::size_t m, std::mt19937_64& rng, std::vector<std::size_t>& out);

    nlohmann::json to_json() const;
    static EpochSampler from_json(const nlohmann::json& j);

private:
    std::size_t n_ = 0;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

/// Training loop state: one iteration samples batches, takes one discriminator
/// step, then one generator + lambda step.
class Trainer {
public:
    Trainer(PhysGan model, TrainingConfig config, const ObservationSet& obs, const CollocationSet& col);

    HistoryRow step();
    /// Runs `iterations` steps. A non-finite loss restores the state from
    /// before the failing iteration and throws NumericalError.
    void run(long iterations, const std::function<void(const HistoryRow&)>& on_row = {});

    const PhysGan& model() const { return model_; }
    /// The model used for prediction: the current one, or with the averaged
    /// generator and lambda when ema_decay > 0.
    PhysGan estimate() const;
    const TrainingConfig& config() const { return config_; }
    const std::vector<HistoryRow>& history() const { return history_; }
    const std::vector<HistoryRow>& lambda_snapshots() const { return snapshots_; }
    long iteration() const { return iteration_; }

    // Called after each parameter update; used to audit update ordering.
    std::function<void(UpdateKind, const PhysGan&)> update_hook;

    nlohmann::json checkpoint() const;
    static Trainer restore(const nlohmann::json& checkpoint, const ObservationSet& obs, const CollocationSet& col);

private:
    void draw_latents(Matrix& z, Eigen::Index n);
    void gather(const std::vector<std::size_t>& idx, const Matrix& src, Matrix& dst) const;

    PhysGan model_;
    TrainingConfig config_;
    Matrix obs_coords_, obs_states_, col_coords_;
    Adam adam_theta_, adam_phi_, adam_lambda_;
    Vector ema_theta_, ema_log_lambda_;
    std::mt19937_64 rng_;
    EpochSampler obs_sampler_, col_sampler_;
    long iteration_ = 0;
    std::vector<HistoryRow> history_;
    std::vector<HistoryRow> snapshots_;
};

/// The prediction model stored in a checkpoint (averaged when the run kept
/// an average) and its lambda snapshots.
PhysGan checkpoint_estimate(const nlohmann::json& checkpoint);
std::vector<HistoryRow> checkpoint_lambda_snapshots(const nlohmann::json& checkpoint);

nlohmann::json to_json(const PhysGanConfig& c);
PhysGanConfig physgan_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainingConfig& c);
TrainingConfig training_config_from_json(const nlohmann::json& j);

struct PredictiveEnsemble {
    std::vector<CollocationPoint> points; // physical coordinates
    Matrix rho;                           // points x samples, SI
    Matrix u;

    int sample_count() const { return static_cast<int>(rho.cols()); }
};

/// n_samples independent latent draws per query point (point-major order).
PredictiveEnsemble predict_ensemble(const PhysGan& model, std::span<const CollocationPoint> points, int n_samples,
                                    std::uint64_t seed);

}  // namespace uqtse
