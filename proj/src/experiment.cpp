#include "uqtse/experiment.hpp"

#include "uqtse/errors.hpp"
#include "uqtse/io.hpp"
#include "uqtse/parallel.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>

namespace uqtse {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Estimator e) {
    switch (e) {
    case Estimator::LwrPhysGan: return "lwr-physgan";
    case Estimator::ArzPhysGan: return "arz-physgan";
    case Estimator::PureGan: return "pure-gan";
    case Estimator::Ekf: return "ekf";
    }
    return "?";
}

Estimator estimator_from_string(const std::string& s) {
    for (Estimator e : {Estimator::LwrPhysGan, Estimator::ArzPhysGan, Estimator::PureGan, Estimator::Ekf})
        if (to_string(e) == s) return e;
    throw std::invalid_argument("unknown estimator '" + s + "' (expected lwr-physgan, arz-physgan, pure-gan or ekf)");
}

GanMode gan_mode_of(Estimator e) {
    switch (e) {
    case Estimator::LwrPhysGan: return GanMode::Lwr;
    case Estimator::ArzPhysGan: return GanMode::Arz;
    case Estimator::PureGan: return GanMode::PureGan;
    case Estimator::Ekf: break;
    }
    throw std::invalid_argument("the EKF is not a GAN estimator");
}

ExperimentConfig default_experiment_config() {
    ExperimentConfig c;
    Scenario& s = c.scenario;
    s.domain = SpaceTimeDomain(1000.0, 300.0);
    s.nx = 50;
    s.model = TrafficModel::Arz;
    s.initial.background = 0.05;
    s.initial.blocks = {{400.0, 600.0, 0.28, 0.5}};
    s.boundary.inflow_mean = 0.07;
    s.boundary.inflow_speed_factor = 0.8;
    s.boundary.downstream = BoundaryCondition::Downstream::Congested;
    s.boundary.congestion_fraction = 0.95;
    s.boundary.congestion_start = 30.0;
    s.boundary.inflow_amplitude = 0.03;
    s.boundary.inflow_period = 120.0;
    s.lambda.rho_max = {0.38, 0.02, 0.3, 0.5};
    s.lambda.u_max = {22.9, 1.5, 18.0, 28.0};
    s.lambda.tau = {10.0, 2.0, 5.0, 30.0};
    s.noise = {0.005, 0.5};

    PhysGanConfig& m = c.model;
    m.classic_gan_losses = true;
    m.output_init_scale = 0.1;
    m.rho_scale = 0.2;
    m.u_scale = 25.0;
    m.centered_coordinates = true;

    TrainingConfig& t = c.training;
    t.iterations = 6000;
    t.lambda_learning_rate = 0.005;
    t.ema_decay = 0.999;
    return c;
}

namespace {

const char* upstream_name(BoundaryCondition::Upstream u) {
    return u == BoundaryCondition::Upstream::Inflow ? "inflow" : "transmissive";
}

const char* downstream_name(BoundaryCondition::Downstream d) {
    switch (d) {
    case BoundaryCondition::Downstream::FreeOutflow: return "free_outflow";
    case BoundaryCondition::Downstream::Transmissive: return "transmissive";
    case BoundaryCondition::Downstream::Congested: return "congested";
    }
    return "?";
}

// Object view that type-checks reads and rejects keys nobody read.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(label() + ": expected an object");
    }

    ~Section() = default;

    bool has(const char* key) const { return j_.contains(key); }

    double number(const char* key, double def) {
        const json* v = find(key);
        if (!v) return def;
        if (!v->is_number()) fail(key, "expected a number");
        return v->get<double>();
    }

    long long integer(const char* key, long long def) {
        const json* v = find(key);
        if (!v) return def;
        if (!v->is_number_integer()) fail(key, "expected an integer");
        return v->get<long long>();
    }

    std::uint64_t unsigned_integer(const char* key, std::uint64_t def) {
        const json* v = find(key);
        if (!v) return def;
        if (!v->is_number_unsigned()) fail(key, "expected a non-negative integer");
        return v->get<std::uint64_t>();
    }

    bool boolean(const char* key, bool def) {
        const json* v = find(key);
        if (!v) return def;
        if (!v->is_boolean()) fail(key, "expected true or false");
        return v->get<bool>();
    }

    std::string string(const char* key, const std::string& def) {
        const json* v = find(key);
        if (!v) return def;
        if (!v->is_string()) fail(key, "expected a string");
        return v->get<std::string>();
    }

    std::vector<int> int_list(const char* key, const std::vector<int>& def) {
        const json* v = find(key);
        if (!v) return def;
        if (!v->is_array()) fail(key, "expected an array of integers");
        std::vector<int> out;
        for (const auto& e : *v) {
            if (!e.is_number_integer()) fail(key, "expected an array of integers");
            out.push_back(e.get<int>());
        }
        return out;
    }

    std::vector<std::string> string_list(const char* key, const std::vector<std::string>& def) {
        const json* v = find(key);
        if (!v) return def;
        if (!v->is_array()) fail(key, "expected an array of strings");
        std::vector<std::string> out;
        for (const auto& e : *v) {
            if (!e.is_string()) fail(key, "expected an array of strings");
            out.push_back(e.get<std::string>());
        }
        return out;
    }

    // Raw access for nested sections and arrays of objects.
    const json* child(const char* key) { return find(key); }

    std::string path_of(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

    [[noreturn]] void fail(const char* key, const std::string& what) const {
        throw ConfigError(path_of(key) + ": " + what);
    }

    void finish() const {
        for (const auto& [key, value] : j_.items())
            if (!used_.contains(key)) throw ConfigError(path_of(key.c_str()) + ": unknown key");
    }

private:
    const json* find(const char* key) {
        used_.insert(key);
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    std::string label() const { return path_.empty() ? "config" : path_; }

    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

template <class F>
void with_section(Section& parent, const char* key, F&& body) {
    if (const json* v = parent.child(key)) {
        Section s(*v, parent.path_of(key));
        body(s);
        s.finish();
    }
}

TruncatedGaussian parse_truncated(Section& s, const TruncatedGaussian& def) {
    return {s.number("mean", def.mean), s.number("std", def.stddev), s.number("lower", def.lower),
            s.number("upper", def.upper)};
}

template <class F>
void checked(const std::string& what, F&& f) {
    try {
        f();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(what + ": " + e.what());
    } catch (const std::out_of_range& e) {
        throw ConfigError(what + ": " + e.what());
    }
}

}  // namespace

ExperimentConfig parse_experiment_config(const json& j) {
    ExperimentConfig c = default_experiment_config();
    Section root(j, "");
    const long long version = root.integer("schema_version", kConfigSchemaVersion);
    if (version != kConfigSchemaVersion)
        root.fail("schema_version", "unsupported version " + std::to_string(version) + " (expected " +
                                        std::to_string(kConfigSchemaVersion) + ")");
    c.seed = root.unsigned_integer("seed", c.seed);

    with_section(root, "scenario", [&](Section& s) {
        Scenario& sc = c.scenario;
        const double length = s.number("length_m", sc.domain.length());
        const double horizon = s.number("horizon_s", sc.domain.horizon());
        checked("scenario", [&] { sc.domain = SpaceTimeDomain(length, horizon); });
        sc.nx = static_cast<int>(s.integer("nx", sc.nx));
        const std::string model = s.string("model", to_string(sc.model));
        checked("scenario.model", [&] { sc.model = traffic_model_from_string(model); });
        c.n_realizations = static_cast<int>(s.integer("n_realizations", c.n_realizations));
        with_section(s, "initial", [&](Section& t) {
            sc.initial.background = t.number("background", sc.initial.background);
            sc.initial.amplitude = t.number("amplitude", sc.initial.amplitude);
            sc.initial.wavenumber = t.number("wavenumber", sc.initial.wavenumber);
            if (const json* blocks = t.child("blocks")) {
                if (!blocks->is_array()) t.fail("blocks", "expected an array of objects");
                sc.initial.blocks.clear();
                for (std::size_t b = 0; b < blocks->size(); ++b) {
                    Section bs((*blocks)[b], t.path_of("blocks") + "[" + std::to_string(b) + "]");
                    DensityBlock block{bs.number("x_begin_m", 0.0), bs.number("x_end_m", 0.0),
                                       bs.number("density", 0.0), bs.number("speed_factor", 1.0)};
                    bs.finish();
                    sc.initial.blocks.push_back(block);
                }
            }
        });
        with_section(s, "boundary", [&](Section& t) {
            const std::string up = t.string("upstream", upstream_name(sc.boundary.upstream));
            if (up == "inflow") sc.boundary.upstream = BoundaryCondition::Upstream::Inflow;
            else if (up == "transmissive") sc.boundary.upstream = BoundaryCondition::Upstream::Transmissive;
            else t.fail("upstream", "expected \"inflow\" or \"transmissive\"");
            const std::string down = t.string("downstream", downstream_name(sc.boundary.downstream));
            if (down == "free_outflow") sc.boundary.downstream = BoundaryCondition::Downstream::FreeOutflow;
            else if (down == "transmissive") sc.boundary.downstream = BoundaryCondition::Downstream::Transmissive;
            else if (down == "congested") sc.boundary.downstream = BoundaryCondition::Downstream::Congested;
            else t.fail("downstream", "expected \"free_outflow\", \"transmissive\" or \"congested\"");
            sc.boundary.congestion_fraction = t.number("congestion_fraction", sc.boundary.congestion_fraction);
            sc.boundary.congestion_start = t.number("congestion_start_s", sc.boundary.congestion_start);
            sc.boundary.congestion_end = t.number("congestion_end_s", sc.boundary.congestion_end);
            sc.boundary.inflow_mean = t.number("inflow_mean", sc.boundary.inflow_mean);
            sc.boundary.inflow_amplitude = t.number("inflow_amplitude", sc.boundary.inflow_amplitude);
            sc.boundary.inflow_period = t.number("inflow_period_s", sc.boundary.inflow_period);
            sc.boundary.inflow_speed_factor = t.number("inflow_speed_factor", sc.boundary.inflow_speed_factor);
        });
        with_section(s, "lambda", [&](Section& t) {
            with_section(t, "rho_max", [&](Section& u) { sc.lambda.rho_max = parse_truncated(u, sc.lambda.rho_max); });
            with_section(t, "u_max", [&](Section& u) { sc.lambda.u_max = parse_truncated(u, sc.lambda.u_max); });
            with_section(t, "tau", [&](Section& u) { sc.lambda.tau = parse_truncated(u, sc.lambda.tau); });
        });
    });

    with_section(root, "sensing", [&](Section& s) {
        c.sensing.detector_counts = s.int_list("detector_counts", c.sensing.detector_counts);
        c.sensing.sampling_period = s.number("sampling_period_s", c.sensing.sampling_period);
        c.sensing.n_collocation = static_cast<int>(s.integer("n_collocation", c.sensing.n_collocation));
        const std::string strategy = s.string("collocation_strategy", to_string(c.sensing.collocation));
        checked("sensing.collocation_strategy",
                [&] { c.sensing.collocation = collocation_strategy_from_string(strategy); });
        with_section(s, "noise", [&](Section& t) {
            c.scenario.noise.sigma_rho = t.number("sigma_rho", c.scenario.noise.sigma_rho);
            c.scenario.noise.sigma_u = t.number("sigma_u", c.scenario.noise.sigma_u);
        });
    });

    with_section(root, "model", [&](Section& s) {
        PhysGanConfig& m = c.model;
        m.latent_dim = static_cast<int>(s.integer("latent_dim", m.latent_dim));
        m.generator_hidden = s.int_list("generator_hidden", m.generator_hidden);
        m.discriminator_hidden = s.int_list("discriminator_hidden", m.discriminator_hidden);
        m.classic_gan_losses = s.boolean("classic_gan_losses", m.classic_gan_losses);
        m.output_init_scale = s.number("output_init_scale", m.output_init_scale);
        m.rho_scale = s.number("rho_scale", m.rho_scale);
        m.u_scale = s.number("u_scale", m.u_scale);
        m.centered_coordinates = s.boolean("centered_coordinates", m.centered_coordinates);
        m.nondimensional_residuals = s.boolean("nondimensional_residuals", m.nondimensional_residuals);
        with_section(s, "lambda_init", [&](Section& t) {
            const double rm = t.number("rho_max", m.lambda_init.rho_max);
            const double um = t.number("u_max", m.lambda_init.u_max);
            const double tau = t.number("tau", m.lambda_init.tau);
            checked("model.lambda_init", [&] { m.lambda_init = PhysicsParams(rm, um, tau); });
        });
    });

    with_section(root, "training", [&](Section& s) {
        TrainingConfig& t = c.training;
        t.alpha = s.number("alpha", t.alpha);
        t.batch_size = static_cast<int>(s.integer("batch_size", t.batch_size));
        t.iterations = s.integer("iterations", t.iterations);
        t.learning_rate = s.number("learning_rate", t.learning_rate);
        t.discriminator_learning_rate = s.number("discriminator_learning_rate", t.discriminator_learning_rate);
        t.lambda_learning_rate = s.number("lambda_learning_rate", t.lambda_learning_rate);
        t.beta1 = s.number("beta1", t.beta1);
        t.ema_decay = s.number("ema_decay", t.ema_decay);
        t.z_per_collocation = static_cast<int>(s.integer("z_per_collocation", t.z_per_collocation));
        t.snapshot_every = s.integer("snapshot_every", t.snapshot_every);
    });

    with_section(root, "ekf", [&](Section& s) {
        c.ekf.q_rho = s.number("q_rho", c.ekf.q_rho);
        c.ekf.q_u = s.number("q_u", c.ekf.q_u);
        c.ekf.p0_rho = s.number("p0_rho", c.ekf.p0_rho);
        c.ekf.p0_u = s.number("p0_u", c.ekf.p0_u);
        c.ekf.fd_step = s.number("fd_step", c.ekf.fd_step);
    });

    with_section(root, "evaluation", [&](Section& s) {
        EvaluationConfig& e = c.evaluation;
        std::vector<std::string> names;
        for (Estimator est : e.estimators) names.push_back(to_string(est));
        names = s.string_list("estimators", names);
        e.estimators.clear();
        for (const auto& n : names)
            checked("evaluation.estimators", [&] { e.estimators.push_back(estimator_from_string(n)); });
        e.seeds = static_cast<int>(s.integer("seeds", e.seeds));
        e.mean_samples = static_cast<int>(s.integer("mean_samples", e.mean_samples));
        e.probe_samples = static_cast<int>(s.integer("probe_samples", e.probe_samples));
        e.probe_detectors = static_cast<int>(s.integer("probe_detectors", e.probe_detectors));
        e.probe_times = static_cast<int>(s.integer("probe_times", e.probe_times));
        e.histogram_bins = static_cast<int>(s.integer("histogram_bins", e.histogram_bins));
        e.record_wall_time = s.boolean("record_wall_time", e.record_wall_time);
    });
    root.finish();

    // Semantic checks once every key has been read.
    checked("scenario.lambda", [&] { c.scenario.lambda.validate(); });
    checked("sensing.noise", [&] { c.scenario.noise.validate(); });
    if (c.scenario.nx < 2) throw ConfigError("scenario.nx: must be >= 2");
    if (c.n_realizations < 1) throw ConfigError("scenario.n_realizations: must be >= 1");
    checked("scenario", [&] { (void)c.scenario.grid(); });
    if (c.sensing.detector_counts.empty()) throw ConfigError("sensing.detector_counts: must not be empty");
    for (int n : c.sensing.detector_counts)
        if (n < 1) throw ConfigError("sensing.detector_counts: counts must be >= 1");
    if (!(c.sensing.sampling_period > 0.0)) throw ConfigError("sensing.sampling_period_s: must be > 0");
    if (c.sensing.n_collocation < 1) throw ConfigError("sensing.n_collocation: must be >= 1");
    checked("model", [&] { c.model.validate(); });
    checked("training", [&] { c.training.validate(); });
    checked("ekf", [&] { c.ekf.validate(); });
    const EvaluationConfig& e = c.evaluation;
    if (e.estimators.empty()) throw ConfigError("evaluation.estimators: must not be empty");
    if (e.seeds < 1) throw ConfigError("evaluation.seeds: must be >= 1");
    if (e.mean_samples < 1) throw ConfigError("evaluation.mean_samples: must be >= 1");
    if (e.probe_samples < 2) throw ConfigError("evaluation.probe_samples: must be >= 2");
    if (e.probe_detectors < 1) throw ConfigError("evaluation.probe_detectors: must be >= 1");
    if (e.probe_times < 1) throw ConfigError("evaluation.probe_times: must be >= 1");
    if (e.histogram_bins < 2) throw ConfigError("evaluation.histogram_bins: must be >= 2");
    return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": malformed JSON: " + e.what());
    }
    return parse_experiment_config(j);
}

namespace {

json truncated_json(const TruncatedGaussian& g) {
    return {{"mean", g.mean}, {"std", g.stddev}, {"lower", g.lower}, {"upper", g.upper}};
}

}  // namespace

json to_json(const ExperimentConfig& c) {
    const Scenario& s = c.scenario;
    json blocks = json::array();
    for (const auto& b : s.initial.blocks)
        blocks.push_back({{"x_begin_m", b.x_begin}, {"x_end_m", b.x_end}, {"density", b.density}, {"speed_factor", b.speed_factor}});
    json estimators = json::array();
    for (Estimator e : c.evaluation.estimators) estimators.push_back(to_string(e));
    return {
        {"schema_version", kConfigSchemaVersion},
        {"seed", c.seed},
        {"scenario",
         {{"length_m", s.domain.length()},
          {"horizon_s", s.domain.horizon()},
          {"nx", s.nx},
          {"model", to_string(s.model)},
          {"n_realizations", c.n_realizations},
          {"initial",
           {{"background", s.initial.background},
            {"blocks", blocks},
            {"amplitude", s.initial.amplitude},
            {"wavenumber", s.initial.wavenumber}}},
          {"boundary",
           {{"upstream", upstream_name(s.boundary.upstream)},
            {"downstream", downstream_name(s.boundary.downstream)},
            {"congestion_fraction", s.boundary.congestion_fraction},
            {"congestion_start_s", s.boundary.congestion_start},
            {"congestion_end_s", s.boundary.congestion_end},
            {"inflow_mean", s.boundary.inflow_mean},
            {"inflow_amplitude", s.boundary.inflow_amplitude},
            {"inflow_period_s", s.boundary.inflow_period},
            {"inflow_speed_factor", s.boundary.inflow_speed_factor}}},
          {"lambda",
           {{"rho_max", truncated_json(s.lambda.rho_max)},
            {"u_max", truncated_json(s.lambda.u_max)},
            {"tau", truncated_json(s.lambda.tau)}}}}},
        {"sensing",
         {{"detector_counts", c.sensing.detector_counts},
          {"sampling_period_s", c.sensing.sampling_period},
          {"n_collocation", c.sensing.n_collocation},
          {"collocation_strategy", to_string(c.sensing.collocation)},
          {"noise", {{"sigma_rho", s.noise.sigma_rho}, {"sigma_u", s.noise.sigma_u}}}}},
        {"model",
         {{"latent_dim", c.model.latent_dim},
          {"generator_hidden", c.model.generator_hidden},
          {"discriminator_hidden", c.model.discriminator_hidden},
          {"classic_gan_losses", c.model.classic_gan_losses},
          {"output_init_scale", c.model.output_init_scale},
          {"rho_scale", c.model.rho_scale},
          {"u_scale", c.model.u_scale},
          {"centered_coordinates", c.model.centered_coordinates},
          {"nondimensional_residuals", c.model.nondimensional_residuals},
          {"lambda_init",
           {{"rho_max", c.model.lambda_init.rho_max},
            {"u_max", c.model.lambda_init.u_max},
            {"tau", c.model.lambda_init.tau}}}}},
        {"training",
         {{"alpha", c.training.alpha},
          {"batch_size", c.training.batch_size},
          {"iterations", c.training.iterations},
          {"learning_rate", c.training.learning_rate},
          {"discriminator_learning_rate", c.training.discriminator_learning_rate},
          {"lambda_learning_rate", c.training.lambda_learning_rate},
          {"beta1", c.training.beta1},
          {"ema_decay", c.training.ema_decay},
          {"z_per_collocation", c.training.z_per_collocation},
          {"snapshot_every", c.training.snapshot_every}}},
        {"ekf",
         {{"q_rho", c.ekf.q_rho},
          {"q_u", c.ekf.q_u},
          {"p0_rho", c.ekf.p0_rho},
          {"p0_u", c.ekf.p0_u},
          {"fd_step", c.ekf.fd_step}}},
        {"evaluation",
         {{"estimators", estimators},
          {"seeds", c.evaluation.seeds},
          {"mean_samples", c.evaluation.mean_samples},
          {"probe_samples", c.evaluation.probe_samples},
          {"probe_detectors", c.evaluation.probe_detectors},
          {"probe_times", c.evaluation.probe_times},
          {"histogram_bins", c.evaluation.histogram_bins},
          {"record_wall_time", c.evaluation.record_wall_time}}},
    };
}

std::string config_hash(const ExperimentConfig& c) {
    return fnv1a_hex(to_json(c).dump());
}

namespace {

std::uint64_t cell_stream(int n_detectors, int seed_index) {
    return static_cast<std::uint64_t>(n_detectors) * 1000u + static_cast<std::uint64_t>(seed_index);
}

}  // namespace

std::uint64_t ensemble_seed(const ExperimentConfig& c) {
    return derive_seed(c.seed, 1);
}

std::uint64_t dataset_seed(const ExperimentConfig& c, int n_detectors, int seed_index) {
    return derive_seed(derive_seed(c.seed, 2), cell_stream(n_detectors, seed_index));
}

std::uint64_t training_seed(const ExperimentConfig& c, int n_detectors, int seed_index) {
    return derive_seed(derive_seed(c.seed, 3), cell_stream(n_detectors, seed_index));
}

std::uint64_t evaluation_seed(const ExperimentConfig& c, Estimator e, int n_detectors, int seed_index) {
    return derive_seed(derive_seed(c.seed, 4), cell_stream(n_detectors, seed_index) * 8u + static_cast<unsigned>(e));
}

Ensemble simulate(const ExperimentConfig& c, int threads) {
    return generate_ensemble(c.scenario, c.n_realizations, ensemble_seed(c), threads);
}

Dataset make_dataset(const ExperimentConfig& c, const Ensemble& ensemble, int n_detectors, int seed_index) {
    const SpaceTimeDomain& domain = ensemble.grid.domain();
    const std::uint64_t seed = dataset_seed(c, n_detectors, seed_index);
    Dataset d;
    d.detectors = place_detectors(n_detectors, domain, c.sensing.sampling_period);
    d.observations = extract_observations(ensemble, d.detectors, c.scenario.noise, seed);
    d.collocation = sample_collocation(c.sensing.n_collocation, domain, c.sensing.collocation, derive_seed(seed, 1));
    return d;
}

Trainer make_trainer(const ExperimentConfig& c, Estimator e, const Dataset& d, int n_detectors, int seed_index) {
    PhysGanConfig m = c.model;
    m.mode = gan_mode_of(e);
    const std::uint64_t seed = training_seed(c, n_detectors, seed_index);
    TrainingConfig t = c.training;
    t.seed = derive_seed(seed, 1);
    PhysGan model(m, c.scenario.domain, seed);
    center_generator_outputs(model, d.observations);
    return Trainer(std::move(model), t, d.observations, d.collocation);
}

EkfResult run_ekf_baseline(const ExperimentConfig& c, const Dataset& d, const Grid& grid) {
    return run_ekf(d.observations, c.scenario.boundary, c.scenario.lambda.mean(), grid, c.scenario.noise, c.ekf);
}

std::vector<ProbePoint> evaluation_probes(const ExperimentConfig& c, const Grid& grid) {
    return probe_points(place_detectors(c.evaluation.probe_detectors, grid.domain(), c.sensing.sampling_period), grid,
                        c.evaluation.probe_times);
}

EstimateSummary summarize_gan(const ExperimentConfig& c, const PhysGan& model, const Grid& grid,
                              std::span<const ProbePoint> probes, std::uint64_t seed) {
    std::vector<CollocationPoint> points;
    points.reserve(grid.size());
    for (int k = 0; k < grid.nt(); ++k)
        for (int i = 0; i < grid.nx(); ++i) {
            const auto [x, t] = grid.cell_center(i, k);
            points.push_back({x, t});
        }
    const PredictiveEnsemble field = predict_ensemble(model, points, c.evaluation.mean_samples, derive_seed(seed, 0));
    EstimateSummary s;
    s.rho_mean.resize(points.size());
    s.u_mean.resize(points.size());
    const Vector rho_mean = field.rho.rowwise().mean();
    const Vector u_mean = field.u.rowwise().mean();
    for (std::size_t p = 0; p < points.size(); ++p) {
        s.rho_mean[p] = rho_mean[static_cast<Eigen::Index>(p)];
        s.u_mean[p] = u_mean[static_cast<Eigen::Index>(p)];
    }

    std::vector<CollocationPoint> probe_xy;
    for (const auto& p : probes) probe_xy.push_back({p.x, p.t});
    const PredictiveEnsemble at_probes =
        predict_ensemble(model, probe_xy, c.evaluation.probe_samples, derive_seed(seed, 1));
    for (std::size_t p = 0; p < probe_xy.size(); ++p) {
        const auto row = static_cast<Eigen::Index>(p);
        s.probe_rho.emplace_back(at_probes.rho.row(row).begin(), at_probes.rho.row(row).end());
        s.probe_u.emplace_back(at_probes.u.row(row).begin(), at_probes.u.row(row).end());
    }
    return s;
}

Metrics evaluate_summary(const ExperimentConfig& c, const EstimateSummary& truth, const EstimateSummary& pred) {
    return compare(truth, pred, density_histogram(c.evaluation.histogram_bins),
                   speed_histogram(c.evaluation.histogram_bins));
}

namespace {

// Histograms at the middle probe, for distribution plots.
json distribution_snapshot(const ExperimentConfig& c, const EstimateSummary& truth, const EstimateSummary& pred) {
    if (truth.probe_rho.empty()) return json::object();
    const std::size_t p = truth.probe_rho.size() / 2;
    const auto rs = density_histogram(c.evaluation.histogram_bins);
    const auto us = speed_histogram(c.evaluation.histogram_bins);
    return {{"probe_index", p},
            {"rho_truth", smoothed_histogram(truth.probe_rho[p], rs)},
            {"rho_pred", smoothed_histogram(pred.probe_rho[p], rs)},
            {"u_truth", smoothed_histogram(truth.probe_u[p], us)},
            {"u_pred", smoothed_histogram(pred.probe_u[p], us)}};
}

}  // namespace

CellResult score_cell(const ExperimentConfig& c, const EstimateSummary& truth, const CellKey& key,
                      const EstimateSummary& pred, const PhysicsParams& lambda_hat,
                      std::vector<HistoryRow> lambda_snapshots, double elapsed_s) {
    CellResult out;
    out.row.model = to_string(key.estimator);
    out.row.n_detectors = key.n_detectors;
    out.row.seed = key.seed_index;
    out.row.metrics = evaluate_summary(c, truth, pred);
    out.row.rho_max_hat = lambda_hat.rho_max;
    out.row.u_max_hat = lambda_hat.u_max;
    out.row.tau_hat = lambda_hat.tau;
    out.row.wall_s = c.evaluation.record_wall_time ? elapsed_s : 0.0;
    out.lambda_snapshots = std::move(lambda_snapshots);
    out.elapsed_s = elapsed_s;
    out.distribution = distribution_snapshot(c, truth, pred);
    return out;
}

FieldFile ekf_field_file(const EkfResult& r) {
    FieldFile f;
    f.estimator = "ekf";
    f.labels = {"mean", "variance"};
    f.fields = {r.mean, r.variance};
    return f;
}

EstimateSummary summarize_ekf_file(const ExperimentConfig& c, const FieldFile& f, std::span<const ProbePoint> probes,
                                   const CellKey& key) {
    if (f.estimator != "ekf" || f.fields.size() != 2) throw InputError("field file does not hold an EKF mean and variance");
    return summarize_gaussian(f.fields[0], f.fields[1], probes, c.evaluation.probe_samples,
                              evaluation_seed(c, key.estimator, key.n_detectors, key.seed_index));
}

CellResult run_cell(const ExperimentConfig& c, const Ensemble& ensemble, const EstimateSummary& truth,
                    std::span<const ProbePoint> probes, const CellKey& key) {
    const Dataset d = make_dataset(c, ensemble, key.n_detectors, key.seed_index);
    const auto start = std::chrono::steady_clock::now();
    const auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
    if (key.estimator == Estimator::Ekf) {
        const FieldFile f = ekf_field_file(run_ekf_baseline(c, d, ensemble.grid));
        const EstimateSummary pred = summarize_ekf_file(c, f, probes, key);
        return score_cell(c, truth, key, pred, c.scenario.lambda.mean(), {}, elapsed());
    }
    Trainer trainer = make_trainer(c, key.estimator, d, key.n_detectors, key.seed_index);
    trainer.run(c.training.iterations);
    const PhysGan estimate = trainer.estimate();
    const EstimateSummary pred = summarize_gan(
        c, estimate, ensemble.grid, probes, evaluation_seed(c, key.estimator, key.n_detectors, key.seed_index));
    return score_cell(c, truth, key, pred, estimate.lambda(), trainer.lambda_snapshots(), elapsed());
}

namespace {

json history_rows_json(const std::vector<HistoryRow>& rows) {
    json a = json::array();
    for (const auto& r : rows) a.push_back({r.iter, r.loss_d, r.loss_g, r.loss_phy, r.rho_max, r.u_max, r.tau});
    return a;
}

std::vector<HistoryRow> history_rows_from_json(const json& a) {
    std::vector<HistoryRow> out;
    for (const auto& r : a) out.push_back({r.at(0), r.at(1), r.at(2), r.at(3), r.at(4), r.at(5), r.at(6)});
    return out;
}

fs::path cell_path(const fs::path& out_dir, const CellKey& k) {
    return out_dir / "cells" / cell_file_name(k);
}

}  // namespace

std::string cell_file_name(const CellKey& k) {
    return to_string(k.estimator) + "_n" + std::to_string(k.n_detectors) + "_s" + std::to_string(k.seed_index) +
           ".json";
}

json cell_to_json(const ExperimentConfig& c, const CellResult& r) {
    return {{"config_hash", config_hash(c)},
            {"row", to_json(r.row)},
            {"elapsed_s", r.elapsed_s},
            {"lambda_snapshots", history_rows_json(r.lambda_snapshots)},
            {"distribution", r.distribution}};
}

CellResult cell_from_json(const ExperimentConfig& c, const json& j) {
    if (j.at("config_hash") != config_hash(c)) throw InputError("cell result belongs to a different configuration");
    CellResult r;
    r.row = report_row_from_json(j.at("row"));
    r.elapsed_s = j.at("elapsed_s");
    r.lambda_snapshots = history_rows_from_json(j.at("lambda_snapshots"));
    r.distribution = j.at("distribution");
    return r;
}

std::vector<CellKey> sweep_cells(const ExperimentConfig& c) {
    std::vector<CellKey> keys;
    for (Estimator e : c.evaluation.estimators)
        for (int n : c.sensing.detector_counts)
            for (int s = 0; s < c.evaluation.seeds; ++s) keys.push_back({e, n, s});
    return keys;
}

std::vector<CellResult> load_cells(const ExperimentConfig& c, const fs::path& out_dir) {
    std::vector<CellResult> out;
    for (const auto& key : sweep_cells(c)) {
        const fs::path p = cell_path(out_dir, key);
        std::ifstream in(p);
        if (!in) throw InputError("missing sweep cell result " + p.string());
        try {
            out.push_back(cell_from_json(c, json::parse(in)));
        } catch (const json::exception& e) {
            throw InputError(p.string() + ": unreadable cell result: " + e.what());
        } catch (const InputError& e) {
            throw InputError(p.string() + ": " + e.what());
        }
    }
    return out;
}

SweepResult sweep(const ExperimentConfig& c, const fs::path& out_dir, int threads,
                  const std::function<void(const std::string&)>& log) {
    const Ensemble ensemble = simulate(c, threads);
    const auto probes = evaluation_probes(c, ensemble.grid);
    const EstimateSummary truth = summarize_ensemble(ensemble, probes);
    const auto keys = sweep_cells(c);

    std::mutex log_mutex;
    std::vector<std::optional<CellResult>> slots(keys.size());
    parallel_for(keys.size(), threads, [&](std::size_t i) {
        const fs::path p = cell_path(out_dir, keys[i]);
        if (std::ifstream in(p); in) {
            try {
                slots[i] = cell_from_json(c, json::parse(in));
                return;
            } catch (const std::exception&) {
                // Stale or unreadable leftovers are recomputed.
            }
        }
        slots[i] = run_cell(c, ensemble, truth, probes, keys[i]);
        atomic_write(p, [&](std::ostream& out) { out << cell_to_json(c, *slots[i]).dump() << '\n'; });
        if (log) {
            std::lock_guard lock(log_mutex);
            log("cell " + slots[i]->row.model + " n=" + std::to_string(keys[i].n_detectors) +
                " seed=" + std::to_string(keys[i].seed_index) + " RE_rho=" + format_double(slots[i]->row.metrics.re_rho) +
                " (" + format_double(slots[i]->elapsed_s) + " s)");
        }
    });

    SweepResult result;
    for (auto& s : slots) result.cells.push_back(std::move(*s));
    result.rows = write_reports(c, out_dir, result.cells);
    return result;
}

std::vector<ReportRow> write_reports(const ExperimentConfig& c, const fs::path& out_dir,
                                     const std::vector<CellResult>& cells) {
    std::vector<ReportRow> rows;
    for (const auto& cell : cells) rows.push_back(cell.row);
    write_report_csv(out_dir / "report.csv", rows);
    const auto medians = median_over_seeds(rows);
    write_report_csv(out_dir / "report_median.csv", medians);
    const auto lambdas = lambda_convergence_report(rows);
    write_lambda_report_csv(out_dir / "lambda_report.csv", lambdas);

    const Grid grid = c.scenario.grid();
    const auto probes = evaluation_probes(c, grid);
    atomic_write(out_dir / "probes.csv", [&](std::ostream& out) {
        out << "x_m,t_s,cell,level\n";
        for (const auto& p : probes)
            out << format_double(p.x) << ',' << format_double(p.t) << ',' << p.cell << ',' << p.level << '\n';
    });
    atomic_write(out_dir / "timings.csv", [&](std::ostream& out) {
        out << "model,n_detectors,seed,wall_s\n";
        for (const auto& cell : cells)
            out << cell.row.model << ',' << cell.row.n_detectors << ',' << cell.row.seed << ','
                << format_double(cell.elapsed_s) << '\n';
    });

    json plot;
    plot["detector_counts"] = c.sensing.detector_counts;
    for (const auto& r : medians) {
        plot["relative_error"]["rho"][r.model].push_back(r.metrics.re_rho);
        plot["relative_error"]["u"][r.model].push_back(r.metrics.re_u);
        plot["kl_divergence"]["rho"][r.model].push_back(r.metrics.kl_rho);
        plot["kl_divergence"]["u"][r.model].push_back(r.metrics.kl_u);
    }
    for (const auto& l : lambdas) {
        plot["lambda_median"][l.model]["rho_max"].push_back(l.rho_max);
        plot["lambda_median"][l.model]["u_max"].push_back(l.u_max);
        plot["lambda_median"][l.model]["tau"].push_back(l.tau);
    }
    plot["lambda_trajectories"] = json::array();
    plot["distributions"] = json::array();
    for (const auto& cell : cells) {
        json traj{{"model", cell.row.model}, {"n_detectors", cell.row.n_detectors}, {"seed", cell.row.seed}};
        for (const auto& s : cell.lambda_snapshots) {
            traj["iter"].push_back(s.iter + 1);
            traj["rho_max"].push_back(s.rho_max);
            traj["u_max"].push_back(s.u_max);
            traj["tau"].push_back(s.tau);
        }
        plot["lambda_trajectories"].push_back(traj);
        json dist = cell.distribution;
        dist["model"] = cell.row.model;
        dist["n_detectors"] = cell.row.n_detectors;
        dist["seed"] = cell.row.seed;
        plot["distributions"].push_back(dist);
    }
    plot["probes"] = json::array();
    for (const auto& p : probes) plot["probes"].push_back({{"x_m", p.x}, {"t_s", p.t}});
    const PhysicsParams truth_mean = c.scenario.lambda.mean();
    plot["lambda_truth_mean"] = {{"rho_max", truth_mean.rho_max}, {"u_max", truth_mean.u_max}, {"tau", truth_mean.tau}};
    atomic_write(out_dir / "plot_data.json", [&](std::ostream& out) { out << plot.dump(1) << '\n'; });
    return rows;
}

}  // namespace uqtse
