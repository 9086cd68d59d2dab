#pragma once

// Experiment configuration and the pipeline stages the CLI exposes:
// simulate -> make dataset -> train / filter -> evaluate, and the sweep that
// composes them over detector counts, estimators and seeds.
//
// Configuration is JSON. Every section and key is optional (defaults below);
// unknown keys and ill-typed values raise ConfigError naming the key path.

#include "uqtse/ekf.hpp"
#include "uqtse/evaluation.hpp"
#include "uqtse/io.hpp"
#include "uqtse/physgan.hpp"
#include "uqtse/sensing.hpp"
#include "uqtse/solver.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace uqtse {

inline constexpr int kConfigSchemaVersion = 1;

enum class Estimator { LwrPhysGan, ArzPhysGan, PureGan, Ekf };

std::string to_string(Estimator e);
Estimator estimator_from_string(const std::string& s);
GanMode gan_mode_of(Estimator e); // throws for Ekf

struct SensingConfig {
    std::vector<int> detector_counts{4, 8, 12, 18};
    double sampling_period = kDefaultSamplingPeriod;
    int n_collocation = 2000;
    CollocationStrategy collocation = CollocationStrategy::LatinHypercube;
};

struct EvaluationConfig {
    std::vector<Estimator> estimators{Estimator::LwrPhysGan, Estimator::ArzPhysGan, Estimator::PureGan,
                                      Estimator::Ekf};
    int seeds = 3;
    int mean_samples = 16;   // latent draws per grid point for the mean field
    int probe_samples = 200; // draws per probe point for KL
    int probe_detectors = 18;
    int probe_times = 20;
    int histogram_bins = 32;
    bool record_wall_time = false; // wall_s column; off keeps reports byte-stable
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    Scenario scenario;
    int n_realizations = 32;
    SensingConfig sensing;
    PhysGanConfig model;
    TrainingConfig training;
    EkfConfig ekf;
    EvaluationConfig evaluation;
};

/// Defaults: 1 km / 300 s segment, jam pocket plus modulated inflow, ARZ truth
/// with lambda around (0.38 veh/m, 22.9 m/s, 10 s).
ExperimentConfig default_experiment_config();

ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& c);
std::string config_hash(const ExperimentConfig& c); // 16 hex digits over the canonical dump

// Seed streams derived from the master seed.
std::uint64_t ensemble_seed(const ExperimentConfig& c);
std::uint64_t dataset_seed(const ExperimentConfig& c, int n_detectors, int seed_index);
std::uint64_t training_seed(const ExperimentConfig& c, int n_detectors, int seed_index);
std::uint64_t evaluation_seed(const ExperimentConfig& c, Estimator e, int n_detectors, int seed_index);

Ensemble simulate(const ExperimentConfig& c, int threads);

struct Dataset {
    DetectorArray detectors;
    ObservationSet observations;
    CollocationSet collocation;
};

Dataset make_dataset(const ExperimentConfig& c, const Ensemble& ensemble, int n_detectors, int seed_index);

/// Fresh trainer for a GAN estimator (model initialized, nothing trained).
Trainer make_trainer(const ExperimentConfig& c, Estimator e, const Dataset& d, int n_detectors, int seed_index);

EkfResult run_ekf_baseline(const ExperimentConfig& c, const Dataset& d, const Grid& grid);

/// Probe points shared by every sweep cell.
std::vector<ProbePoint> evaluation_probes(const ExperimentConfig& c, const Grid& grid);

EstimateSummary summarize_gan(const ExperimentConfig& c, const PhysGan& model, const Grid& grid,
                              std::span<const ProbePoint> probes, std::uint64_t seed);

Metrics evaluate_summary(const ExperimentConfig& c, const EstimateSummary& truth, const EstimateSummary& pred);

struct CellKey {
    Estimator estimator;
    int n_detectors;
    int seed_index;
};

struct CellResult {
    ReportRow row;
    std::vector<HistoryRow> lambda_snapshots; // empty for the EKF
    double elapsed_s = 0.0;
    nlohmann::json distribution; // histograms at the middle probe point
};

/// Cells in report order: estimator, then detector count, then seed.
std::vector<CellKey> sweep_cells(const ExperimentConfig& c);

/// Scores an estimator's summary against the truth: metrics row, lambda
/// columns and the distribution snapshot. elapsed_s goes into wall_s only when
/// record_wall_time is set.
CellResult score_cell(const ExperimentConfig& c, const EstimateSummary& truth, const CellKey& key,
                      const EstimateSummary& pred, const PhysicsParams& lambda_hat,
                      std::vector<HistoryRow> lambda_snapshots, double elapsed_s);

/// EKF mean and variance fields as stored on disk.
FieldFile ekf_field_file(const EkfResult& r);

/// Summary of a stored EKF result, sampled with the cell's evaluation seed.
EstimateSummary summarize_ekf_file(const ExperimentConfig& c, const FieldFile& f, std::span<const ProbePoint> probes,
                                   const CellKey& key);

/// One sweep cell built from the stages above.
CellResult run_cell(const ExperimentConfig& c, const Ensemble& ensemble, const EstimateSummary& truth,
                    std::span<const ProbePoint> probes, const CellKey& key);

std::string cell_file_name(const CellKey& key);
nlohmann::json cell_to_json(const ExperimentConfig& c, const CellResult& r);
/// Throws InputError if the cell was produced under another configuration.
CellResult cell_from_json(const ExperimentConfig& c, const nlohmann::json& j);

struct SweepResult {
    std::vector<ReportRow> rows;
    std::vector<CellResult> cells;
};

/// Runs every (estimator, count, seed) cell, persisting each finished cell
/// under out_dir/cells so an interrupted sweep resumes, then writes
/// report.csv, report_median.csv, lambda_report.csv, probes.csv and
/// plot_data.json.
SweepResult sweep(const ExperimentConfig& c, const std::filesystem::path& out_dir, int threads,
                  const std::function<void(const std::string&)>& log = {});

/// Reads every finished cell of a sweep directory; throws InputError if one
/// is missing or belongs to another configuration.
std::vector<CellResult> load_cells(const ExperimentConfig& c, const std::filesystem::path& out_dir);

/// Rebuilds the report files of a sweep directory from its cell results.
std::vector<ReportRow> write_reports(const ExperimentConfig& c, const std::filesystem::path& out_dir,
                                     const std::vector<CellResult>& cells);

}  // namespace uqtse
