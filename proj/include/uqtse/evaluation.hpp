#pragma once

// Accuracy and uncertainty metrics for estimators against a ground-truth
// ensemble, and the tabular report built from them.
//
// RE  = ||mean_pred - mean_truth||_2 / ||mean_truth||_2 over every grid point.
// KL  = KL(truth || prediction) between smoothed histograms, per probe point,
//       averaged over the probe set.

#include "uqtse/domain.hpp"
#include "uqtse/sensing.hpp"
#include "uqtse/solver.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace uqtse {

double relative_error(std::span<const double> pred, std::span<const double> truth);

struct HistogramSpec {
    int bins = 32;
    double lower = 0.0;
    double upper = 1.0;
    double epsilon = 1e-6; // added to every bin mass before renormalizing

    void validate() const;
};

HistogramSpec density_histogram(int bins = 32); // [0, 1] veh/m
HistogramSpec speed_histogram(int bins = 32);   // [0, 50] m/s

/// Bin probabilities after smoothing. Values outside the range fall into the
/// nearest edge bin.
std::vector<double> smoothed_histogram(std::span<const double> samples, const HistogramSpec& spec);

/// KL(truth || pred) in nats. Both sample sets need at least two entries.
double kl_divergence(std::span<const double> truth, std::span<const double> pred, const HistogramSpec& spec);

struct ProbePoint {
    double x;
    double t;
    int cell;
    int level;
};

/// Detector positions crossed with n_times evenly spaced levels from 0 to the
/// last level, snapped to the grid. Ordered by time, then position.
std::vector<ProbePoint> probe_points(const DetectorArray& detectors, const Grid& grid, int n_times = 20);

/// What an estimator contributes to the metrics: its mean over the whole
/// grid (level-major) and a sample set at every probe point.
struct EstimateSummary {
    std::vector<double> rho_mean;
    std::vector<double> u_mean;
    std::vector<std::vector<double>> probe_rho;
    std::vector<std::vector<double>> probe_u;
};

EstimateSummary summarize_ensemble(const Ensemble& ensemble, std::span<const ProbePoint> probes);

/// Gaussian marginals N(mean, variance) per cell, sampled at the probes.
EstimateSummary summarize_gaussian(const StateField& mean, const StateField& variance,
                                   std::span<const ProbePoint> probes, int n_samples, std::uint64_t seed);

struct Metrics {
    double re_rho = 0.0;
    double re_u = 0.0;
    double kl_rho = 0.0;
    double kl_u = 0.0;
};

Metrics compare(const EstimateSummary& truth, const EstimateSummary& pred, const HistogramSpec& rho_spec,
                const HistogramSpec& u_spec);

struct ReportRow {
    std::string model;
    int n_detectors = 0;
    int seed = 0;
    Metrics metrics;
    double rho_max_hat = 0.0;
    double u_max_hat = 0.0;
    double tau_hat = 0.0;
    double wall_s = 0.0;
};

inline constexpr const char* kReportHeader =
    "model,n_detectors,seed,RE_rho,RE_u,KL_rho,KL_u,rho_max_hat,u_max_hat,tau_hat,wall_s";

void write_report_csv(const std::filesystem::path& path, std::span<const ReportRow> rows);
std::vector<ReportRow> read_report_csv(const std::filesystem::path& path);

nlohmann::json to_json(const ReportRow& row);
ReportRow report_row_from_json(const nlohmann::json& j);

double median(std::vector<double> values);

/// Median over seeds of every metric, one row per (model, n_detectors) in
/// first-appearance order. The seed column is set to -1.
std::vector<ReportRow> median_over_seeds(std::span<const ReportRow> rows);

struct LambdaSummary {
    std::string model;
    int n_detectors = 0;
    int runs = 0;
    double rho_max = 0.0; // medians of the final estimates
    double u_max = 0.0;
    double tau = 0.0;
};

/// Final-iteration lambda per run aggregated into a (model, n_detectors) table.
std::vector<LambdaSummary> lambda_convergence_report(std::span<const ReportRow> rows);

void write_lambda_report_csv(const std::filesystem::path& path, std::span<const LambdaSummary> rows);

}  // namespace uqtse
