#pragma once

// Loop-detector placement and reads, collocation sampling, and Edie-style
// aggregation of vehicle trajectories onto space-time cells.

#include "uqtse/domain.hpp"
#include "uqtse/solver.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace uqtse {

inline constexpr double kDefaultSamplingPeriod = 5.0; // s

struct DetectorArray {
    std::vector<double> positions; // strictly increasing, inside (0, L)
    double sampling_period = kDefaultSamplingPeriod;

    void validate(const SpaceTimeDomain& domain) const;
};

/// Evenly spaced detectors x_j = j L / (n + 1), j = 1..n.
DetectorArray place_detectors(int n, const SpaceTimeDomain& domain,
                              double sampling_period = kDefaultSamplingPeriod);

/// Sampling instants j * period that fall on or before the last grid level.
std::vector<double> sampling_times(const DetectorArray& detectors, const Grid& grid);

/// Nearest-cell reads of every realization at every detector and sampling time,
/// plus independent Gaussian noise clamped at zero. Records are ordered by
/// realization, then time, then detector.
ObservationSet extract_observations(const Ensemble& ensemble, const DetectorArray& detectors,
                                    const NoiseModel& noise, std::uint64_t seed);

enum class CollocationStrategy { UniformRandom, LatinHypercube };

CollocationStrategy collocation_strategy_from_string(const std::string& s);
std::string to_string(CollocationStrategy s);

CollocationSet sample_collocation(int n_c, const SpaceTimeDomain& domain, CollocationStrategy strategy,
                                  std::uint64_t seed);

struct TrajectoryRecord {
    long vehicle_id = 0;
    double time = 0.0;     // s
    double position = 0.0; // m, along the segment
    double speed = 0.0;    // m/s
    int lane = 0;
};

struct IngestOptions {
    std::vector<int> lanes;       // empty: every lane present in the records
    double position_offset = 0.0; // subtracted from positions before gridding
    double time_offset = 0.0;     // subtracted from times before gridding
};

struct IngestedField {
    StateField field;
    std::vector<bool> filled; // cells with no travel time, filled from the nearest observed cell
    int lane_count = 0;
    double total_time = 0.0;     // veh s accumulated inside the domain
    double total_distance = 0.0; // veh m accumulated inside the domain
};

/// Edie's generalized definitions per cell (i, k) covering
/// [i dx, (i+1) dx) x [k dt, (k+1) dt): rho = time / (dx dt lanes),
/// u = distance / time.
IngestedField ingest_trajectories(std::span<const TrajectoryRecord> records, const Grid& grid,
                                  const IngestOptions& options = {});

}  // namespace uqtse
