#pragma once

// On-disk formats.
//
// Observation CSV   header `x_m,t_s,rho_veh_per_m,u_m_per_s`
// Collocation CSV   header `x_m,t_s`
// Trajectory CSV    header `Vehicle_ID,Frame_ID,Local_Y,v_Vel,Lane_ID` (NGSIM subset;
//                   extra columns are ignored)
// Field file        line 1 `UQTSE-FIELDS 1`, line 2 one-line JSON metadata, then
//                   for every stored field: rho then u as nt*nx little-endian
//                   float64, level-major (value(i, k) at k*nx + i).
//
// Numbers in CSV files use the shortest representation that round-trips.

#include "uqtse/domain.hpp"
#include "uqtse/sensing.hpp"
#include "uqtse/solver.hpp"

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace uqtse {

std::string format_double(double v);

/// 64-bit FNV-1a as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);
std::string file_hash(const std::filesystem::path& path); // throws InputError if unreadable

/// Writes through a temporary sibling file and renames it over `path`, so a
/// failed writer never leaves a partial artifact behind.
void atomic_write(const std::filesystem::path& path, const std::function<void(std::ostream&)>& writer,
                  bool binary = false);

void write_observations_csv(const std::filesystem::path& path, const ObservationSet& obs);
void write_collocation_csv(const std::filesystem::path& path, const CollocationSet& col);

/// Streams rows to `sink` without holding the file in memory. Returns the row
/// count. Malformed rows raise InputError with the 1-based line number.
std::size_t for_each_observation(const std::filesystem::path& path,
                                 const std::function<void(const ObservationRecord&)>& sink);
std::size_t for_each_collocation(const std::filesystem::path& path,
                                 const std::function<void(const CollocationPoint&)>& sink);

ObservationSet read_observations_csv(const std::filesystem::path& path, const SpaceTimeDomain& domain);
CollocationSet read_collocation_csv(const std::filesystem::path& path, const SpaceTimeDomain& domain);

struct TrajectoryCsvOptions {
    double frame_period = 0.1;    // s per Frame_ID
    bool feet_to_meters = false;  // NGSIM ships Local_Y and v_Vel in feet
};

std::vector<TrajectoryRecord> read_trajectories_csv(const std::filesystem::path& path,
                                                    const TrajectoryCsvOptions& options = {});

/// A set of state fields on one grid plus provenance, e.g. an ensemble of
/// solver realizations or an estimator's mean and variance.
struct FieldFile {
    std::string estimator;            // "solver", "ekf", ...
    std::vector<std::string> labels;  // one per field
    std::vector<StateField> fields;
    std::vector<PhysicsParams> lambdas; // empty or one per field
};

FieldFile to_field_file(const Ensemble& ensemble);
Ensemble to_ensemble(const FieldFile& file);

void write_field_file(const std::filesystem::path& path, const FieldFile& file);
FieldFile read_field_file(const std::filesystem::path& path);

}  // namespace uqtse
