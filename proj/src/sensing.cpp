#include "uqtse/sensing.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

namespace uqtse {

void DetectorArray::validate(const SpaceTimeDomain& domain) const {
    if (positions.empty()) throw std::invalid_argument("detector array is empty");
    if (!(sampling_period > 0.0)) throw std::invalid_argument("sampling period must be positive");
    for (std::size_t j = 0; j < positions.size(); ++j) {
        if (!(positions[j] > 0.0 && positions[j] < domain.length()))
            throw std::invalid_argument("detector " + std::to_string(j) + " outside (0, L)");
        if (j > 0 && !(positions[j] > positions[j - 1]))
            throw std::invalid_argument("detector positions must be strictly increasing");
    }
}

DetectorArray place_detectors(int n, const SpaceTimeDomain& domain, double sampling_period) {
    if (n < 1) throw std::invalid_argument("need at least one detector");
    DetectorArray out;
    out.sampling_period = sampling_period;
    for (int j = 1; j <= n; ++j) out.positions.push_back(j * domain.length() / (n + 1));
    out.validate(domain);
    return out;
}

std::vector<double> sampling_times(const DetectorArray& detectors, const Grid& grid) {
    const double last = (grid.nt() - 1) * grid.dt();
    std::vector<double> times;
    for (int j = 0;; ++j) {
        const double t = j * detectors.sampling_period;
        if (t > last + 1e-9 * grid.dt()) break;
        times.push_back(t);
    }
    return times;
}

ObservationSet extract_observations(const Ensemble& ensemble, const DetectorArray& detectors,
                                    const NoiseModel& noise, std::uint64_t seed) {
    if (ensemble.realizations.empty()) throw std::invalid_argument("ensemble is empty");
    const Grid& grid = ensemble.grid;
    detectors.validate(grid.domain());
    noise.validate();

    const auto times = sampling_times(detectors, grid);
    std::vector<int> cells;
    for (double x : detectors.positions) cells.push_back(grid.cell_of(x));

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    std::vector<ObservationRecord> records;
    records.reserve(ensemble.size() * times.size() * cells.size());
    for (const auto& field : ensemble.realizations) {
        for (double t : times) {
            const int k = grid.level_of(t);
            for (std::size_t j = 0; j < cells.size(); ++j) {
                double rho = field.rho(cells[j], k);
                double u = field.u(cells[j], k);
                if (noise.sigma_rho > 0.0) rho += noise.sigma_rho * unit(rng);
                if (noise.sigma_u > 0.0) u += noise.sigma_u * unit(rng);
                records.push_back({detectors.positions[j], t, std::max(0.0, rho), std::max(0.0, u)});
            }
        }
    }
    return ObservationSet(grid.domain(), std::move(records));
}

CollocationStrategy collocation_strategy_from_string(const std::string& s) {
    if (s == "uniform") return CollocationStrategy::UniformRandom;
    if (s == "latin-hypercube") return CollocationStrategy::LatinHypercube;
    throw std::invalid_argument("unknown collocation strategy '" + s + "'");
}

std::string to_string(CollocationStrategy s) {
    return s == CollocationStrategy::UniformRandom ? "uniform" : "latin-hypercube";
}

CollocationSet sample_collocation(int n_c, const SpaceTimeDomain& domain, CollocationStrategy strategy,
                                  std::uint64_t seed) {
    if (n_c < 1) throw std::invalid_argument("need at least one collocation point");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<CollocationPoint> points(n_c);
    const double L = domain.length();
    const double T = domain.horizon();

    if (strategy == CollocationStrategy::UniformRandom) {
        for (auto& p : points) {
            p.x = L * unit(rng);
            p.t = T * unit(rng);
        }
    } else {
        std::vector<int> sx(n_c), st(n_c);
        std::iota(sx.begin(), sx.end(), 0);
        std::iota(st.begin(), st.end(), 0);
        std::shuffle(sx.begin(), sx.end(), rng);
        std::shuffle(st.begin(), st.end(), rng);
        for (int j = 0; j < n_c; ++j) {
            points[j].x = L * (sx[j] + unit(rng)) / n_c;
            points[j].t = T * (st[j] + unit(rng)) / n_c;
        }
    }
    return CollocationSet(domain, std::move(points));
}

namespace {

// Splits the straight segment (t0, x0) -> (t1, x1) at every grid line and
// credits each piece's duration and distance to the cell containing it.
void accumulate_segment(double t0, double x0, double t1, double x1, const Grid& grid,
                        std::vector<double>& time_in, std::vector<double>& dist_in) {
    const double duration = t1 - t0;
    const double travel = x1 - x0;
    if (duration <= 0.0) return;
    std::vector<double> cuts{0.0, 1.0};
    auto add_crossings = [&](double a, double b, double step) {
        if (a == b) return;
        const double lo = std::min(a, b);
        const double hi = std::max(a, b);
        for (double m = std::ceil(lo / step); m * step < hi; m += 1.0) {
            const double s = (m * step - a) / (b - a);
            if (s > 0.0 && s < 1.0) cuts.push_back(s);
        }
    };
    add_crossings(x0, x1, grid.dx());
    add_crossings(t0, t1, grid.dt());
    std::sort(cuts.begin(), cuts.end());

    const double L = grid.domain().length();
    const double T = grid.domain().horizon();
    for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
        const double sa = cuts[c], sb = cuts[c + 1];
        if (sb <= sa) continue;
        const double sm = 0.5 * (sa + sb);
        const double xm = x0 + sm * travel;
        const double tm = t0 + sm * duration;
        if (xm < 0.0 || xm >= L || tm < 0.0 || tm >= T) continue;
        const int i = std::min(static_cast<int>(xm / grid.dx()), grid.nx() - 1);
        const int k = std::min(static_cast<int>(tm / grid.dt()), grid.nt() - 1);
        const std::size_t n = grid.index(i, k);
        time_in[n] += duration * (sb - sa);
        dist_in[n] += std::abs(travel) * (sb - sa);
    }
}

}  // namespace

IngestedField ingest_trajectories(std::span<const TrajectoryRecord> records, const Grid& grid,
                                  const IngestOptions& options) {
    std::set<int> lanes(options.lanes.begin(), options.lanes.end());
    if (lanes.empty())
        for (const auto& r : records) lanes.insert(r.lane);

    std::map<long, std::vector<const TrajectoryRecord*>> by_vehicle;
    for (const auto& r : records)
        if (lanes.count(r.lane)) by_vehicle[r.vehicle_id].push_back(&r);
    if (by_vehicle.empty()) throw std::invalid_argument("no usable trajectory records");

    std::vector<double> time_in(grid.size(), 0.0), dist_in(grid.size(), 0.0);
    for (const auto& [id, samples] : by_vehicle) {
        for (std::size_t j = 1; j < samples.size(); ++j) {
            const auto& a = *samples[j - 1];
            const auto& b = *samples[j];
            if (b.time < a.time)
                throw std::invalid_argument("trajectory times decrease for vehicle " + std::to_string(id));
            accumulate_segment(a.time - options.time_offset, a.position - options.position_offset,
                               b.time - options.time_offset, b.position - options.position_offset, grid,
                               time_in, dist_in);
        }
    }

    IngestedField out{StateField(grid, std::vector<double>(grid.size(), 0.0), std::vector<double>(grid.size(), 0.0)),
                      std::vector<bool>(grid.size(), false), static_cast<int>(lanes.size()), 0.0, 0.0};
    out.total_time = std::accumulate(time_in.begin(), time_in.end(), 0.0);
    out.total_distance = std::accumulate(dist_in.begin(), dist_in.end(), 0.0);
    if (out.total_time <= 0.0) throw std::invalid_argument("no usable trajectory records inside the grid");

    const double area = grid.dx() * grid.dt() * out.lane_count;
    std::vector<double> rho(grid.size(), 0.0), u(grid.size(), 0.0);
    std::vector<int> source(grid.size(), -1);
    std::deque<std::size_t> frontier;
    for (std::size_t n = 0; n < grid.size(); ++n) {
        if (time_in[n] > 0.0) {
            rho[n] = time_in[n] / area;
            u[n] = dist_in[n] / time_in[n];
            source[n] = static_cast<int>(n);
            frontier.push_back(n);
        }
    }
    // Breadth-first fill: each empty cell copies the closest observed cell.
    while (!frontier.empty()) {
        const std::size_t n = frontier.front();
        frontier.pop_front();
        const int i = static_cast<int>(n % grid.nx());
        const int k = static_cast<int>(n / grid.nx());
        const int di[] = {-1, 1, 0, 0};
        const int dk[] = {0, 0, -1, 1};
        for (int d = 0; d < 4; ++d) {
            const int ni = i + di[d], nk = k + dk[d];
            if (ni < 0 || ni >= grid.nx() || nk < 0 || nk >= grid.nt()) continue;
            const std::size_t m = grid.index(ni, nk);
            if (source[m] >= 0) continue;
            source[m] = source[n];
            rho[m] = rho[n];
            u[m] = u[n];
            out.filled[m] = true;
            frontier.push_back(m);
        }
    }
    out.field = StateField(grid, std::move(rho), std::move(u));
    return out;
}

}  // namespace uqtse
