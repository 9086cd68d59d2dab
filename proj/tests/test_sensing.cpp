#include "uqtse/sensing.hpp"

#include "uqtse/physics.hpp"

#include <doctest.h>

#include <cmath>
#include <set>
#include <stdexcept>

using namespace uqtse;

namespace {

Ensemble constant_ensemble(double rho, double u, int realizations = 2) {
    const Grid g(SpaceTimeDomain(1000.0, 61.0), 10, 61); // dt = 1 s, last level at 60 s
    Ensemble e{g, {}, {}};
    for (int r = 0; r < realizations; ++r) {
        e.realizations.emplace_back(g, std::vector<double>(g.size(), rho), std::vector<double>(g.size(), u));
        e.lambdas.emplace_back(0.4, 20.0, 10.0);
    }
    return e;
}

}  // namespace

TEST_SUITE("sensing") {

TEST_CASE("detectors are evenly spaced inside the segment") {
    const SpaceTimeDomain d(1000.0, 300.0);
    const auto a = place_detectors(4, d);
    REQUIRE(a.positions.size() == 4u);
    CHECK(a.positions[0] == doctest::Approx(200.0));
    CHECK(a.positions[3] == doctest::Approx(800.0));
    CHECK_THROWS_AS(place_detectors(0, d), std::invalid_argument);
    DetectorArray bad{{10.0, 5.0}, 5.0};
    CHECK_THROWS_AS(bad.validate(d), std::invalid_argument);
}

TEST_CASE("noise-free reads copy the field at the detector cells") {
    const auto e = constant_ensemble(0.12, 14.0);
    const auto det = place_detectors(3, e.grid.domain(), 5.0);
    const auto obs = extract_observations(e, det, {0.0, 0.0}, 1);
    // 13 sampling instants (0..60 s) x 3 detectors x 2 realizations.
    CHECK(obs.size() == 13u * 3u * 2u);
    for (const auto& r : obs.records()) {
        CHECK(r.rho == 0.12);
        CHECK(r.u == 14.0);
    }
    CHECK(obs[0].t == 0.0);
    CHECK(obs[1].x == doctest::Approx(500.0));
    CHECK(obs[3].t == doctest::Approx(5.0));
}

TEST_CASE("read noise has the configured spread and is clamped at zero") {
    const auto e = constant_ensemble(0.2, 10.0, 40);
    const auto obs = extract_observations(e, place_detectors(10, e.grid.domain()), {0.01, 1.0}, 5);
    double s2r = 0.0, s2u = 0.0;
    for (const auto& r : obs.records()) {
        s2r += (r.rho - 0.2) * (r.rho - 0.2);
        s2u += (r.u - 10.0) * (r.u - 10.0);
    }
    const double n = static_cast<double>(obs.size());
    CHECK(std::sqrt(s2r / n) == doctest::Approx(0.01).epsilon(0.05));
    CHECK(std::sqrt(s2u / n) == doctest::Approx(1.0).epsilon(0.05));
    const auto near_zero = extract_observations(constant_ensemble(0.0, 0.0), place_detectors(5, e.grid.domain()),
                                                {0.05, 1.0}, 9);
    for (const auto& r : near_zero.records()) {
        CHECK(r.rho >= 0.0);
        CHECK(r.u >= 0.0);
    }
}

TEST_CASE("Latin hypercube puts one point in every stratum") {
    const SpaceTimeDomain d(1000.0, 300.0);
    const int n = 64;
    const auto c = sample_collocation(n, d, CollocationStrategy::LatinHypercube, 4);
    std::set<int> xs, ts;
    for (const auto& p : c.points()) {
        xs.insert(static_cast<int>(p.x / (1000.0 / n)));
        ts.insert(static_cast<int>(p.t / (300.0 / n)));
    }
    CHECK(xs.size() == static_cast<std::size_t>(n));
    CHECK(ts.size() == static_cast<std::size_t>(n));
    const auto u = sample_collocation(n, d, CollocationStrategy::UniformRandom, 4);
    for (const auto& p : u.points()) CHECK(d.contains(p.x, p.t));
    CHECK(collocation_strategy_from_string(to_string(CollocationStrategy::UniformRandom)) ==
          CollocationStrategy::UniformRandom);
    CHECK_THROWS_AS(collocation_strategy_from_string("grid"), std::invalid_argument);
}

TEST_CASE("Edie aggregation of a uniform platoon recovers density and speed") {
    // Vehicles every 25 m at 15 m/s on one lane: rho = 1/25 veh/m, u = 15 m/s.
    const Grid g(SpaceTimeDomain(500.0, 60.0), 10, 12);
    std::vector<TrajectoryRecord> recs;
    for (long v = 0; v < 80; ++v)
        for (int f = 0; f <= 600; ++f) {
            const double t = 0.1 * f;
            recs.push_back({v, t, -1000.0 + 25.0 * v + 15.0 * t, 15.0, 1});
        }
    const auto out = ingest_trajectories(recs, g);
    CHECK(out.lane_count == 1);
    for (int k = 0; k < g.nt(); ++k)
        for (int i = 0; i < g.nx(); ++i) {
            CHECK(out.field.rho(i, k) == doctest::Approx(1.0 / 25.0).epsilon(1e-9));
            CHECK(out.field.u(i, k) == doctest::Approx(15.0).epsilon(1e-9));
        }
    // Total time spent equals the density integral over the space-time box.
    CHECK(out.total_time == doctest::Approx(500.0 * 60.0 / 25.0).epsilon(1e-9));
}

TEST_CASE("Edie aggregation fills empty cells and filters lanes") {
    const Grid g(SpaceTimeDomain(100.0, 10.0), 4, 2);
    std::vector<TrajectoryRecord> recs{{1, 0.0, 0.0, 10.0, 1}, {1, 2.0, 20.0, 10.0, 1}, {2, 0.0, 0.0, 5.0, 2},
                                       {2, 10.0, 50.0, 5.0, 2}};
    IngestOptions only_one;
    only_one.lanes = {1};
    const auto out = ingest_trajectories(recs, g, only_one);
    CHECK_FALSE(out.filled[g.index(0, 0)]);
    CHECK(out.filled[g.index(3, 1)]);
    CHECK(out.field.u(3, 1) == doctest::Approx(10.0));
    CHECK(out.field.rho(0, 0) == doctest::Approx(2.0 / (25.0 * 5.0)));
    std::vector<TrajectoryRecord> backwards{{1, 2.0, 0.0, 1.0, 1}, {1, 1.0, 1.0, 1.0, 1}};
    CHECK_THROWS_AS(ingest_trajectories(backwards, g), std::invalid_argument);
}

}
