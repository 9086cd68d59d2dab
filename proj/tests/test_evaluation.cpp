#include "uqtse/evaluation.hpp"

#include "uqtse/errors.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <stdexcept>

using namespace uqtse;

namespace {

std::vector<double> normal_samples(double mean, int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(mean, 1.0);
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = d(rng);
    return v;
}

ReportRow row(const std::string& model, int n, int seed, double re) {
    ReportRow r;
    r.model = model;
    r.n_detectors = n;
    r.seed = seed;
    r.metrics = {re, 2 * re, 3 * re, 4 * re};
    r.rho_max_hat = 0.3 + re;
    r.u_max_hat = 20 + re;
    r.tau_hat = 5 + re;
    return r;
}

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("relative error against a hand computation") {
    const std::vector<double> truth{3.0, 4.0}, pred{3.0, 5.0};
    CHECK(relative_error(pred, truth) == doctest::Approx(1.0 / 5.0));
    CHECK(relative_error(truth, truth) == 0.0);
    CHECK_THROWS_AS(relative_error(pred, std::vector<double>{0.0, 0.0}), std::invalid_argument);
    CHECK_THROWS_AS(relative_error(pred, std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("smoothed histogram mass") {
    const HistogramSpec s{4, 0.0, 1.0, 1e-6};
    const auto h = smoothed_histogram(std::vector<double>{0.1, 0.1, 0.6, 2.0, -1.0}, s);
    const double z = 1.0 + 4e-6;
    CHECK(h[0] == doctest::Approx((3.0 / 5 + 1e-6) / z)); // -1 lands in the first bin
    CHECK(h[1] == doctest::Approx(1e-6 / z));
    CHECK(h[2] == doctest::Approx((1.0 / 5 + 1e-6) / z));
    CHECK(h[3] == doctest::Approx((1.0 / 5 + 1e-6) / z));
    CHECK_THROWS_AS(smoothed_histogram(std::vector<double>{}, s), std::invalid_argument);
    CHECK_THROWS_AS(smoothed_histogram(std::vector<double>{NAN}, s), std::invalid_argument);
}

TEST_CASE("KL of disjoint point masses matches the two-bin closed form") {
    const HistogramSpec s{2, 0.0, 1.0, 1e-6};
    const double kl = kl_divergence(std::vector<double>{0.1, 0.2}, std::vector<double>{0.7, 0.9}, s);
    const double e = 1e-6 / (1.0 + 2e-6);
    CHECK(kl == doctest::Approx((1 - 2 * e) * std::log((1 - e) / e)).epsilon(1e-12));
}

TEST_CASE("KL between unit Gaussians one apart is one half") {
    const HistogramSpec s{64, -5.0, 6.0, 1e-6};
    const double kl = kl_divergence(normal_samples(0.0, 100000, 1), normal_samples(1.0, 100000, 2), s);
    CHECK(kl == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("KL is zero on identical samples and never negative") {
    const auto spec = density_histogram(32);
    const auto a = normal_samples(0.3, 500, 3);
    std::vector<double> clipped;
    for (double v : a) clipped.push_back(std::abs(v) * 0.2);
    CHECK(kl_divergence(clipped, clipped, spec) == 0.0);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (int i = 0; i < 50; ++i) {
        std::vector<double> p(30), q(30);
        for (auto& v : p) v = U(rng) * U(rng);
        for (auto& v : q) v = U(rng);
        CHECK(kl_divergence(p, q, spec) >= 0.0);
    }
}

TEST_CASE("probe points are ordered by time then position and snapped") {
    const Grid g(SpaceTimeDomain(1000.0, 100.0), 10, 11);
    const auto det = place_detectors(2, g.domain());
    const auto probes = probe_points(det, g, 3);
    REQUIRE(probes.size() == 6u);
    CHECK(probes[0].level == 0);
    CHECK(probes[2].level == 5);
    CHECK(probes[5].level == 10);
    CHECK(probes[1].cell == g.cell_of(det.positions[1]));
    CHECK(probes[3].t == doctest::Approx(5 * g.dt()));
}

TEST_CASE("ensemble and Gaussian summaries") {
    const Grid g(SpaceTimeDomain(100.0, 10.0), 2, 2);
    Ensemble e{g, {}, {}};
    e.realizations.emplace_back(g, std::vector<double>{0.1, 0.2, 0.3, 0.4}, std::vector<double>{1, 2, 3, 4});
    e.realizations.emplace_back(g, std::vector<double>{0.3, 0.2, 0.1, 0.0}, std::vector<double>{3, 2, 1, 0});
    const std::vector<ProbePoint> probes{{75.0, 10.0, 1, 1}};
    const auto s = summarize_ensemble(e, probes);
    for (double v : s.rho_mean) CHECK(v == doctest::Approx(0.2));
    CHECK(s.probe_rho[0] == std::vector<double>{0.4, 0.0});

    const StateField mean(g, {0.1, 0.1, 0.1, 0.1}, {10, 10, 10, 10});
    const StateField var(g, {1e-4, 1e-4, 1e-4, 1e-4}, {4, 4, 4, 4});
    const auto gs = summarize_gaussian(mean, var, probes, 20000, 5);
    double m = 0.0, v = 0.0;
    for (double x : gs.probe_u[0]) m += x;
    m /= 20000;
    for (double x : gs.probe_u[0]) v += (x - m) * (x - m);
    CHECK(m == doctest::Approx(10.0).epsilon(0.005));
    CHECK(std::sqrt(v / 20000) == doctest::Approx(2.0).epsilon(0.02));
    const auto metrics = compare(s, s, density_histogram(), speed_histogram());
    CHECK(metrics.re_rho == 0.0);
    CHECK(metrics.kl_u == 0.0);
}

TEST_CASE("report CSV round trip, medians and lambda table") {
    const std::vector<ReportRow> rows{row("arz-physgan", 4, 0, 0.3), row("arz-physgan", 4, 1, 0.1),
                                      row("arz-physgan", 4, 2, 0.2), row("pure-gan", 4, 0, 0.5),
                                      row("pure-gan", 4, 1, 0.4)};
    const auto path = std::filesystem::temp_directory_path() / "uqtse_report_test.csv";
    write_report_csv(path, rows);
    const auto back = read_report_csv(path);
    REQUIRE(back.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) CHECK(to_json(back[i]) == to_json(rows[i]));
    CHECK(to_json(report_row_from_json(to_json(rows[0]))) == to_json(rows[0]));

    const auto med = median_over_seeds(rows);
    REQUIRE(med.size() == 2u);
    CHECK(med[0].model == "arz-physgan");
    CHECK(med[0].seed == -1);
    CHECK(med[0].metrics.re_rho == doctest::Approx(0.2));
    CHECK(med[1].metrics.re_rho == doctest::Approx(0.45));
    const auto lam = lambda_convergence_report(rows);
    CHECK(lam[0].runs == 3);
    CHECK(lam[0].rho_max == doctest::Approx(0.5));
    CHECK(median({3.0, 1.0, 2.0, 10.0}) == doctest::Approx(2.5));
    CHECK_THROWS_AS(read_report_csv(std::filesystem::temp_directory_path() / "nope.csv"), InputError);
}

}
