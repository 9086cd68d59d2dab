#include "uqtse/evaluation.hpp"

#include "uqtse/errors.hpp"
#include "uqtse/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

namespace uqtse {

double relative_error(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) throw std::invalid_argument("relative_error: size mismatch");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double d = pred[i] - truth[i];
        num += d * d;
        den += truth[i] * truth[i];
    }
    if (den == 0.0) throw std::invalid_argument("relative_error: reference field has zero norm");
    return std::sqrt(num / den);
}

void HistogramSpec::validate() const {
    if (bins < 2) throw std::invalid_argument("histogram needs at least 2 bins");
    if (!(upper > lower)) throw std::invalid_argument("histogram range is degenerate");
    if (!(epsilon > 0.0)) throw std::invalid_argument("histogram smoothing must be > 0");
}

HistogramSpec density_histogram(int bins) {
    return {bins, 0.0, 1.0, 1e-6};
}

HistogramSpec speed_histogram(int bins) {
    return {bins, 0.0, 50.0, 1e-6};
}

std::vector<double> smoothed_histogram(std::span<const double> samples, const HistogramSpec& spec) {
    spec.validate();
    if (samples.empty()) throw std::invalid_argument("histogram of an empty sample set");
    std::vector<double> mass(static_cast<std::size_t>(spec.bins), 0.0);
    const double width = (spec.upper - spec.lower) / spec.bins;
    for (double v : samples) {
        if (!std::isfinite(v)) throw std::invalid_argument("non-finite sample in histogram");
        const auto b = static_cast<long>(std::floor((v - spec.lower) / width));
        mass[static_cast<std::size_t>(std::clamp<long>(b, 0, spec.bins - 1))] += 1.0;
    }
    const double n = static_cast<double>(samples.size());
    double total = 0.0;
    for (double& m : mass) {
        m = m / n + spec.epsilon;
        total += m;
    }
    for (double& m : mass) m /= total;
    return mass;
}

double kl_divergence(std::span<const double> truth, std::span<const double> pred, const HistogramSpec& spec) {
    if (truth.size() < 2 || pred.size() < 2) throw std::invalid_argument("KL needs at least two samples per set");
    const auto p = smoothed_histogram(truth, spec);
    const auto q = smoothed_histogram(pred, spec);
    double kl = 0.0;
    for (std::size_t b = 0; b < p.size(); ++b) kl += p[b] * std::log(p[b] / q[b]);
    // Rounding can leave a tiny negative value for identical histograms.
    return std::max(0.0, kl);
}

std::vector<ProbePoint> probe_points(const DetectorArray& detectors, const Grid& grid, int n_times) {
    if (n_times < 1) throw std::invalid_argument("probe set needs at least one time");
    detectors.validate(grid.domain());
    std::vector<ProbePoint> out;
    const int last = grid.nt() - 1;
    for (int j = 0; j < n_times; ++j) {
        const int level = n_times == 1 ? 0 : static_cast<int>(std::lround(static_cast<double>(j) * last / (n_times - 1)));
        for (double x : detectors.positions) {
            const int cell = grid.cell_of(x);
            out.push_back({x, level * grid.dt(), cell, level});
        }
    }
    return out;
}

EstimateSummary summarize_ensemble(const Ensemble& ensemble, std::span<const ProbePoint> probes) {
    if (ensemble.size() == 0) throw std::invalid_argument("empty ensemble");
    const Grid& grid = ensemble.grid;
    EstimateSummary s{std::vector<double>(grid.size(), 0.0), std::vector<double>(grid.size(), 0.0), {}, {}};
    for (const auto& f : ensemble.realizations) {
        const auto rho = f.rho();
        const auto u = f.u();
        for (std::size_t i = 0; i < grid.size(); ++i) {
            s.rho_mean[i] += rho[i];
            s.u_mean[i] += u[i];
        }
    }
    const double inv = 1.0 / static_cast<double>(ensemble.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        s.rho_mean[i] *= inv;
        s.u_mean[i] *= inv;
    }
    for (const auto& p : probes) {
        std::vector<double> r, u;
        for (const auto& f : ensemble.realizations) {
            r.push_back(f.rho(p.cell, p.level));
            u.push_back(f.u(p.cell, p.level));
        }
        s.probe_rho.push_back(std::move(r));
        s.probe_u.push_back(std::move(u));
    }
    return s;
}

EstimateSummary summarize_gaussian(const StateField& mean, const StateField& variance,
                                   std::span<const ProbePoint> probes, int n_samples, std::uint64_t seed) {
    if (n_samples < 2) throw std::invalid_argument("need at least two samples per probe");
    EstimateSummary s{std::vector<double>(mean.rho().begin(), mean.rho().end()),
                      std::vector<double>(mean.u().begin(), mean.u().end()), {}, {}};
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (const auto& p : probes) {
        const double mr = mean.rho(p.cell, p.level), sr = std::sqrt(variance.rho(p.cell, p.level));
        const double mu = mean.u(p.cell, p.level), su = std::sqrt(variance.u(p.cell, p.level));
        std::vector<double> r(static_cast<std::size_t>(n_samples)), u(static_cast<std::size_t>(n_samples));
        for (int k = 0; k < n_samples; ++k) {
            r[k] = mr + sr * normal(rng);
            u[k] = mu + su * normal(rng);
        }
        s.probe_rho.push_back(std::move(r));
        s.probe_u.push_back(std::move(u));
    }
    return s;
}

Metrics compare(const EstimateSummary& truth, const EstimateSummary& pred, const HistogramSpec& rho_spec,
                const HistogramSpec& u_spec) {
    if (truth.probe_rho.size() != pred.probe_rho.size() || truth.probe_u.size() != pred.probe_u.size())
        throw std::invalid_argument("probe sets differ between truth and prediction");
    Metrics m;
    m.re_rho = relative_error(pred.rho_mean, truth.rho_mean);
    m.re_u = relative_error(pred.u_mean, truth.u_mean);
    const std::size_t n = truth.probe_rho.size();
    if (n > 0) {
        for (std::size_t p = 0; p < n; ++p) {
            m.kl_rho += kl_divergence(truth.probe_rho[p], pred.probe_rho[p], rho_spec);
            m.kl_u += kl_divergence(truth.probe_u[p], pred.probe_u[p], u_spec);
        }
        m.kl_rho /= static_cast<double>(n);
        m.kl_u /= static_cast<double>(n);
    }
    return m;
}

void write_report_csv(const std::filesystem::path& path, std::span<const ReportRow> rows) {
    atomic_write(path, [&](std::ostream& out) {
        out << kReportHeader << '\n';
        for (const auto& r : rows) {
            out << r.model << ',' << r.n_detectors << ',' << r.seed << ',' << format_double(r.metrics.re_rho) << ','
                << format_double(r.metrics.re_u) << ',' << format_double(r.metrics.kl_rho) << ','
                << format_double(r.metrics.kl_u) << ',' << format_double(r.rho_max_hat) << ','
                << format_double(r.u_max_hat) << ',' << format_double(r.tau_hat) << ',' << format_double(r.wall_s)
                << '\n';
        }
    });
}

std::vector<ReportRow> read_report_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kReportHeader)
        throw InputError(path.string() + ": unexpected report header");
    std::vector<ReportRow> rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
        if (cells.size() != 11) throw InputError(path.string() + ":" + std::to_string(line_no) + ": expected 11 columns");
        try {
            ReportRow r;
            r.model = cells[0];
            r.n_detectors = std::stoi(cells[1]);
            r.seed = std::stoi(cells[2]);
            r.metrics = {std::stod(cells[3]), std::stod(cells[4]), std::stod(cells[5]), std::stod(cells[6])};
            r.rho_max_hat = std::stod(cells[7]);
            r.u_max_hat = std::stod(cells[8]);
            r.tau_hat = std::stod(cells[9]);
            r.wall_s = std::stod(cells[10]);
            rows.push_back(std::move(r));
        } catch (const std::logic_error&) {
            throw InputError(path.string() + ":" + std::to_string(line_no) + ": malformed number");
        }
    }
    return rows;
}

nlohmann::json to_json(const ReportRow& r) {
    return {{"model", r.model},
            {"n_detectors", r.n_detectors},
            {"seed", r.seed},
            {"RE_rho", r.metrics.re_rho},
            {"RE_u", r.metrics.re_u},
            {"KL_rho", r.metrics.kl_rho},
            {"KL_u", r.metrics.kl_u},
            {"rho_max_hat", r.rho_max_hat},
            {"u_max_hat", r.u_max_hat},
            {"tau_hat", r.tau_hat},
            {"wall_s", r.wall_s}};
}

ReportRow report_row_from_json(const nlohmann::json& j) {
    ReportRow r;
    r.model = j.at("model");
    r.n_detectors = j.at("n_detectors");
    r.seed = j.at("seed");
    r.metrics = {j.at("RE_rho"), j.at("RE_u"), j.at("KL_rho"), j.at("KL_u")};
    r.rho_max_hat = j.at("rho_max_hat");
    r.u_max_hat = j.at("u_max_hat");
    r.tau_hat = j.at("tau_hat");
    r.wall_s = j.at("wall_s");
    return r;
}

double median(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("median of an empty set");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

namespace {

template <class Emit>
void for_each_group(std::span<const ReportRow> rows, Emit&& emit) {
    std::vector<std::pair<std::string, int>> order;
    std::map<std::pair<std::string, int>, std::vector<const ReportRow*>> groups;
    for (const auto& r : rows) {
        const auto key = std::make_pair(r.model, r.n_detectors);
        if (!groups.contains(key)) order.push_back(key);
        groups[key].push_back(&r);
    }
    for (const auto& key : order) emit(key, groups[key]);
}

template <class F>
double median_of(const std::vector<const ReportRow*>& group, F&& field) {
    std::vector<double> v;
    for (const auto* r : group) v.push_back(field(*r));
    return median(std::move(v));
}

}  // namespace

std::vector<ReportRow> median_over_seeds(std::span<const ReportRow> rows) {
    std::vector<ReportRow> out;
    for_each_group(rows, [&](const auto& key, const std::vector<const ReportRow*>& g) {
        ReportRow r;
        r.model = key.first;
        r.n_detectors = key.second;
        r.seed = -1;
        r.metrics.re_rho = median_of(g, [](const ReportRow& x) { return x.metrics.re_rho; });
        r.metrics.re_u = median_of(g, [](const ReportRow& x) { return x.metrics.re_u; });
        r.metrics.kl_rho = median_of(g, [](const ReportRow& x) { return x.metrics.kl_rho; });
        r.metrics.kl_u = median_of(g, [](const ReportRow& x) { return x.metrics.kl_u; });
        r.rho_max_hat = median_of(g, [](const ReportRow& x) { return x.rho_max_hat; });
        r.u_max_hat = median_of(g, [](const ReportRow& x) { return x.u_max_hat; });
        r.tau_hat = median_of(g, [](const ReportRow& x) { return x.tau_hat; });
        r.wall_s = median_of(g, [](const ReportRow& x) { return x.wall_s; });
        out.push_back(r);
    });
    return out;
}

std::vector<LambdaSummary> lambda_convergence_report(std::span<const ReportRow> rows) {
    std::vector<LambdaSummary> out;
    for_each_group(rows, [&](const auto& key, const std::vector<const ReportRow*>& g) {
        out.push_back({key.first, key.second, static_cast<int>(g.size()),
                       median_of(g, [](const ReportRow& x) { return x.rho_max_hat; }),
                       median_of(g, [](const ReportRow& x) { return x.u_max_hat; }),
                       median_of(g, [](const ReportRow& x) { return x.tau_hat; })});
    });
    return out;
}

void write_lambda_report_csv(const std::filesystem::path& path, std::span<const LambdaSummary> rows) {
    atomic_write(path, [&](std::ostream& out) {
        out << "model,n_detectors,runs,rho_max_median,u_max_median,tau_median\n";
        for (const auto& r : rows)
            out << r.model << ',' << r.n_detectors << ',' << r.runs << ',' << format_double(r.rho_max) << ','
                << format_double(r.u_max) << ',' << format_double(r.tau) << '\n';
    });
}

}  // namespace uqtse
