// uqtse: simulate -> make-dataset -> train -> evaluate -> report, plus sweep.
//
// Every command writes its artifacts through a temporary file and a rename,
// and leaves a manifest.json next to them with the resolved configuration,
// its hash, the master seed and the hashes of every input and output.
//
// Exit codes: 0 ok, 2 configuration or usage error, 3 numerical failure,
// 4 missing or unreadable input.

#include "uqtse/errors.hpp"
#include "uqtse/experiment.hpp"
#include "uqtse/io.hpp"
#include "uqtse/parallel.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace uqtse;

namespace {

constexpr const char* kToolVersion = "1.0.0";

struct CommonOptions {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    int threads = default_thread_count();
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--config", o.config, "experiment configuration (JSON)")->envname("UQTSE_CONFIG");
    cmd->add_option("--out", o.out, "output directory")->envname("UQTSE_OUT")->required();
    cmd->add_option("--seed", o.seed, "master seed, overrides the configuration")->envname("UQTSE_SEED");
    cmd->add_option("--threads", o.threads, "worker threads")
        ->envname("UQTSE_THREADS")
        ->check(CLI::PositiveNumber);
}

ExperimentConfig resolve_config(const CommonOptions& o) {
    ExperimentConfig c = o.config.empty() ? default_experiment_config() : load_experiment_config(o.config);
    if (o.seed) c.seed = *o.seed;
    return c;
}

json file_entries(const std::vector<fs::path>& paths, const fs::path& base = {}) {
    json a = json::array();
    for (const auto& p : paths)
        a.push_back({{"path", base.empty() ? p.string() : p.lexically_relative(base).string()}, {"hash", file_hash(p)}});
    return a;
}

void write_manifest(const fs::path& out_dir, const std::string& command, const ExperimentConfig& c,
                    const json& parameters, const std::vector<fs::path>& inputs,
                    const std::vector<fs::path>& outputs) {
    json m;
    m["tool"] = "uqtse";
    m["tool_version"] = kToolVersion;
    m["schema_version"] = kConfigSchemaVersion;
    m["command"] = command;
    m["seed"] = c.seed;
    m["config_hash"] = config_hash(c);
    m["config"] = to_json(c);
    m["parameters"] = parameters;
    m["inputs"] = file_entries(inputs);
    m["outputs"] = file_entries(outputs, out_dir);
    atomic_write(out_dir / "manifest.json", [&](std::ostream& out) { out << m.dump(2) << '\n'; });
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

// Manifest of an upstream step, checked against the current configuration.
json upstream_manifest(const fs::path& dir, const std::string& command, const ExperimentConfig& c) {
    const json m = read_json(dir / "manifest.json");
    try {
        if (m.at("command") != command)
            throw InputError(dir.string() + " holds '" + m.at("command").get<std::string>() + "' output, not '" +
                             command + "'");
        if (m.at("config_hash") != config_hash(c))
            throw InputError(dir.string() + " was produced under a different configuration");
    } catch (const json::exception& e) {
        throw InputError(dir.string() + "/manifest.json: " + e.what());
    }
    return m;
}

Ensemble read_ensemble(const fs::path& path) {
    return to_ensemble(read_field_file(path));
}

int cmd_simulate(const CommonOptions& o) {
    const ExperimentConfig c = resolve_config(o);
    const fs::path out = o.out;
    const Ensemble ensemble = simulate(c, o.threads);
    write_field_file(out / "ensemble.uqf", to_field_file(ensemble));
    write_manifest(out, "simulate", c, {{"n_realizations", c.n_realizations}}, {}, {out / "ensemble.uqf"});
    return 0;
}

struct DatasetOptions {
    std::string ensemble;
    int detectors = 0;
    int seed_index = 0;
};

int cmd_make_dataset(const CommonOptions& o, const DatasetOptions& d) {
    const ExperimentConfig c = resolve_config(o);
    const fs::path out = o.out;
    const Ensemble ensemble = read_ensemble(d.ensemble);
    const Dataset ds = make_dataset(c, ensemble, d.detectors, d.seed_index);
    write_observations_csv(out / "observations.csv", ds.observations);
    write_collocation_csv(out / "collocation.csv", ds.collocation);
    write_manifest(out, "make-dataset", c, {{"n_detectors", d.detectors}, {"seed_index", d.seed_index}},
                   {d.ensemble}, {out / "observations.csv", out / "collocation.csv"});
    return 0;
}

struct TrainOptions {
    std::string dataset;
    std::string estimator;
};

int cmd_train(const CommonOptions& o, const TrainOptions& t) {
    const ExperimentConfig c = resolve_config(o);
    const fs::path out = o.out;
    const fs::path dir = t.dataset;
    const json dm = upstream_manifest(dir, "make-dataset", c);
    const Estimator e = estimator_from_string(t.estimator);
    const int n = dm.at("parameters").at("n_detectors");
    const int s = dm.at("parameters").at("seed_index");

    const SpaceTimeDomain& domain = c.scenario.domain;
    Dataset ds;
    ds.detectors = place_detectors(n, domain, c.sensing.sampling_period);
    ds.observations = read_observations_csv(dir / "observations.csv", domain);
    ds.collocation = read_collocation_csv(dir / "collocation.csv", domain);
    const std::vector<fs::path> inputs{dir / "manifest.json", dir / "observations.csv", dir / "collocation.csv"};

    const auto start = std::chrono::steady_clock::now();
    const auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
    json params{{"estimator", to_string(e)}, {"n_detectors", n}, {"seed_index", s}};

    if (e == Estimator::Ekf) {
        const EkfResult r = run_ekf_baseline(c, ds, c.scenario.grid());
        write_field_file(out / "ekf.uqf", ekf_field_file(r));
        params["regularized_updates"] = r.regularized_updates;
        if (c.evaluation.record_wall_time) params["elapsed_s"] = elapsed();
        write_manifest(out, "train", c, params, inputs, {out / "ekf.uqf"});
        return 0;
    }

    Trainer trainer = make_trainer(c, e, ds, n, s);
    try {
        atomic_write(out / "history.csv", [&](std::ostream& csv) {
            csv << "iter,loss_D,loss_G,loss_phy,rho_max,u_max,tau\n";
            trainer.run(c.training.iterations, [&](const HistoryRow& r) {
                csv << r.iter << ',' << format_double(r.loss_d) << ',' << format_double(r.loss_g) << ','
                    << format_double(r.loss_phy) << ',' << format_double(r.rho_max) << ',' << format_double(r.u_max)
                    << ',' << format_double(r.tau) << '\n';
                csv.flush();
            });
        });
    } catch (const NumericalError&) {
        atomic_write(out / "checkpoint_last_good.json",
                     [&](std::ostream& f) { f << trainer.checkpoint().dump() << '\n'; });
        throw;
    }
    atomic_write(out / "checkpoint.json", [&](std::ostream& f) { f << trainer.checkpoint().dump() << '\n'; });
    if (c.evaluation.record_wall_time) params["elapsed_s"] = elapsed();
    write_manifest(out, "train", c, params, inputs, {out / "history.csv", out / "checkpoint.json"});
    return 0;
}

struct EvaluateOptions {
    std::string ensemble;
    std::string run;
    std::string pred;
};

int cmd_evaluate(const CommonOptions& o, const EvaluateOptions& v) {
    const ExperimentConfig c = resolve_config(o);
    const fs::path out = o.out;
    const Ensemble truth_ensemble = read_ensemble(v.ensemble);
    const auto probes = evaluation_probes(c, truth_ensemble.grid);
    const EstimateSummary truth = summarize_ensemble(truth_ensemble, probes);
    std::vector<fs::path> inputs{v.ensemble};

    CellResult cell;
    if (!v.pred.empty()) {
        // A stored ensemble scored as an estimator in its own right.
        const FieldFile f = read_field_file(v.pred);
        inputs.emplace_back(v.pred);
        PhysicsParams lambda = c.scenario.lambda.mean();
        if (!f.lambdas.empty()) {
            double rho_max = 0.0, u_max = 0.0, tau = 0.0;
            for (const auto& l : f.lambdas) {
                rho_max += l.rho_max;
                u_max += l.u_max;
                tau += l.tau;
            }
            const auto n = static_cast<double>(f.lambdas.size());
            lambda = PhysicsParams{rho_max / n, u_max / n, tau / n};
        }
        cell = score_cell(c, truth, {Estimator::Ekf, 0, 0}, summarize_ensemble(to_ensemble(f), probes), lambda, {},
                          0.0);
        cell.row.model = "ensemble";
    } else {
        const fs::path dir = v.run;
        const json tm = upstream_manifest(dir, "train", c);
        const json& p = tm.at("parameters");
        const CellKey key{estimator_from_string(p.at("estimator")), p.at("n_detectors"), p.at("seed_index")};
        const double elapsed = p.value("elapsed_s", 0.0);
        inputs.push_back(dir / "manifest.json");
        if (key.estimator == Estimator::Ekf) {
            inputs.push_back(dir / "ekf.uqf");
            const EstimateSummary pred = summarize_ekf_file(c, read_field_file(dir / "ekf.uqf"), probes, key);
            cell = score_cell(c, truth, key, pred, c.scenario.lambda.mean(), {}, elapsed);
        } else {
            inputs.push_back(dir / "checkpoint.json");
            const json cp = read_json(dir / "checkpoint.json");
            const PhysGan estimate = checkpoint_estimate(cp);
            const EstimateSummary pred =
                summarize_gan(c, estimate, truth_ensemble.grid, probes,
                              evaluation_seed(c, key.estimator, key.n_detectors, key.seed_index));
            cell = score_cell(c, truth, key, pred, estimate.lambda(), checkpoint_lambda_snapshots(cp), elapsed);
        }
    }
    atomic_write(out / "cell.json", [&](std::ostream& f) { f << cell_to_json(c, cell).dump() << '\n'; });
    const std::vector<ReportRow> rows{cell.row};
    write_report_csv(out / "report.csv", rows);
    write_manifest(out, "evaluate", c, {{"model", cell.row.model}}, inputs, {out / "cell.json", out / "report.csv"});
    return 0;
}

int cmd_sweep(const CommonOptions& o) {
    const ExperimentConfig c = resolve_config(o);
    const fs::path out = o.out;
    sweep(c, out, o.threads, [](const std::string& line) { std::cerr << line << '\n'; });
    write_manifest(out, "sweep", c, {{"cells", sweep_cells(c).size()}}, {},
                   {out / "report.csv", out / "report_median.csv", out / "lambda_report.csv", out / "plot_data.json"});
    return 0;
}

struct ReportOptions {
    std::string sweep_dir;
    std::vector<std::string> cells;
};

int cmd_report(const CommonOptions& o, const ReportOptions& r) {
    const ExperimentConfig c = resolve_config(o);
    const fs::path out = o.out;
    std::vector<CellResult> cells;
    std::vector<fs::path> inputs;
    if (!r.sweep_dir.empty()) {
        cells = load_cells(c, r.sweep_dir);
        for (const auto& key : sweep_cells(c)) inputs.push_back(fs::path(r.sweep_dir) / "cells" / cell_file_name(key));
    } else {
        for (const auto& p : r.cells) {
            try {
                cells.push_back(cell_from_json(c, read_json(p)));
            } catch (const json::exception& e) {
                throw InputError(p + ": " + e.what());
            }
            inputs.emplace_back(p);
        }
    }
    write_reports(c, out, cells);
    write_manifest(out, "report", c, {{"cells", cells.size()}}, inputs,
                   {out / "report.csv", out / "report_median.csv", out / "lambda_report.csv", out / "plot_data.json"});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Uncertainty quantification for traffic state estimation with physics-informed GANs"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    CommonOptions common;
    DatasetOptions dataset;
    TrainOptions train;
    EvaluateOptions evaluate;
    ReportOptions report;

    auto* simulate_cmd = app.add_subcommand("simulate", "generate the ground-truth ensemble");
    add_common(simulate_cmd, common);

    auto* dataset_cmd = app.add_subcommand("make-dataset", "sample detector observations and collocation points");
    add_common(dataset_cmd, common);
    dataset_cmd->add_option("--ensemble", dataset.ensemble, "ensemble file from simulate")->required();
    dataset_cmd->add_option("--detectors", dataset.detectors, "number of detectors")
        ->required()
        ->check(CLI::PositiveNumber);
    dataset_cmd->add_option("--seed-index", dataset.seed_index, "replicate index")->check(CLI::NonNegativeNumber);

    auto* train_cmd = app.add_subcommand("train", "train a GAN estimator or run the EKF on a dataset");
    add_common(train_cmd, common);
    train_cmd->add_option("--dataset", train.dataset, "directory written by make-dataset")->required();
    train_cmd->add_option("--estimator", train.estimator, "lwr-physgan, arz-physgan, pure-gan or ekf")->required();

    auto* evaluate_cmd = app.add_subcommand("evaluate", "score an estimate against the ground truth");
    add_common(evaluate_cmd, common);
    evaluate_cmd->add_option("--ensemble", evaluate.ensemble, "ground-truth ensemble file")->required();
    auto* run_opt = evaluate_cmd->add_option("--run", evaluate.run, "directory written by train");
    auto* pred_opt = evaluate_cmd->add_option("--pred", evaluate.pred, "ensemble file scored as a prediction");
    run_opt->excludes(pred_opt);

    auto* sweep_cmd = app.add_subcommand("sweep", "every estimator x detector count x seed, then the reports");
    add_common(sweep_cmd, common);

    auto* report_cmd = app.add_subcommand("report", "metric report and plot data from cell results");
    add_common(report_cmd, common);
    auto* dir_opt = report_cmd->add_option("--sweep-dir", report.sweep_dir, "directory written by sweep");
    auto* cells_opt = report_cmd->add_option("--cells", report.cells, "cell.json files from evaluate, in report order");
    dir_opt->excludes(cells_opt);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    if (*evaluate_cmd && run_opt->count() + pred_opt->count() == 0) {
        std::cerr << "evaluate needs --run or --pred\n";
        return 2;
    }
    if (*report_cmd && dir_opt->count() + cells_opt->count() == 0) {
        std::cerr << "report needs --sweep-dir or --cells\n";
        return 2;
    }

    try {
        if (*simulate_cmd) return cmd_simulate(common);
        if (*dataset_cmd) return cmd_make_dataset(common, dataset);
        if (*train_cmd) return cmd_train(common, train);
        if (*evaluate_cmd) return cmd_evaluate(common, evaluate);
        if (*sweep_cmd) return cmd_sweep(common);
        if (*report_cmd) return cmd_report(common, report);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return 4;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return 4;
    } catch (const std::invalid_argument& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    }
    return 2;
}
