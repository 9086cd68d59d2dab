#include "uqtse/experiment.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

using namespace uqtse;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "uqtse_cli_test";

int run(const std::string& args) {
    const std::string cmd = std::string(UQTSE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json read_json(const fs::path& p) {
    std::ifstream in(p);
    return json::parse(in);
}

std::string q(const fs::path& p) {
    return "'" + p.string() + "'";
}

fs::path write_config(const std::string& name, const std::string& text) {
    fs::create_directories(kRoot);
    const fs::path p = kRoot / name;
    std::ofstream(p) << text;
    return p;
}

const char* kTiny = R"({
    "scenario": {"nx": 12, "n_realizations": 3},
    "sensing": {"detector_counts": [3], "n_collocation": 100},
    "model": {"generator_hidden": [6, 6], "discriminator_hidden": [6]},
    "training": {"iterations": 12, "batch_size": 16},
    "evaluation": {"seeds": 1, "mean_samples": 2, "probe_samples": 10, "probe_times": 3}})";

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("exit codes distinguish configuration and input errors") {
    fs::remove_all(kRoot);
    const fs::path bad = write_config("bad.json", R"({"scenario": {"nxx": 3}})");
    const fs::path malformed = write_config("malformed.json", "{");
    CHECK(run("simulate --config " + q(bad) + " --out " + q(kRoot / "x")) == 2);
    CHECK(run("simulate --config " + q(malformed) + " --out " + q(kRoot / "x")) == 2);
    CHECK(run("simulate --config " + q(kRoot / "missing.json") + " --out " + q(kRoot / "x")) == 4);
    CHECK(run("simulate") == 2);
    CHECK(run("frobnicate") == 2);
    const fs::path tiny = write_config("tiny.json", kTiny);
    CHECK(run("train --config " + q(tiny) + " --dataset " + q(kRoot / "nowhere") + " --estimator pure-gan --out " +
              q(kRoot / "x")) == 4);
    CHECK(run("--help") == 0);
}

TEST_CASE("atomic commands compose to the sweep") {
    const fs::path tiny = write_config("tiny.json", kTiny);
    const std::string cfg = "--config " + q(tiny);
    REQUIRE(run("sweep " + cfg + " --out " + q(kRoot / "sweep")) == 0);
    REQUIRE(run("simulate " + cfg + " --out " + q(kRoot / "sim")) == 0);
    CHECK(fs::exists(kRoot / "sim" / "manifest.json"));
    const fs::path ens = kRoot / "sim" / "ensemble.uqf";
    REQUIRE(run("make-dataset " + cfg + " --ensemble " + q(ens) + " --detectors 3 --seed-index 0 --out " +
                q(kRoot / "ds")) == 0);
    std::string cells;
    for (const char* est : {"lwr-physgan", "arz-physgan", "pure-gan", "ekf"}) {
        const fs::path tr = kRoot / (std::string("tr_") + est), ev = kRoot / (std::string("ev_") + est);
        REQUIRE(run("train " + cfg + " --dataset " + q(kRoot / "ds") + " --estimator " + est + " --out " + q(tr)) == 0);
        REQUIRE(run("evaluate " + cfg + " --ensemble " + q(ens) + " --run " + q(tr) + " --out " + q(ev)) == 0);
        cells += " " + q(ev / "cell.json");
    }
    CHECK(fs::exists(kRoot / "tr_ekf" / "ekf.uqf"));
    const std::string header = slurp(kRoot / "tr_pure-gan" / "history.csv").substr(0, 46);
    CHECK(header == "iter,loss_D,loss_G,loss_phy,rho_max,u_max,tau\n");
    REQUIRE(run("report " + cfg + " --cells" + cells + " --out " + q(kRoot / "rep")) == 0);
    CHECK(slurp(kRoot / "rep" / "report.csv") == slurp(kRoot / "sweep" / "report.csv"));
    CHECK(slurp(kRoot / "rep" / "plot_data.json") == slurp(kRoot / "sweep" / "plot_data.json"));
    REQUIRE(run("report " + cfg + " --sweep-dir " + q(kRoot / "sweep") + " --out " + q(kRoot / "rep2")) == 0);
    CHECK(slurp(kRoot / "rep2" / "report.csv") == slurp(kRoot / "sweep" / "report.csv"));

    const json m = read_json(kRoot / "ds" / "manifest.json");
    CHECK(m["command"] == "make-dataset");
    CHECK(m["config_hash"] == config_hash(parse_experiment_config(json::parse(kTiny))));
    CHECK(m["outputs"].size() == 2u);
    // A dataset from another configuration is refused.
    const fs::path other = write_config("other.json", R"({"seed": 5})");
    CHECK(run("train --config " + q(other) + " --dataset " + q(kRoot / "ds") + " --estimator ekf --out " +
              q(kRoot / "x")) == 4);
}

TEST_CASE("the truth scored as a prediction is perfect") {
    const fs::path tiny = write_config("tiny.json", kTiny);
    const std::string cfg = "--config " + q(tiny);
    REQUIRE(run("simulate " + cfg + " --out " + q(kRoot / "sim_self")) == 0);
    const fs::path ens = kRoot / "sim_self" / "ensemble.uqf";
    REQUIRE(run("evaluate " + cfg + " --ensemble " + q(ens) + " --pred " + q(ens) + " --out " + q(kRoot / "self")) == 0);
    const auto rows = read_report_csv(kRoot / "self" / "report.csv");
    REQUIRE(rows.size() == 1u);
    CHECK(rows[0].metrics.re_rho == 0.0);
    CHECK(rows[0].metrics.re_u == 0.0);
    CHECK(rows[0].metrics.kl_rho == 0.0);
    CHECK(rows[0].metrics.kl_u == 0.0);
    CHECK(run("evaluate " + cfg + " --ensemble " + q(ens) + " --out " + q(kRoot / "x")) == 2);
}

TEST_CASE("zero iterations checkpoint the initialization") {
    const fs::path cfg_path = write_config("zero.json", std::string(kTiny).replace(
                                                            std::string(kTiny).find("\"iterations\": 12"), 16,
                                                            "\"iterations\": 0"));
    const auto c = load_experiment_config(cfg_path);
    REQUIRE(c.training.iterations == 0);
    const std::string cfg = "--config " + q(cfg_path);
    REQUIRE(run("simulate " + cfg + " --out " + q(kRoot / "sim0")) == 0);
    REQUIRE(run("make-dataset " + cfg + " --ensemble " + q(kRoot / "sim0" / "ensemble.uqf") +
                " --detectors 3 --out " + q(kRoot / "ds0")) == 0);
    REQUIRE(run("train " + cfg + " --dataset " + q(kRoot / "ds0") + " --estimator arz-physgan --out " +
                q(kRoot / "tr0")) == 0);
    const json cp = read_json(kRoot / "tr0" / "checkpoint.json");
    const Ensemble e = simulate(c, 1);
    const Dataset d = make_dataset(c, e, 3, 0);
    const json init = make_trainer(c, Estimator::ArzPhysGan, d, 3, 0).checkpoint();
    for (const char* key : {"generator", "discriminator", "log_lambda", "standardization", "iteration"})
        CHECK(cp[key] == init[key]);
    CHECK(slurp(kRoot / "tr0" / "history.csv") == "iter,loss_D,loss_G,loss_phy,rho_max,u_max,tau\n");
}

TEST_CASE("reruns are byte-identical and the seed flag overrides the configuration") {
    const fs::path tiny = write_config("tiny.json", kTiny);
    const std::string cfg = "--config " + q(tiny);
    REQUIRE(run("simulate " + cfg + " --out " + q(kRoot / "r1")) == 0);
    REQUIRE(run("simulate " + cfg + " --threads 2 --out " + q(kRoot / "r2")) == 0);
    REQUIRE(run("simulate " + cfg + " --seed 7 --out " + q(kRoot / "r3")) == 0);
    CHECK(slurp(kRoot / "r1" / "ensemble.uqf") == slurp(kRoot / "r2" / "ensemble.uqf"));
    CHECK(slurp(kRoot / "r1" / "ensemble.uqf") != slurp(kRoot / "r3" / "ensemble.uqf"));
    CHECK(read_json(kRoot / "r3" / "manifest.json")["seed"] == 7);
    REQUIRE(std::system(("UQTSE_SEED=7 " + std::string(UQTSE_CLI_PATH) + " simulate " + cfg + " --out " +
                         q(kRoot / "r4") + " >/dev/null 2>&1").c_str()) == 0);
    CHECK(slurp(kRoot / "r4" / "ensemble.uqf") == slurp(kRoot / "r3" / "ensemble.uqf"));
    for (const auto& entry : fs::directory_iterator(kRoot / "r1"))
        CHECK(entry.path().extension() != ".tmp");
}

}
