#include "logshe/io.hpp"
#include "logshe/mc.hpp"
#include "logshe/effects.hpp"
#include "logshe/select.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

using namespace logshe;
namespace fs = std::filesystem;

namespace {

std::string cli_binary() {
    const char* env = std::getenv("LOGSHE_BIN");
    return env ? env : "../logshe";
}

int run_cli(const std::string& args) {
    const std::string cmd = cli_binary() + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

void write_json(const fs::path& p, const json& j) { write_file(p.string(), j.dump(2)); }

} // namespace

TEST_CASE("estimation harness: smoke run and serial/parallel determinism") {
    McDesign design;
    design.n = 40;
    design.replications = 6;
    design.seed = 5;
    design.threads = 1;
    EstimationTable serial = run_estimation_mc(design, {"ml"});
    CHECK(serial.reps_used == 6);
    CHECK(std::isfinite(serial.cell("ml", "rho").bias));
    CHECK(serial.cell("ml", "rho").rmse >= std::fabs(serial.cell("ml", "rho").bias));

    McDesign par = design;
    par.threads = 4;
    EstimationTable threaded = run_estimation_mc(par, {"ml"});
    CHECK(serial.to_csv("normal", design.n) == threaded.to_csv("normal", design.n));
}

TEST_CASE("jtest harness null run produces valid rates") {
    McDesign design;
    design.n = 50;
    design.replications = 4;
    design.seed = 9;
    design.threads = 2;
    JStatistics stats = run_jtest_mc(design, JtestModel::Null);
    CHECK(stats.df == 4);
    CHECK(stats.reps_used == 4);
    for (double s : stats.stats) CHECK(s >= 0.0);
}

TEST_CASE("empirical quantile") {
    std::vector<double> v = {5.0, 1.0, 3.0, 2.0, 4.0};
    CHECK(empirical_quantile(v, 0.0) == doctest::Approx(1.0));
    CHECK(empirical_quantile(v, 1.0) == doctest::Approx(5.0));
    CHECK(empirical_quantile(v, 0.5) == doctest::Approx(3.0));
}

TEST_CASE("cli: simulate twice with one seed gives identical content hashes") {
    fs::path dir1 = "cli_sim1", dir2 = "cli_sim2";
    json cfg = {{"seed", 11},
                {"dgp",
                 {{"family", "sar"},
                  {"n", 30},
                  {"rho0", 0.3},
                  {"gamma0", {1.0, 3.0, 3.0}},
                  {"errors", "normal"},
                  {"x_cols", 1},
                  {"weights", {{"type", "knn"}, {"k", 5}}}}}};
    write_json("sim_cfg.json", cfg);
    REQUIRE(run_cli("--config sim_cfg.json --out " + dir1.string() + " simulate") == 0);
    REQUIRE(run_cli("--config sim_cfg.json --out " + dir2.string() + " simulate") == 0);
    CHECK(read_file((dir1 / "dataset.csv").string()) ==
          read_file((dir2 / "dataset.csv").string()));
    json m1 = json::parse(read_file((dir1 / "manifest.json").string()));
    json m2 = json::parse(read_file((dir2 / "manifest.json").string()));
    CHECK(m1.at("outputs") == m2.at("outputs"));
    fs::remove_all(dir1);
    fs::remove_all(dir2);
    fs::remove("sim_cfg.json");
}

TEST_CASE("cli: unknown config keys and bad rho0 are config errors") {
    json bad = {{"seed", 1},
                {"dgp",
                 {{"family", "sar"},
                  {"n", 10},
                  {"rho0", 0.3},
                  {"gamma0", {1.0, 3.0, 3.0}},
                  {"errors", "normal"},
                  {"weights", {{"type", "knn"}, {"k", 3}}},
                  {"bogus_key", 1}}}};
    write_json("bad_cfg.json", bad);
    CHECK(run_cli("--config bad_cfg.json --out cli_bad simulate") == 1);

    json badrho = bad;
    badrho["dgp"].erase("bogus_key");
    badrho["dgp"]["rho0"] = 1.5;
    write_json("bad_cfg.json", badrho);
    CHECK(run_cli("--config bad_cfg.json --out cli_bad simulate") == 1);
    fs::remove("bad_cfg.json");
    fs::remove_all("cli_bad");
}

TEST_CASE("cli: fit and test pipeline on a simulated dataset") {
    fs::path dir = "cli_pipe";
    json sim_cfg = {{"seed", 21},
                    {"dgp",
                     {{"family", "sar"},
                      {"n", 60},
                      {"rho0", 0.3},
                      {"gamma0", {1.0, 3.0, 3.0}},
                      {"errors", "normal"},
                      {"x_cols", 1},
                      {"weights", {{"type", "knn"}, {"k", 5}}}}}};
    write_json("pipe_sim.json", sim_cfg);
    REQUIRE(run_cli("--config pipe_sim.json --out " + dir.string() + " simulate") == 0);

    json fit_cfg = {{"seed", 21},
                    {"data",
                     {{"dataset", (dir / "dataset.csv").string()},
                      {"weights", {{"type", "knn"}, {"k", 5}}}}},
                    {"model", {{"family", "sar"}, {"durbin", true}}},
                    {"estimator", {{"methods", {"ml", "2sml", "ogmm"}}}}};
    write_json("pipe_fit.json", fit_cfg);
    REQUIRE(run_cli("--config pipe_fit.json --out " + dir.string() + " fit") == 0);
    json fit = json::parse(read_file((dir / "fit_ml.json").string()));
    CHECK(fit.at("method") == "ml");
    CHECK(fit.at("convergence").at("converged").get<bool>());
    CHECK(std::fabs(fit.at("theta").at("rho").get<double>() - 0.3) < 0.4);
    CHECK(json::parse(read_file((dir / "fit_2sml.json").string())).contains("moments"));
    json ogmm = json::parse(read_file((dir / "fit_ogmm.json").string()));
    CHECK(ogmm.at("method") == "ogmm");
    CHECK(ogmm.contains("stage1"));

    // refitting with the persisted coordinates reproduces the seeded weights
    json fit_coords = fit_cfg;
    fit_coords["data"]["weights"]["coords"] = (dir / "coords.csv").string();
    fit_coords["estimator"] = {{"methods", {"ml"}}};
    fs::path dir2 = "cli_pipe_coords";
    write_json("pipe_fit2.json", fit_coords);
    REQUIRE(run_cli("--config pipe_fit2.json --out " + dir2.string() + " fit") == 0);
    json fit_a = json::parse(read_file((dir / "fit_ml.json").string()));
    json fit_b = json::parse(read_file((dir2 / "fit_ml.json").string()));
    CHECK(fit_a.at("theta") == fit_b.at("theta"));
    fs::remove("pipe_fit2.json");
    fs::remove_all(dir2);

    json test_cfg = fit_cfg;
    test_cfg.erase("estimator");
    test_cfg["test"] = {{"constraint", "rho=0"}};
    write_json("pipe_test.json", test_cfg);
    REQUIRE(run_cli("--config pipe_test.json --out " + dir.string() + " test") == 0);
    json wald = json::parse(read_file((dir / "test_wald.json").string()));
    CHECK(wald.at("kind") == "wald");
    CHECK(wald.at("df").get<int>() == 1);
    CHECK(fs::exists(dir / "test_j.json"));

    // effects from the ML fit
    json eff_cfg = {{"seed", 21},
                    {"data",
                     {{"dataset", (dir / "dataset.csv").string()},
                      {"weights", {{"type", "knn"}, {"k", 5}}}}},
                    {"model", {{"family", "sar"}, {"durbin", true}}},
                    {"fit", (dir / "fit_ml.json").string()},
                    {"effects", {{"kind", "variance"}}}};
    write_json("pipe_eff.json", eff_cfg);
    REQUIRE(run_cli("--config pipe_eff.json --out " + dir.string() + " effects") == 0);
    std::string eff = read_file((dir / "effects.csv").string());
    CHECK(eff.rfind("variable,ate,ade,aie\n", 0) == 0);

    // wrapper equals the library-level variance_effects call
    {
        std::stringstream ss(eff.substr(eff.find('\n') + 1));
        std::string var, a, b, c;
        std::getline(ss, var, ',');
        std::getline(ss, a, ',');
        std::getline(ss, b, ',');
        std::getline(ss, c);
        WeightMatrix W;
        {
            Rng base = Rng(21).fork(0x434f4f52ull);
            Coordinates coords;
            coords.points.resize(60, 2);
            for (int i = 0; i < 60; ++i) {
                Rng s = base.fork(static_cast<std::uint64_t>(i));
                coords.points(i, 0) = s.next_uniform();
                coords.points(i, 1) = s.next_uniform();
            }
            W = build_knn(coords, 5);
        }
        Dataset data = read_dataset_csv((dir / "dataset.csv").string(), W);
        OperatorFamily fam(FamilyKind::SAR, W);
        Theta theta;
        theta.rho = fit.at("theta").at("rho").get<double>();
        theta.gamma.resize(3);
        for (int i = 0; i < 3; ++i)
            theta.gamma[i] = fit.at("theta").at("gamma").at(i).get<double>();
        EffectTriple ref = variance_effects(theta, data, fam, 0);
        CHECK(std::stod(a) == doctest::Approx(ref.ate).epsilon(1e-12));
        CHECK(std::stod(b) == doctest::Approx(ref.ade).epsilon(1e-12));
        CHECK(std::stod(c) == doctest::Approx(ref.aie).epsilon(1e-12));
    }

    fs::remove("pipe_sim.json");
    fs::remove("pipe_fit.json");
    fs::remove("pipe_test.json");
    fs::remove("pipe_eff.json");
    fs::remove_all(dir);
}

TEST_CASE("cli: general linear J'theta=c constraint form") {
    fs::path dir = "cli_linear";
    json sim_cfg = {{"seed", 33},
                    {"dgp",
                     {{"family", "sar"},
                      {"n", 50},
                      {"rho0", 0.2},
                      {"gamma0", {1.0, 3.0, 3.0}},
                      {"errors", "normal"},
                      {"x_cols", 1},
                      {"weights", {{"type", "knn"}, {"k", 5}}}}}};
    write_json("lin_sim.json", sim_cfg);
    REQUIRE(run_cli("--config lin_sim.json --out " + dir.string() + " simulate") == 0);
    json test_cfg = {{"seed", 33},
                     {"data",
                      {{"dataset", (dir / "dataset.csv").string()},
                       {"weights", {{"type", "knn"}, {"k", 5}}}}},
                     {"model", {{"family", "sar"}, {"durbin", true}}},
                     {"test",
                      {{"constraint",
                        {{"J", {{1.0, 0.0, 0.0, 0.0}}}, {"c", {0.0}}}}}}};
    write_json("lin_test.json", test_cfg);
    REQUIRE(run_cli("--config lin_test.json --out " + dir.string() + " test") == 0);
    json wald = json::parse(read_file((dir / "test_wald.json").string()));
    CHECK(wald.at("df").get<int>() == 1);
    CHECK(wald.at("constraint") == "J'theta=c");
    fs::remove("lin_sim.json");
    fs::remove("lin_test.json");
    fs::remove_all(dir);
}

TEST_CASE("cli: corrupted dataset (zero y) names the row") {
    fs::path dir = "cli_corrupt";
    fs::create_directories(dir);
    write_file((dir / "bad.csv").string(), "y,z1\n1.0,1\n0.0,1\n2.0,1\n");
    json fit_cfg = {{"seed", 3},
                    {"data",
                     {{"dataset", (dir / "bad.csv").string()},
                      {"weights", {{"type", "knn"}, {"k", 1}}}}},
                    {"model", {{"family", "sar"}, {"durbin", false}}},
                    {"estimator", {{"methods", {"ml"}}}}};
    write_json("corrupt_fit.json", fit_cfg);
    CHECK(run_cli("--config corrupt_fit.json --out " + dir.string() + " fit") == 1);
    fs::remove("corrupt_fit.json");
    fs::remove_all(dir);
}

TEST_CASE("cli: mc smoke run emits finite cells with rep counts") {
    fs::path dir = "cli_mc";
    json cfg = {{"seed", 7},
                {"threads", 2},
                {"mc",
                 {{"mode", "estimation"},
                  {"replications", 2},
                  {"n", 30},
                  {"family", "sar"},
                  {"rho0", 0.3},
                  {"gamma0", {1.0, 3.0, 3.0}},
                  {"errors", "normal"},
                  {"methods", {"ml"}}}}};
    write_json("mc_cfg.json", cfg);
    REQUIRE(run_cli("--config mc_cfg.json --out " + dir.string() + " mc") == 0);
    std::string csv = read_file((dir / "mc_estimation.csv").string());
    CHECK(csv.find("error,n,method,param,bias,rmse,reps,seed") == 0);
    CHECK(csv.find(",2,") != std::string::npos); // rep count column
    fs::remove("mc_cfg.json");
    fs::remove_all(dir);
}

TEST_CASE("cli: bic-select on a simulated dataset picks out the exogenous column") {
    fs::path dir = "cli_bic";
    json sim_cfg = {{"seed", 5},
                    {"dgp",
                     {{"family", "sar"},
                      {"n", 70},
                      {"rho0", 0.4},
                      {"gamma0", {1.0, 3.0, 3.0}},
                      {"errors", "normal"},
                      {"x_cols", 1},
                      {"weights", {{"type", "knn"}, {"k", 5}}}}}};
    write_json("bic_sim.json", sim_cfg);
    REQUIRE(run_cli("--config bic_sim.json --out " + dir.string() + " simulate") == 0);
    json bic_cfg = {{"seed", 5},
                    {"data",
                     {{"dataset", (dir / "dataset.csv").string()},
                      {"weights", {{"type", "knn"}, {"k", 5}}}}},
                    {"select",
                     {{"families", {"sar"}}, {"with_x", {true}}, {"x_columns", {1}}}}};
    write_json("bic_cfg.json", bic_cfg);
    REQUIRE(run_cli("--config bic_cfg.json --out " + dir.string() + " bic-select") == 0);
    json rep = json::parse(read_file((dir / "bic_select.json").string()));
    CHECK(rep.at("candidates").size() == 1);
    CHECK(rep.at("best").at("family") == "sar");
    fs::remove("bic_sim.json");
    fs::remove("bic_cfg.json");
    fs::remove_all(dir);
}

TEST_CASE("cli: durbin simulate emits 1 + 2*x_cols design columns") {
    fs::path dir = "cli_durbin";
    json cfg = {{"seed", 2},
                {"dgp",
                 {{"family", "sar"},
                  {"n", 20},
                  {"rho0", 0.1},
                  {"gamma0", {1.0, 3.0, 2.0, 3.0, 1.0}},
                  {"errors", "normal"},
                  {"x_cols", 2},
                  {"weights", {{"type", "knn"}, {"k", 4}}}}}};
    write_json("durbin_cfg.json", cfg);
    REQUIRE(run_cli("--config durbin_cfg.json --out " + dir.string() + " simulate") == 0);
    std::string csv = read_file((dir / "dataset.csv").string());
    CHECK(csv.rfind("y,z1,z2,z3,z4,z5\n", 0) == 0);
    fs::remove("durbin_cfg.json");
    fs::remove_all(dir);
}

TEST_CASE("dataset json round trip preserves the sample") {
    WeightMatrix W = build_knn(oracle::seeded_points(12, 2), 3);
    OperatorFamily fam(FamilyKind::SAR, W);
    Theta t;
    t.rho = 0.3;
    t.gamma = (Eigen::VectorXd(3) << 1, 3, 3).finished();
    SimulationResult sim = simulate(fam, t, 1, ErrorDistribution::std_normal(), 77);
    json j = dataset_to_json(sim.data);
    Dataset back = dataset_from_json(j);
    CHECK((back.y() - sim.data.y()).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.Z() - sim.data.Z()).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.W().entries() - W.entries()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("bic selection recovers the SAR family on SAR data") {
    WeightMatrix W = build_knn(oracle::seeded_points(150, 13), 5);
    OperatorFamily fam(FamilyKind::SAR, W);
    Theta t;
    t.rho = 0.5;
    t.gamma = (Eigen::VectorXd(3) << 1, 3, 3).finished();
    SimulationResult sim = simulate(fam, t, 1, ErrorDistribution::std_normal(), 19);
    Eigen::MatrixXd X = sim.data.Z().col(1);
    SelectionReport report = bic_select(sim.data.y(), X, W);
    REQUIRE(report.best_index >= 0);
    const FittedCandidate& best = report.candidates[static_cast<size_t>(report.best_index)];
    CHECK(best.with_x);
    // with-X candidates dominate the no-X ones
    for (const auto& c : report.candidates)
        if (!c.with_x) CHECK(best.bic < c.bic);
}

TEST_CASE("single-candidate selection reports exactly one row") {
    WeightMatrix W = build_knn(oracle::seeded_points(60, 3), 5);
    OperatorFamily fam(FamilyKind::SAR, W);
    Theta t;
    t.rho = 0.3;
    t.gamma = (Eigen::VectorXd(3) << 1, 3, 3).finished();
    SimulationResult sim = simulate(fam, t, 1, ErrorDistribution::std_normal(), 4);
    BicOptions opts;
    opts.families = {FamilyKind::SAR};
    opts.with_x = {true};
    SelectionReport rep = bic_select(sim.data.y(), sim.data.Z().col(1), W, opts);
    CHECK(rep.candidates.size() == 1);
    CHECK(rep.best_index == 0);
}

TEST_CASE("backward elimination drops pure-noise regressors") {
    WeightMatrix W = build_knn(oracle::seeded_points(400, 23), 5);
    OperatorFamily fam(FamilyKind::SAR, W);
    LogSheModel model(fam, true);
    Theta t;
    t.rho = 0.4;
    t.gamma = (Eigen::VectorXd(5) << 1, 3, 0, 3, 0).finished(); // second X column is noise
    SimulationResult sim = simulate(fam, t, 2, ErrorDistribution::std_normal(), 29);
    Eigen::MatrixXd X = sim.data.Z().middleCols(1, 2);
    int dropped = 0;
    const int runs = 5;
    for (int r = 0; r < runs; ++r) {
        SimulationResult s = simulate(fam, t, 2, ErrorDistribution::std_normal(), 29 + r);
        Eigen::MatrixXd Xs = s.data.Z().middleCols(1, 2);
        SelectionReport rep = bic_select(s.data.y(), Xs, W);
        const FittedCandidate& sar = rep.candidates[0]; // SAR with X
        bool x2_gone = true;
        for (const auto& name : sar.kept)
            if (name == "x2") x2_gone = false;
        if (x2_gone) ++dropped;
    }
    CHECK(dropped >= 4);
}
