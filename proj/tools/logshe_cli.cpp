#include "logshe/effects.hpp"
#include "logshe/inference.hpp"
#include "logshe/io.hpp"
#include "logshe/mc.hpp"
#include "logshe/ml.hpp"
#include "logshe/select.hpp"
#include "logshe/special.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using namespace logshe;

namespace {

void require_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw validation_error("config: " + where + " must be an object");
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            throw validation_error("config: unknown key '" + it.key() + "' in " + where);
}

ErrorDistribution parse_errors(const json& j) {
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        if (s == "normal") return ErrorDistribution::std_normal();
        if (s == "uniform") return ErrorDistribution::uniform();
        if (s == "mn") return ErrorDistribution::mixed_normal(2.0, 1.0);
        throw validation_error("config: unknown error kind '" + s + "'");
    }
    require_keys(j, "errors", {"kind", "a", "b"});
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "normal") return ErrorDistribution::std_normal();
    if (kind == "uniform") return ErrorDistribution::uniform();
    if (kind == "mn")
        return ErrorDistribution::mixed_normal(j.value("a", 2.0), j.value("b", 1.0));
    throw validation_error("config: unknown error kind '" + kind + "'");
}

std::string errors_name(const ErrorDistribution& e) {
    switch (e.kind) {
    case ErrorKind::StdNormal: return "normal";
    case ErrorKind::MixedNormal: return "mn";
    case ErrorKind::Uniform: return "uniform";
    }
    return "?";
}

WeightMatrix parse_weights(const json& j, std::uint64_t seed, int n,
                           Coordinates* coords_out = nullptr) {
    require_keys(j, "weights", {"type", "k", "rows", "cols", "coords"});
    const std::string type = j.at("type").get<std::string>();
    if (type == "knn") {
        const int k = j.at("k").get<int>();
        if (j.contains("coords")) {
            Coordinates coords = read_coordinates_csv(j.at("coords").get<std::string>());
            if (coords_out) *coords_out = coords;
            return build_knn(coords, k);
        }
        // seeded uniform coordinates
        Rng base = Rng(seed).fork(0x434f4f52ull);
        Coordinates coords;
        coords.points.resize(n, 2);
        for (int i = 0; i < n; ++i) {
            Rng stream = base.fork(static_cast<std::uint64_t>(i));
            coords.points(i, 0) = stream.next_uniform();
            coords.points(i, 1) = stream.next_uniform();
        }
        if (coords_out) *coords_out = coords;
        return build_knn(coords, k);
    }
    if (type == "rook") return build_rook(j.at("rows").get<int>(), j.at("cols").get<int>());
    throw validation_error("config: unknown weights type '" + type + "'");
}

Eigen::VectorXd parse_vector(const json& j) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j.at(i).get<double>();
    return v;
}

Theta theta_from(double rho, Eigen::VectorXd gamma) {
    Theta t;
    t.rho = rho;
    t.gamma = std::move(gamma);
    return t;
}

struct CliContext {
    json config;
    std::uint64_t seed = 1;
    int threads = 1;
    fs::path out_dir = ".";
    json manifest_outputs = json::object();

    void write_output(const std::string& name, const std::string& content) {
        fs::create_directories(out_dir);
        const fs::path p = out_dir / name;
        write_file(p.string(), content);
        manifest_outputs[name] = hash_hex(content_hash(content));
    }

    void finish(const std::string& command) {
        json manifest;
        manifest["command"] = command;
        manifest["seed"] = seed;
        manifest["threads"] = threads;
        manifest["config"] = config;
        manifest["outputs"] = manifest_outputs;
        manifest["optimizer_starts"] = 3;
        write_output("manifest.json", manifest.dump(2) + "\n");
    }
};

MLOptions parse_ml_options(const json& est) {
    MLOptions opts;
    if (est.contains("optimizer")) {
        const json& o = est.at("optimizer");
        require_keys(o, "optimizer", {"tol", "max_iter", "rho_starts"});
        opts.tol = o.value("tol", opts.tol);
        opts.max_iter = o.value("max_iter", opts.max_iter);
        if (o.contains("rho_starts")) {
            opts.rho_starts.clear();
            for (const auto& r : o.at("rho_starts")) opts.rho_starts.push_back(r.get<double>());
        }
    }
    if (est.contains("moment_mode")) {
        const std::string m = est.at("moment_mode").get<std::string>();
        if (m == "sample") opts.moment_mode = MomentMode::Sample;
        else if (m == "gaussian") opts.moment_mode = MomentMode::GaussianTheoretical;
        else throw validation_error("config: moment_mode must be sample|gaussian");
    }
    return opts;
}

struct LoadedData {
    Dataset data;
    WeightMatrix W;
};

LoadedData load_data(const json& cfg, std::uint64_t seed) {
    require_keys(cfg, "data", {"dataset", "weights", "n"});
    const json& wj = cfg.at("weights");
    // weights need n before the dataset is read when seeded coordinates are used
    int n_hint = cfg.value("n", 0);
    if (n_hint == 0 && wj.value("type", "") == "knn" && !wj.contains("coords")) {
        // count dataset rows
        std::string text = read_file(cfg.at("dataset").get<std::string>());
        n_hint = -1;
        for (char ch : text)
            if (ch == '\n') ++n_hint;
    }
    WeightMatrix W = parse_weights(wj, seed, n_hint);
    Dataset data = read_dataset_csv(cfg.at("dataset").get<std::string>(), W);
    return {std::move(data), std::move(W)};
}

int cmd_simulate(CliContext& ctx) {
    require_keys(ctx.config, "config", {"seed", "threads", "dgp", "output"});
    const json& dgp = ctx.config.at("dgp");
    require_keys(dgp, "dgp", {"family", "n", "rho0", "gamma0", "errors", "x_cols", "weights",
                              "sme_truncation", "alternative"});
    const int n = dgp.at("n").get<int>();
    const int x_cols = dgp.value("x_cols", 1);
    const double rho0 = dgp.at("rho0").get<double>();
    Eigen::VectorXd gamma0 = parse_vector(dgp.at("gamma0"));
    ErrorDistribution errors = parse_errors(dgp.at("errors"));
    Coordinates coords;
    WeightMatrix W = parse_weights(dgp.at("weights"), ctx.seed, n, &coords);
    FamilyKind family = family_from_name(dgp.at("family").get<std::string>());
    OperatorFamily op(family, W, dgp.value("sme_truncation", 10));

    if (!op.interval().contains(rho0))
        throw validation_error("config: rho0 outside the admissible interval");

    SimulationResult sim = [&]() {
        if (dgp.contains("alternative")) {
            if (family != FamilyKind::SAR)
                throw validation_error("config: alternative DGPs are SAR-type; set family=sar");
            const json& alt = dgp.at("alternative");
            require_keys(alt, "alternative", {"kind", "rho_star", "weights_star"});
            const std::string kind = alt.at("kind").get<std::string>();
            WeightMatrix W_star = parse_weights(alt.at("weights_star"), ctx.seed, n);
            AlternativeKind ak;
            if (kind == "higher_order") ak = AlternativeKind::HigherOrder;
            else if (kind == "generalized") ak = AlternativeKind::Generalized;
            else throw validation_error("config: alternative kind must be higher_order|generalized");
            return simulate_alternative(ak, rho0, alt.value("rho_star", 0.6), gamma0, x_cols, W,
                                        W_star, errors, ctx.seed);
        }
        return simulate(op, theta_from(rho0, gamma0), x_cols, errors, ctx.seed);
    }();

    std::ostringstream csv;
    {
        // write through the shared writer for identical formatting
        fs::create_directories(ctx.out_dir);
        const fs::path tmp = ctx.out_dir / "dataset.csv";
        write_dataset_csv(tmp.string(), sim.data);
        std::string content = read_file(tmp.string());
        ctx.manifest_outputs["dataset.csv"] = hash_hex(content_hash(content));
    }
    if (coords.points.size() > 0) {
        std::ostringstream cs;
        cs << "id";
        for (int d = 0; d < coords.points.cols(); ++d) cs << "," << static_cast<char>('x' + d);
        cs << "\n";
        for (int i = 0; i < coords.n(); ++i) {
            cs << i;
            for (int dcol = 0; dcol < coords.points.cols(); ++dcol) {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.17g", coords.points(i, dcol));
                cs << "," << buf;
            }
            cs << "\n";
        }
        ctx.write_output("coords.csv", cs.str());
    }
    json extra;
    extra["resampled_draws"] = sim.resampled;
    extra["n"] = n;
    ctx.write_output("simulate_info.json", extra.dump(2) + "\n");
    ctx.finish("simulate");
    return 0;
}

int cmd_fit(CliContext& ctx) {
    require_keys(ctx.config, "config",
                 {"seed", "threads", "data", "model", "estimator", "output"});
    LoadedData loaded = load_data(ctx.config.at("data"), ctx.seed);
    const json& mj = ctx.config.at("model");
    require_keys(mj, "model", {"family", "durbin", "sme_truncation"});
    OperatorFamily op(family_from_name(mj.at("family").get<std::string>()), loaded.W,
                      mj.value("sme_truncation", 10));
    LogSheModel model(op, mj.value("durbin", true));

    const json& est = ctx.config.at("estimator");
    require_keys(est, "estimator", {"methods", "instruments", "optimizer", "moment_mode"});
    MLOptions ml_opts = parse_ml_options(est);

    int kappa_max = 4;
    if (est.contains("instruments")) {
        require_keys(est.at("instruments"), "instruments", {"kappa_max"});
        kappa_max = est.at("instruments").value("kappa_max", 4);
    }

    int exit_code = 0;
    for (const auto& mj2 : est.at("methods")) {
        const std::string method = mj2.get<std::string>();
        if (method == "ml") {
            MLFit fit = fit_ml(model, loaded.data, ml_opts);
            ConsistencyDiagnostic diag = consistency_diagnostic(fit, model, loaded.data);
            json j = ml_fit_to_json(fit);
            j["diagnostic"] = {{"term1", diag.term1}, {"term2", json::array()}};
            for (Eigen::Index i = 0; i < diag.term2.size(); ++i)
                j["diagnostic"]["term2"].push_back(diag.term2[i]);
            ctx.write_output("fit_ml.json", j.dump(2) + "\n");
            if (!fit.converged) exit_code = 2;
        } else if (method == "2sml") {
            if (!model.durbin) throw validation_error("2sml requires the Durbin layout");
            MLFit fit = fit_2sml(model, loaded.data, ml_opts);
            ctx.write_output("fit_2sml.json", ml_fit_to_json(fit).dump(2) + "\n");
        } else if (method == "gmm" || method == "ogmm") {
            MomentSystem system =
                default_instruments(loaded.W, loaded.data.Z(), kappa_max, model.durbin);
            GmmOptions gopts;
            gopts.tol = ml_opts.tol;
            gopts.max_iter = ml_opts.max_iter;
            gopts.rho_starts = ml_opts.rho_starts;
            GmmFit fit;
            if (method == "gmm") {
                Eigen::MatrixXd I = Eigen::MatrixXd::Identity(system.dim(), system.dim());
                fit = fit_gmm(system, model, loaded.data, I, gopts);
            } else {
                fit = fit_ogmm(system, model, loaded.data, gopts);
            }
            ctx.write_output("fit_" + method + ".json", gmm_fit_to_json(fit).dump(2) + "\n");
            if (!fit.converged) exit_code = 2;
        } else {
            throw validation_error("config: unknown method '" + method + "'");
        }
    }
    ctx.finish("fit");
    return exit_code;
}

int cmd_test(CliContext& ctx) {
    require_keys(ctx.config, "config",
                 {"seed", "threads", "data", "model", "estimator", "test", "output"});
    LoadedData loaded = load_data(ctx.config.at("data"), ctx.seed);
    const json& mj = ctx.config.at("model");
    require_keys(mj, "model", {"family", "durbin", "sme_truncation"});
    OperatorFamily op(family_from_name(mj.at("family").get<std::string>()), loaded.W,
                      mj.value("sme_truncation", 10));
    LogSheModel model(op, mj.value("durbin", true));

    const json& est = ctx.config.value("estimator", json::object());
    int kappa_max = 4;
    if (est.contains("instruments")) kappa_max = est.at("instruments").value("kappa_max", 4);

    const json& tj = ctx.config.at("test");
    require_keys(tj, "test", {"constraint"});
    Constraint constraint;
    if (tj.at("constraint").is_string()) {
        constraint = Constraint::parse(tj.at("constraint").get<std::string>(), loaded.data.K());
    } else {
        // general linear form J'theta = c with J given column-wise
        const json& cj = tj.at("constraint");
        require_keys(cj, "constraint", {"J", "c"});
        const auto& jcols = cj.at("J");
        constraint.J.resize(loaded.data.K() + 1, static_cast<Eigen::Index>(jcols.size()));
        for (size_t col = 0; col < jcols.size(); ++col) {
            if (static_cast<int>(jcols.at(col).size()) != loaded.data.K() + 1)
                throw validation_error("config: constraint J column length must be K+1");
            for (int row = 0; row <= loaded.data.K(); ++row)
                constraint.J(row, static_cast<Eigen::Index>(col)) =
                    jcols.at(col).at(static_cast<size_t>(row)).get<double>();
        }
        constraint.c = parse_vector(cj.at("c"));
        if (constraint.c.size() != constraint.J.cols())
            throw validation_error("config: constraint c length must match J columns");
        constraint.description = "J'theta=c";
    }

    MomentSystem system = default_instruments(loaded.W, loaded.data.Z(), kappa_max, model.durbin);
    ConstraintTests tests = run_constraint_tests(system, model, loaded.data, constraint);

    ctx.write_output("test_wald.json", test_result_to_json(tests.wald).dump(2) + "\n");
    ctx.write_output("test_lm.json", test_result_to_json(tests.lm).dump(2) + "\n");
    ctx.write_output("test_d.json", test_result_to_json(tests.d).dump(2) + "\n");
    if (system.dim() > loaded.data.K() + 1) {
        TestResult j = j_test(tests.unconstrained, system);
        ctx.write_output("test_j.json", test_result_to_json(j).dump(2) + "\n");
    }
    ctx.write_output("fit_ogmm.json", gmm_fit_to_json(tests.unconstrained).dump(2) + "\n");
    ctx.finish("test");
    return (tests.unconstrained.converged && tests.constrained.converged) ? 0 : 2;
}

McDesign parse_mc_design(const json& mc, std::uint64_t seed, int threads) {
    McDesign d;
    d.family = family_from_name(mc.value("family", "sar"));
    d.n = mc.at("n").get<int>();
    d.rho0 = mc.value("rho0", 0.3);
    if (mc.contains("gamma0")) d.gamma0 = parse_vector(mc.at("gamma0"));
    d.x_cols = mc.value("x_cols", 1);
    d.knn_k = mc.value("knn_k", 5);
    d.errors = mc.contains("errors") ? parse_errors(mc.at("errors")) : ErrorDistribution::std_normal();
    d.sme_truncation = mc.value("sme_truncation", 10);
    d.kappa_max = mc.value("kappa_max", 4);
    d.replications = mc.at("replications").get<int>();
    d.seed = seed;
    d.threads = threads;
    return d;
}

int cmd_mc(CliContext& ctx) {
    require_keys(ctx.config, "config", {"seed", "threads", "mc", "output"});
    const json& mc = ctx.config.at("mc");
    require_keys(mc, "mc",
                 {"mode", "replications", "n", "family", "rho0", "gamma0", "x_cols", "knn_k",
                  "errors", "sme_truncation", "kappa_max", "methods", "taus", "rho_grid",
                  "size_adjust", "alternatives", "rho_star", "knn_k_star"});
    if (mc.at("replications").get<int>() < 2)
        throw validation_error("config: mc.replications must be >= 2");
    const std::string mode = mc.at("mode").get<std::string>();
    McDesign design = parse_mc_design(mc, ctx.seed, ctx.threads);
    std::vector<double> taus = {0.01, 0.05, 0.10};
    if (mc.contains("taus")) {
        taus.clear();
        for (const auto& t : mc.at("taus")) taus.push_back(t.get<double>());
    }
    char buf[64];

    if (mode == "estimation") {
        std::vector<std::string> methods = {"ml", "gmm", "ogmm", "2sml"};
        if (mc.contains("methods")) {
            methods.clear();
            for (const auto& m : mc.at("methods")) methods.push_back(m.get<std::string>());
        }
        EstimationTable table = run_estimation_mc(design, methods);
        ctx.write_output("mc_estimation.csv", table.to_csv(errors_name(design.errors), design.n));
    } else if (mode == "test") {
        std::vector<double> rho_grid = {design.rho0};
        if (mc.contains("rho_grid")) {
            rho_grid.clear();
            for (const auto& r : mc.at("rho_grid")) rho_grid.push_back(r.get<double>());
        }
        const bool size_adjust = mc.value("size_adjust", false);
        TestStatistics null_stats;
        bool have_null = false;
        std::ostringstream out;
        out << "test,n,rho0,tau,rate,adjusted,reps,seed\n";
        // the null run comes first so adjusted critical values are available
        std::vector<double> grid = rho_grid;
        std::stable_sort(grid.begin(), grid.end(), [](double a, double b) {
            return (a == 0.0) > (b == 0.0);
        });
        for (double rho0 : grid) {
            McDesign d = design;
            d.rho0 = rho0;
            TestStatistics stats = run_test_mc(d);
            if (rho0 == 0.0) {
                null_stats = stats;
                have_null = true;
            }
            struct Row { const char* name; const std::vector<double>* v; };
            const Row rows[] = {{"wald", &stats.wald}, {"lm", &stats.lm}, {"d", &stats.d}};
            for (const auto& row : rows) {
                for (double tau : taus) {
                    double crit;
                    bool adjusted = false;
                    if (size_adjust && rho0 != 0.0 && have_null) {
                        const std::vector<double>& nulls = row.name == std::string("wald")
                                                               ? null_stats.wald
                                                               : (row.name == std::string("lm")
                                                                      ? null_stats.lm
                                                                      : null_stats.d);
                        crit = empirical_quantile(nulls, 1.0 - tau);
                        adjusted = true;
                    } else {
                        crit = chisq_critical(tau, 1);
                    }
                    out << row.name << "," << design.n << ",";
                    std::snprintf(buf, sizeof(buf), "%g", rho0);
                    out << buf << ",";
                    std::snprintf(buf, sizeof(buf), "%g", tau);
                    out << buf << ",";
                    std::snprintf(buf, sizeof(buf), "%.6f", stats.rate(*row.v, crit));
                    out << buf << "," << (adjusted ? 1 : 0) << "," << stats.reps_used << ","
                        << design.seed << "\n";
                }
            }
        }
        ctx.write_output("mc_tests.csv", out.str());
    } else if (mode == "jtest") {
        std::vector<std::string> alternatives = {"null"};
        if (mc.contains("alternatives"))
            for (const auto& a : mc.at("alternatives")) alternatives.push_back(a.get<std::string>());
        std::ostringstream out;
        out << "model,n,tau,rate,df,reps,seed\n";
        for (const std::string& alt : alternatives) {
            JtestModel jm;
            if (alt == "null") jm = JtestModel::Null;
            else if (alt == "higher_order") jm = JtestModel::HigherOrder;
            else if (alt == "generalized") jm = JtestModel::Generalized;
            else throw validation_error("config: unknown jtest alternative '" + alt + "'");
            JStatistics stats = run_jtest_mc(design, jm, mc.value("rho_star", 0.6),
                                             mc.value("knn_k_star", 2));
            for (double tau : taus) {
                const double crit = chisq_critical(tau, stats.df);
                int rej = 0;
                for (double s : stats.stats)
                    if (s > crit) ++rej;
                out << alt << "," << design.n << ",";
                std::snprintf(buf, sizeof(buf), "%g", tau);
                out << buf << ",";
                std::snprintf(buf, sizeof(buf), "%.6f",
                              stats.stats.empty() ? 0.0
                                                  : static_cast<double>(rej) / stats.stats.size());
                out << buf << "," << stats.df << "," << stats.reps_used << "," << design.seed
                    << "\n";
            }
        }
        ctx.write_output("mc_jtest.csv", out.str());
    } else {
        throw validation_error("config: mc.mode must be estimation|test|jtest");
    }
    ctx.finish("mc");
    return 0;
}

int cmd_bic_select(CliContext& ctx) {
    require_keys(ctx.config, "config", {"seed", "threads", "data", "select", "output"});
    LoadedData loaded = load_data(ctx.config.at("data"), ctx.seed);
    const json& sj = ctx.config.value("select", json::object());
    require_keys(sj, "select", {"alpha", "sme_truncation", "families", "with_x", "x_columns"});

    // the exogenous block defaults to every z column; x_columns selects a
    // subset (0-based), e.g. to strip an intercept or lag columns from a
    // dataset that stores a full design
    Eigen::MatrixXd X = loaded.data.Z();
    if (sj.contains("x_columns")) {
        const auto& cols = sj.at("x_columns");
        X.resize(loaded.data.n(), static_cast<Eigen::Index>(cols.size()));
        for (size_t c = 0; c < cols.size(); ++c) {
            const int idx = cols.at(c).get<int>();
            if (idx < 0 || idx >= loaded.data.K())
                throw validation_error("config: x_columns index out of range");
            X.col(static_cast<Eigen::Index>(c)) = loaded.data.Z().col(idx);
        }
    }
    BicOptions bopts;
    bopts.alpha = sj.value("alpha", 0.05);
    bopts.sme_truncation = sj.value("sme_truncation", 10);
    if (sj.contains("families")) {
        bopts.families.clear();
        for (const auto& f : sj.at("families"))
            bopts.families.push_back(family_from_name(f.get<std::string>()));
    }
    if (sj.contains("with_x")) {
        bopts.with_x.clear();
        for (const auto& w : sj.at("with_x")) bopts.with_x.push_back(w.get<bool>());
    }
    SelectionReport report = bic_select(loaded.data.y(), X, loaded.W, bopts);
    json j;
    j["candidates"] = json::array();
    for (const auto& c : report.candidates) {
        json cj;
        cj["family"] = family_name(c.family);
        cj["with_x"] = c.with_x;
        cj["bic"] = c.bic;
        cj["loglik"] = c.loglik;
        cj["free_parameters"] = c.free_parameters;
        cj["rho_kept"] = c.rho_kept;
        cj["kept"] = c.kept;
        cj["degenerate"] = c.degenerate;
        json steps = json::array();
        for (const auto& s : c.steps) steps.push_back({{"removed", s.removed}, {"p_value", s.p_value}});
        cj["elimination"] = steps;
        j["candidates"].push_back(std::move(cj));
    }
    j["best_index"] = report.best_index;
    if (report.best_index >= 0) {
        const auto& b = report.candidates[static_cast<size_t>(report.best_index)];
        j["best"] = {{"family", family_name(b.family)}, {"with_x", b.with_x}, {"bic", b.bic}};
    }
    ctx.write_output("bic_select.json", j.dump(2) + "\n");
    ctx.finish("bic-select");
    return 0;
}

int cmd_effects(CliContext& ctx) {
    require_keys(ctx.config, "config",
                 {"seed", "threads", "data", "model", "fit", "effects", "output"});
    const json& ej = ctx.config.at("effects");
    require_keys(ej, "effects", {"kind", "rho_bar", "beta", "beta_m"});
    const std::string kind = ej.value("kind", "variance");

    if (kind == "mean") {
        // mean-model effects from externally supplied parameters
        const json& dj = ctx.config.at("data");
        WeightMatrix W = parse_weights(dj.at("weights"), ctx.seed, dj.value("n", 0));
        Eigen::VectorXd beta = parse_vector(ej.at("beta"));
        Eigen::VectorXd beta_m = parse_vector(ej.at("beta_m"));
        if (beta.size() != beta_m.size())
            throw validation_error("config: beta and beta_m must have equal length");
        std::vector<std::string> names;
        std::vector<EffectTriple> effects;
        for (Eigen::Index k = 0; k < beta.size(); ++k) {
            names.push_back("x" + std::to_string(k + 1));
            effects.push_back(mean_effects(ej.at("rho_bar").get<double>(), beta[k], beta_m[k], W));
        }
        fs::create_directories(ctx.out_dir);
        const fs::path p = ctx.out_dir / "effects.csv";
        write_effects_csv(p.string(), names, effects);
        ctx.manifest_outputs["effects.csv"] = hash_hex(content_hash(read_file(p.string())));
        ctx.finish("effects");
        return 0;
    }

    LoadedData loaded = load_data(ctx.config.at("data"), ctx.seed);
    const json& mj = ctx.config.at("model");
    OperatorFamily op(family_from_name(mj.at("family").get<std::string>()), loaded.W,
                      mj.value("sme_truncation", 10));
    if (!mj.value("durbin", true))
        throw validation_error("effects: Durbin layout fit required");

    json fit_json = json::parse(read_file(ctx.config.at("fit").get<std::string>()));
    Theta theta;
    theta.rho = fit_json.at("theta").at("rho").get<double>();
    theta.gamma = parse_vector(fit_json.at("theta").at("gamma"));
    if (theta.gamma.size() != loaded.data.K())
        throw validation_error("effects: fit dimension does not match dataset");

    const int xc = (loaded.data.K() - 1) / 2;
    std::vector<std::string> names;
    std::vector<EffectTriple> effects;
    for (int k = 0; k < xc; ++k) {
        names.push_back("x" + std::to_string(k + 1));
        effects.push_back(variance_effects(theta, loaded.data, op, k));
    }
    fs::create_directories(ctx.out_dir);
    const fs::path p = ctx.out_dir / "effects.csv";
    write_effects_csv(p.string(), names, effects);
    ctx.manifest_outputs["effects.csv"] = hash_hex(content_hash(read_file(p.string())));
    ctx.finish("effects");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"log-SHE spatial heteroskedasticity toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 0;
    std::string out_dir;

    app.add_option("--config", config_path, "JSON configuration file")->required();
    auto* seed_opt = app.add_option("--seed", seed, "master seed (overrides config)");
    app.add_option("--threads", threads, "worker threads (overrides config and LOGSHE_THREADS)");
    app.add_option("--out", out_dir, "output directory (overrides config)");

    auto* sub_simulate = app.add_subcommand("simulate", "simulate a dataset");
    auto* sub_fit = app.add_subcommand("fit", "fit estimators to a dataset");
    auto* sub_test = app.add_subcommand("test", "Wald/LM/D (and J) tests");
    auto* sub_mc = app.add_subcommand("mc", "Monte Carlo tables");
    auto* sub_bic = app.add_subcommand("bic-select", "BIC model selection with backward elimination");
    auto* sub_effects = app.add_subcommand("effects", "ATE/ADE/AIE decomposition");

    CLI11_PARSE(app, argc, argv);
    seed_set = seed_opt->count() > 0;

    try {
        CliContext ctx;
        ctx.config = json::parse(read_file(config_path));
        if (!ctx.config.is_object()) throw validation_error("config: top level must be an object");

        if (seed_set) ctx.seed = seed;
        else if (ctx.config.contains("seed")) ctx.seed = ctx.config.at("seed").get<std::uint64_t>();
        else throw validation_error("config: a seed is required (config key or --seed)");

        if (threads > 0) ctx.threads = threads;
        else if (const char* env = std::getenv("LOGSHE_THREADS")) ctx.threads = std::max(1, std::atoi(env));
        else if (ctx.config.contains("threads")) ctx.threads = ctx.config.at("threads").get<int>();

        if (!out_dir.empty()) ctx.out_dir = out_dir;
        else if (ctx.config.contains("output")) {
            require_keys(ctx.config.at("output"), "output", {"dir"});
            ctx.out_dir = ctx.config.at("output").value("dir", ".");
        }

        if (sub_simulate->parsed()) return cmd_simulate(ctx);
        if (sub_fit->parsed()) return cmd_fit(ctx);
        if (sub_test->parsed()) return cmd_test(ctx);
        if (sub_mc->parsed()) return cmd_mc(ctx);
        if (sub_bic->parsed()) return cmd_bic_select(ctx);
        if (sub_effects->parsed()) return cmd_effects(ctx);
        return 1;
    } catch (const validation_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 2;
    }
}
