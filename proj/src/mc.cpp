#include "logshe/mc.hpp"

#include "logshe/special.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

namespace logshe {

namespace {
constexpr std::uint64_t kTagCoords = 0x434f4f52ull;
} // namespace

double chisq_critical(double tau, int df) {
    // bisection on the upper tail
    double lo = 0.0, hi = 1.0;
    while (chisq_upper_tail(hi, df) > tau) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (chisq_upper_tail(mid, df) > tau) lo = mid;
        else hi = mid;
        if (hi - lo < 1e-12 * std::max(1.0, hi)) break;
    }
    return 0.5 * (lo + hi);
}

void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
    threads = std::max(1, threads);
    if (threads == 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex err_mutex;
    auto worker = [&]() {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= count) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads));
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

WeightMatrix McDesign::make_weights() const { return make_weights(knn_k); }

WeightMatrix McDesign::make_weights(int k) const {
    Rng base = Rng(seed).fork(kTagCoords);
    Coordinates coords;
    coords.points.resize(n, 2);
    for (int i = 0; i < n; ++i) {
        Rng stream = base.fork(static_cast<std::uint64_t>(i));
        coords.points(i, 0) = stream.next_uniform();
        coords.points(i, 1) = stream.next_uniform();
    }
    return build_knn(coords, k);
}

const EstimationCell& EstimationTable::cell(const std::string& method,
                                            const std::string& param) const {
    for (const auto& c : cells)
        if (c.method == method && c.param == param) return c;
    throw validation_error("EstimationTable: no cell " + method + "/" + param);
}

std::string EstimationTable::to_csv(const std::string& error_name, int n) const {
    std::ostringstream out;
    out << "error,n,method,param,bias,rmse,reps,seed\n";
    char buf[64];
    for (const auto& c : cells) {
        out << error_name << "," << n << "," << c.method << "," << c.param << ",";
        std::snprintf(buf, sizeof(buf), "%.6f", c.bias);
        out << buf << ",";
        std::snprintf(buf, sizeof(buf), "%.6f", c.rmse);
        out << buf << "," << reps_used << "," << seed << "\n";
    }
    return out.str();
}

namespace {

struct RepDraw {
    bool ok = false;
    std::vector<Eigen::VectorXd> estimates; // one per method
};

} // namespace

EstimationTable run_estimation_mc(const McDesign& design,
                                  const std::vector<std::string>& methods) {
    if (design.replications < 2) throw validation_error("run_estimation_mc: need >= 2 replications");
    WeightMatrix W = design.make_weights();
    OperatorFamily family(design.family, W, design.sme_truncation);
    Theta theta0;
    theta0.rho = design.rho0;
    theta0.gamma = design.gamma0;
    family.check_admissible(theta0.rho);

    std::vector<RepDraw> results(static_cast<size_t>(design.replications));
    MLOptions ml_opts;
    ml_opts.compute_covariance = false;
    GmmOptions gmm_opts;
    gmm_opts.compute_covariance = false;
    LogSheModel model(family, true);

    parallel_for(design.replications, design.threads, [&](int r) {
        RepDraw& out = results[static_cast<size_t>(r)];
        try {
            SimulationResult sim =
                simulate(family, theta0, design.x_cols, design.errors, Rng::derive(design.seed, r));
            // instruments that depend on Z must be per replication
            std::optional<MomentSystem> rep_system;
            for (const std::string& m : methods) {
                if ((m == "gmm" || m == "ogmm") && !rep_system)
                    rep_system.emplace(
                        default_instruments(W, sim.data.Z(), design.kappa_max, true));
                if (m == "ml") {
                    MLFit fit = fit_ml(model, sim.data, ml_opts);
                    if (!fit.converged) throw fit_error("ml not converged");
                    out.estimates.push_back(fit.theta_hat.full());
                } else if (m == "2sml") {
                    MLFit fit = fit_2sml(model, sim.data, ml_opts);
                    out.estimates.push_back(fit.theta_hat.full());
                } else if (m == "gmm") {
                    Eigen::MatrixXd I =
                        Eigen::MatrixXd::Identity(rep_system->dim(), rep_system->dim());
                    GmmFit fit = fit_gmm(*rep_system, model, sim.data, I, gmm_opts);
                    if (!fit.converged) throw fit_error("gmm not converged");
                    out.estimates.push_back(fit.theta_hat.full());
                } else if (m == "ogmm") {
                    GmmFit fit = fit_ogmm(*rep_system, model, sim.data, gmm_opts);
                    if (!fit.converged) throw fit_error("ogmm not converged");
                    out.estimates.push_back(fit.theta_hat.full());
                } else {
                    throw validation_error("run_estimation_mc: unknown method " + m);
                }
            }
            out.ok = true;
        } catch (const std::exception&) {
            out.ok = false;
        }
    });

    const int p = theta0.dim();
    EstimationTable table;
    table.seed = design.seed;
    std::vector<Eigen::VectorXd> sum(methods.size(), Eigen::VectorXd::Zero(p));
    std::vector<Eigen::VectorXd> sumsq(methods.size(), Eigen::VectorXd::Zero(p));
    for (const auto& rep : results) {
        if (!rep.ok) {
            ++table.reps_failed;
            continue;
        }
        ++table.reps_used;
        for (size_t m = 0; m < methods.size(); ++m) {
            Eigen::VectorXd err = rep.estimates[m] - theta0.full();
            sum[m] += err;
            sumsq[m] += err.cwiseProduct(err);
        }
    }
    if (table.reps_failed * 20 > design.replications)
        throw fit_error("run_estimation_mc: more than 5% of replications failed (" +
                        std::to_string(table.reps_failed) + "/" +
                        std::to_string(design.replications) + ")");

    const auto used = static_cast<double>(table.reps_used);
    for (size_t m = 0; m < methods.size(); ++m) {
        for (int j = 0; j < p; ++j) {
            EstimationCell cell;
            cell.method = methods[m];
            cell.param = (j == 0) ? "rho" : ("gamma" + std::to_string(j - 1));
            cell.bias = sum[m][j] / used;
            cell.rmse = std::sqrt(sumsq[m][j] / used);
            table.cells.push_back(std::move(cell));
        }
    }
    return table;
}

double TestStatistics::rate(const std::vector<double>& stats, double critical) const {
    if (stats.empty()) return 0.0;
    int rej = 0;
    for (double s : stats)
        if (s > critical) ++rej;
    return static_cast<double>(rej) / static_cast<double>(stats.size());
}

TestStatistics run_test_mc(const McDesign& design) {
    WeightMatrix W = design.make_weights();
    OperatorFamily family(design.family, W, design.sme_truncation);
    Theta theta0;
    theta0.rho = design.rho0;
    theta0.gamma = design.gamma0;
    LogSheModel model(family, true);
    const int K = 1 + 2 * design.x_cols;
    Constraint constraint = Constraint::rho_zero(K);

    struct Rep {
        bool ok = false;
        double wald = 0.0, lm = 0.0, d = 0.0;
    };
    std::vector<Rep> results(static_cast<size_t>(design.replications));
    GmmOptions opts;

    parallel_for(design.replications, design.threads, [&](int r) {
        Rep& out = results[static_cast<size_t>(r)];
        try {
            SimulationResult sim =
                simulate(family, theta0, design.x_cols, design.errors, Rng::derive(design.seed, r));
            MomentSystem system = default_instruments(W, sim.data.Z(), design.kappa_max, true);
            ConstraintTests tests = run_constraint_tests(system, model, sim.data, constraint, opts);
            if (!tests.unconstrained.converged || !tests.constrained.converged)
                throw fit_error("test pipeline not converged");
            out.wald = tests.wald.statistic;
            out.lm = tests.lm.statistic;
            out.d = tests.d.statistic;
            out.ok = true;
        } catch (const std::exception&) {
            out.ok = false;
        }
    });

    TestStatistics stats;
    for (const auto& rep : results) {
        if (!rep.ok) {
            ++stats.reps_failed;
            continue;
        }
        ++stats.reps_used;
        stats.wald.push_back(rep.wald);
        stats.lm.push_back(rep.lm);
        stats.d.push_back(rep.d);
    }
    if (stats.reps_failed * 20 > design.replications)
        throw fit_error("run_test_mc: more than 5% of replications failed (" +
                        std::to_string(stats.reps_failed) + "/" +
                        std::to_string(design.replications) + ")");
    return stats;
}

JStatistics run_jtest_mc(const McDesign& design, JtestModel model_kind, double rho_star,
                         int knn_k_star) {
    WeightMatrix W = design.make_weights();
    WeightMatrix W_star = design.make_weights(knn_k_star);
    OperatorFamily family(design.family, W, design.sme_truncation);
    LogSheModel model(family, true);
    Theta theta0;
    theta0.rho = design.rho0;
    theta0.gamma = design.gamma0;

    struct Rep {
        bool ok = false;
        double j = 0.0;
    };
    std::vector<Rep> results(static_cast<size_t>(design.replications));
    GmmOptions opts;
    JStatistics stats;
    stats.df = 0;

    parallel_for(design.replications, design.threads, [&](int r) {
        Rep& out = results[static_cast<size_t>(r)];
        try {
            const std::uint64_t rep_seed = Rng::derive(design.seed, r);
            SimulationResult sim =
                (model_kind == JtestModel::Null)
                    ? simulate(family, theta0, design.x_cols, design.errors, rep_seed)
                    : simulate_alternative(model_kind == JtestModel::HigherOrder
                                               ? AlternativeKind::HigherOrder
                                               : AlternativeKind::Generalized,
                                           design.rho0, rho_star, design.gamma0, design.x_cols,
                                           W, W_star, design.errors, rep_seed);
            MomentSystem system = default_instruments(W, sim.data.Z(), design.kappa_max, true);
            GmmFit fit = fit_ogmm(system, model, sim.data, opts);
            if (!fit.converged) throw fit_error("ogmm not converged");
            TestResult j = j_test(fit, system);
            out.j = j.statistic;
            out.ok = true;
        } catch (const std::exception&) {
            out.ok = false;
        }
    });

    for (const auto& rep : results) {
        if (!rep.ok) {
            ++stats.reps_failed;
            continue;
        }
        ++stats.reps_used;
        stats.stats.push_back(rep.j);
    }
    stats.df = design.kappa_max + (1 + 3 * design.x_cols) - (2 + 2 * design.x_cols);
    if (stats.reps_failed * 20 > design.replications)
        throw fit_error("run_jtest_mc: more than 5% of replications failed (" +
                        std::to_string(stats.reps_failed) + "/" +
                        std::to_string(design.replications) + ")");
    return stats;
}

double empirical_quantile(std::vector<double> values, double p) {
    if (values.empty()) throw validation_error("empirical_quantile: empty sample");
    std::sort(values.begin(), values.end());
    const double pos = p * (static_cast<double>(values.size()) - 1.0);
    const auto lo = static_cast<size_t>(pos);
    const size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
}

} // namespace logshe
