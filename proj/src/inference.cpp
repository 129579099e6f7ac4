#include "logshe/inference.hpp"

#include "logshe/detail/op_cache.hpp"
#include "logshe/optimize.hpp"
#include "logshe/special.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <cctype>
#include <cmath>
#include <limits>
#include <sstream>

namespace logshe {

int Constraint::cg() const {
    return static_cast<int>(J.cols());
}

Eigen::VectorXd Constraint::value(const Eigen::VectorXd& theta_full) const {
    if (nonlinear) return nonlinear(theta_full);
    return J.transpose() * theta_full - c;
}

Eigen::MatrixXd Constraint::jacobian(const Eigen::VectorXd& theta_full) const {
    if (!nonlinear) return J.transpose();
    const auto p = theta_full.size();
    Eigen::VectorXd g0 = nonlinear(theta_full);
    Eigen::MatrixXd G(g0.size(), p);
    for (Eigen::Index i = 0; i < p; ++i) {
        const double h = 1e-6 * (1.0 + std::fabs(theta_full[i]));
        Eigen::VectorXd up = theta_full, dn = theta_full;
        up[i] += h;
        dn[i] -= h;
        G.col(i) = (nonlinear(up) - nonlinear(dn)) / (2.0 * h);
    }
    return G;
}

Constraint Constraint::rho_zero(int K) {
    Constraint con;
    con.J = Eigen::MatrixXd::Zero(K + 1, 1);
    con.J(0, 0) = 1.0;
    con.c = Eigen::VectorXd::Zero(1);
    con.description = "rho=0";
    return con;
}

Constraint Constraint::gamma_zero(int K) {
    Constraint con;
    con.J = Eigen::MatrixXd::Zero(K + 1, K);
    con.J.block(1, 0, K, K).setIdentity();
    con.c = Eigen::VectorXd::Zero(K);
    con.description = "gamma=0";
    return con;
}

Constraint Constraint::component(int K, int index, double value, std::string label) {
    if (index < 0 || index > K) throw validation_error("constraint: component index out of range");
    Constraint con;
    con.J = Eigen::MatrixXd::Zero(K + 1, 1);
    con.J(index, 0) = 1.0;
    con.c = Eigen::VectorXd::Constant(1, value);
    con.description = std::move(label);
    return con;
}

Constraint Constraint::parse(const std::string& text, int K) {
    if (text.empty()) throw validation_error("constraint: empty specification");
    std::vector<Eigen::VectorXd> rows;
    std::vector<double> rhs;
    std::stringstream ss(text);
    std::string term;
    while (std::getline(ss, term, ',')) {
        // strip blanks
        std::string t;
        for (char ch : term)
            if (!std::isspace(static_cast<unsigned char>(ch))) t += ch;
        if (t.empty()) continue;
        auto eq = t.find('=');
        if (eq == std::string::npos) throw validation_error("constraint: missing '=' in '" + term + "'");
        const std::string lhs = t.substr(0, eq);
        const double val = std::stod(t.substr(eq + 1));
        Eigen::VectorXd row = Eigen::VectorXd::Zero(K + 1);
        if (lhs == "rho") {
            row[0] = 1.0;
        } else if (lhs == "gamma") {
            // all gamma components at once
            for (int k = 0; k < K; ++k) {
                Eigen::VectorXd r = Eigen::VectorXd::Zero(K + 1);
                r[1 + k] = 1.0;
                rows.push_back(r);
                rhs.push_back(val);
            }
            continue;
        } else if (lhs.rfind("gamma[", 0) == 0 && lhs.back() == ']') {
            const int idx = std::stoi(lhs.substr(6, lhs.size() - 7));
            if (idx < 0 || idx >= K) throw validation_error("constraint: gamma index out of range");
            row[1 + idx] = 1.0;
        } else {
            throw validation_error("constraint: cannot parse '" + term + "'");
        }
        rows.push_back(row);
        rhs.push_back(val);
    }
    if (rows.empty()) throw validation_error("constraint: empty specification");
    Constraint con;
    con.J.resize(K + 1, static_cast<Eigen::Index>(rows.size()));
    con.c.resize(static_cast<Eigen::Index>(rows.size()));
    for (size_t i = 0; i < rows.size(); ++i) {
        con.J.col(static_cast<Eigen::Index>(i)) = rows[i];
        con.c[static_cast<Eigen::Index>(i)] = rhs[i];
    }
    con.description = text;
    return con;
}

namespace {

void check_constraint_rank(const Eigen::MatrixXd& G) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(G);
    if (svd.singularValues().minCoeff() <= 1e-10)
        throw validation_error("constraint jacobian is rank deficient");
}

double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }

} // namespace

GmmFit constrained_ogmm(const MomentSystem& system, const LogSheModel& model, const Dataset& data,
                        const Constraint& constraint, const Eigen::MatrixXd& omega_tilde,
                        const GmmOptions& options) {
    if (!constraint.is_linear())
        throw validation_error("constrained_ogmm: only linear constraints are supported");
    const int K = data.K();
    const int p = K + 1;
    if (constraint.J.rows() != p) throw validation_error("constrained_ogmm: constraint dimension mismatch");
    check_constraint_rank(constraint.J.transpose());

    const Eigen::MatrixXd Xi = inverse_weighting(omega_tilde);
    const RhoInterval iv = model.family.interval();

    // particular solution and null-space basis of J'theta = c
    Eigen::VectorXd theta_p =
        constraint.J * (constraint.J.transpose() * constraint.J)
                           .ldlt()
                           .solve(constraint.c);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(constraint.J.transpose());
    Eigen::MatrixXd N = lu.kernel(); // p x (p - cg)
    const int free_dim = static_cast<int>(N.cols());

    if (!std::isfinite(theta_p[0]))
        throw validation_error("constrained_ogmm: infeasible constraint");
    const bool rho_pinned = N.row(0).cwiseAbs().maxCoeff() < 1e-12;
    if (rho_pinned && !iv.contains(theta_p[0]))
        throw validation_error("constrained_ogmm: constraint pins rho outside the admissible interval");

    const double margin = 1e-6 * (iv.hi - iv.lo);
    const double penalty_scale = 1e8;

    auto theta_of = [&](const Eigen::VectorXd& u) {
        Eigen::VectorXd tf = theta_p;
        if (free_dim > 0) tf += N * u;
        return tf;
    };

    // same 1/n^2 optimizer scaling as fit_gmm so the two objectives share
    // floating point behavior in the D statistic
    const double scale = 1.0 / (static_cast<double>(data.n()) * data.n());
    auto objective = [&](const Eigen::VectorXd& u, Eigen::VectorXd* grad) {
        Eigen::VectorXd tf = theta_of(u);
        double rho_raw = tf[0];
        double rho_eval = iv.clamp_interior(rho_raw, margin);
        double pen = penalty_scale * (rho_raw - rho_eval) * (rho_raw - rho_eval);
        Theta theta;
        theta.rho = rho_eval;
        theta.gamma = tf.tail(K);
        Eigen::VectorXd R = moment_vector(system, model, data, theta);
        double f = scale * R.dot(Xi * R) + pen;
        if (grad) {
            Eigen::MatrixXd Jm = moment_jacobian(system, model, data, theta);
            Eigen::VectorXd g_theta = (2.0 * scale) * (Jm.transpose() * (Xi * R));
            g_theta[0] += 2.0 * penalty_scale * (rho_raw - rho_eval);
            *grad = N.transpose() * g_theta;
        }
        return f;
    };

    GmmFit fit;
    fit.method = "ogmm";
    fit.constraint_cg = constraint.cg();
    fit.constraint_desc = constraint.description;
    fit.instrument_hash = system.hash();
    fit.weighting_hash = matrix_hash(Xi);
    fit.omega_tilde = omega_tilde;

    Eigen::VectorXd theta_best;
    if (free_dim == 0) {
        theta_best = theta_p;
        Theta theta = Theta::from_full(theta_best);
        model.family.check_admissible(theta.rho);
        Eigen::VectorXd R = moment_vector(system, model, data, theta);
        fit.objective = R.dot(Xi * R);
        fit.converged = true;
    } else {
        // project the usual multi-starts onto the constraint surface
        Eigen::VectorXd gamma0 = data.Z().colPivHouseholderQr().solve(data.log_y2());
        detail::OpVectorCache cache(model.family, data);
        std::vector<Eigen::VectorXd> starts;
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> nqr(N);
        auto add_start = [&](const Eigen::VectorXd& tf) { starts.push_back(nqr.solve(tf - theta_p)); };
        if (options.start) {
            add_start(options.start->full());
        } else {
            for (double rho_s : options.rho_starts) {
                Eigen::VectorXd tf(p);
                tf[0] = iv.clamp_interior(rho_s, 0.05 * (iv.hi - iv.lo));
                tf.tail(K) = detail::centered_start(cache, tf[0], data.Z(), gamma0);
                add_start(tf);
            }
        }
        OptimOptions oopt;
        oopt.grad_tol = options.tol;
        oopt.max_iter = options.max_iter;
        double best_f = std::numeric_limits<double>::infinity();
        bool any = false;
        for (const auto& u0 : starts) {
            OptimResult r;
            try {
                r = bfgs_minimize(objective, u0, oopt);
            } catch (const numerical_error&) {
                continue;
            }
            if (!any || r.f < best_f || (r.converged && !fit.converged && r.f <= best_f + 1e-12)) {
                any = true;
                best_f = r.f;
                theta_best = theta_of(r.x);
                theta_best[0] = iv.clamp_interior(theta_best[0], margin);
                fit.converged = r.converged;
                fit.iterations = r.iterations;
            }
        }
        if (!any) throw fit_error("constrained_ogmm: every start point failed");
        fit.objective = best_f / scale;
    }

    fit.theta_hat = Theta::from_full(theta_best);
    fit.moment_at_opt = moment_vector(system, model, data, fit.theta_hat);
    Eigen::VectorXd v2 = v2_vector(model, data, fit.theta_hat).v2;
    fit.moments = estimate_moments(v2, MomentMode::Sample);
    if (options.compute_covariance) {
        MomentCovariances mc = omega_sigma_R(system, model, data, fit.theta_hat, fit.moments);
        fit.omega_R_hat = mc.omega_R;
        fit.sigma_R_hat = mc.sigma_R;
        fit.ridged = mc.ridged;
    }
    return fit;
}

TestResult wald_test(const GmmFit& fit, const Constraint& constraint) {
    if (fit.method != "ogmm") throw validation_error("wald_test: OGMM fit required");
    if (fit.sigma_R_hat.size() == 0 || fit.omega_R_hat.size() == 0)
        throw validation_error("wald_test: fit lacks Omega/Sigma estimates");

    Eigen::VectorXd tf = fit.theta_hat.full();
    Eigen::VectorXd gval = constraint.value(tf);
    Eigen::MatrixXd G = constraint.jacobian(tf);
    check_constraint_rank(G);

    Eigen::LLT<Eigen::MatrixXd> llt(fit.omega_R_hat);
    if (llt.info() != Eigen::Success) throw numerical_error("wald_test: Omega_R not PD");
    Eigen::MatrixXd H = fit.sigma_R_hat.transpose() * llt.solve(fit.sigma_R_hat);
    Eigen::MatrixXd V = Eigen::PartialPivLU<Eigen::MatrixXd>(H).inverse(); // cov of theta_hat
    Eigen::MatrixXd GV = G * V * G.transpose();
    Eigen::VectorXd x = Eigen::PartialPivLU<Eigen::MatrixXd>(GV).solve(gval);

    TestResult res;
    res.kind = "wald";
    res.statistic = std::max(0.0, gval.dot(x));
    res.df = static_cast<int>(G.rows());
    res.p_value = chisq_upper_tail(res.statistic, res.df);
    res.constraint = constraint.description;
    res.instrument_hash = fit.instrument_hash;
    return res;
}

TestResult lm_test(const GmmFit& constrained_fit, const MomentSystem& system,
                   const LogSheModel& model, const Dataset& data, const Constraint& constraint) {
    const GmmFit& fit = constrained_fit;
    if (fit.constraint_cg == 0) throw validation_error("lm_test: constrained fit required");
    if (fit.omega_R_hat.size() == 0)
        throw validation_error("lm_test: fit lacks an Omega estimate");

    Eigen::MatrixXd sigma_c = moment_jacobian(system, model, data, fit.theta_hat);
    Eigen::LLT<Eigen::MatrixXd> llt(fit.omega_R_hat);
    if (llt.info() != Eigen::Success) throw numerical_error("lm_test: Omega_R not PD");
    Eigen::VectorXd omr = llt.solve(fit.moment_at_opt);
    Eigen::VectorXd a = sigma_c.transpose() * omr;
    Eigen::MatrixXd H = sigma_c.transpose() * llt.solve(sigma_c);
    Eigen::VectorXd x = Eigen::PartialPivLU<Eigen::MatrixXd>(H).solve(a);

    TestResult res;
    res.kind = "lm";
    res.statistic = std::max(0.0, a.dot(x));
    res.df = fit.constraint_cg;
    res.p_value = chisq_upper_tail(res.statistic, res.df);
    res.constraint = constraint.description;
    res.instrument_hash = fit.instrument_hash;
    return res;
}

TestResult d_test(const GmmFit& constrained_fit, const GmmFit& unconstrained_fit) {
    if (constrained_fit.constraint_cg == 0)
        throw validation_error("d_test: first argument must be the constrained fit");
    if (constrained_fit.weighting_hash != unconstrained_fit.weighting_hash ||
        constrained_fit.instrument_hash != unconstrained_fit.instrument_hash)
        throw validation_error("d_test: fits do not share the weighting matrix");
    double diff = constrained_fit.objective - unconstrained_fit.objective;
    if (diff < -1e-8)
        throw numerical_error("d_test: constrained objective below unconstrained (fits inconsistent)");
    if (diff < 0.0) diff = 0.0;

    TestResult res;
    res.kind = "d";
    res.statistic = diff;
    res.df = constrained_fit.constraint_cg;
    res.p_value = chisq_upper_tail(res.statistic, res.df);
    res.constraint = constrained_fit.constraint_desc;
    res.instrument_hash = constrained_fit.instrument_hash;
    return res;
}

TestResult j_test(const GmmFit& fit, const MomentSystem& system) {
    const int df = system.dim() - fit.theta_hat.dim();
    if (df <= 0) throw validation_error("j_test: system is not overidentified");
    if (fit.omega_R_hat.size() == 0) throw validation_error("j_test: fit lacks Omega estimate");
    Eigen::LLT<Eigen::MatrixXd> llt(fit.omega_R_hat);
    if (llt.info() != Eigen::Success) throw numerical_error("j_test: Omega_R not PD");

    TestResult res;
    res.kind = "j";
    res.statistic = std::max(0.0, fit.moment_at_opt.dot(llt.solve(fit.moment_at_opt)));
    res.df = df;
    res.p_value = chisq_upper_tail(res.statistic, res.df);
    res.constraint = "";
    res.instrument_hash = fit.instrument_hash;
    return res;
}

ConstraintTests run_constraint_tests(const MomentSystem& system, const LogSheModel& model,
                                     const Dataset& data, const Constraint& constraint,
                                     const GmmOptions& options) {
    ConstraintTests out;
    out.unconstrained = fit_ogmm(system, model, data, options);
    out.constrained = constrained_ogmm(system, model, data, constraint,
                                       out.unconstrained.omega_tilde, options);
    out.wald = wald_test(out.unconstrained, constraint);
    out.lm = lm_test(out.constrained, system, model, data, constraint);
    out.d = d_test(out.constrained, out.unconstrained);
    return out;
}

} // namespace logshe
