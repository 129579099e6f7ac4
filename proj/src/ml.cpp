#include "logshe/ml.hpp"

#include "logshe/detail/op_cache.hpp"
#include "logshe/optimize.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/QR>

#include <cmath>
#include <limits>

namespace logshe {

namespace {

using detail::OpVectorCache;

Eigen::VectorXd v2_from(const Eigen::VectorXd& a_logy2, const Eigen::MatrixXd& Z,
                        const Eigen::VectorXd& gamma) {
    Eigen::VectorXd e = a_logy2 - Z * gamma;
    Eigen::VectorXd v2(e.size());
    for (Eigen::Index i = 0; i < e.size(); ++i) {
        if (e[i] > 700.0)
            throw nonfinite_variance_error("v^2 overflow at unit " + std::to_string(i));
        v2[i] = std::exp(e[i]);
    }
    return v2;
}

double loglik_impl(const OperatorFamily& fam, const Dataset& data,
                   const OpVectorCache::Vectors& vec, const Theta& theta) {
    Eigen::VectorXd e = vec.a - data.Z() * theta.gamma;
    const double log2pi = std::log(2.0 * M_PI);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < e.size(); ++i) {
        if (e[i] > 700.0)
            throw nonfinite_variance_error("v^2 overflow at unit " + std::to_string(i));
        // y^2/h = exp(e), log h = log y^2 - e
        acc += log2pi + std::exp(e[i]) + data.log_y2()[i] - e[i];
    }
    return -0.5 * acc + fam.log_det_A(theta.rho);
}

Eigen::VectorXd score_impl(const OperatorFamily& fam, const Dataset& data,
                           const OpVectorCache::Vectors& vec, const Theta& theta) {
    Eigen::VectorXd v2 = v2_from(vec.a, data.Z(), theta.gamma);
    Eigen::VectorXd u = v2.array() - 1.0;
    Eigen::VectorXd s(theta.dim());
    s[0] = -0.5 * vec.adot.dot(u) + fam.trace_Adot_Ainv(theta.rho);
    s.tail(theta.gamma.size()) = 0.5 * data.Z().transpose() * u;
    return s;
}

Eigen::MatrixXd hessian_impl(const OperatorFamily& fam, const Dataset& data,
                             const OpVectorCache::Vectors& vec, const Theta& theta) {
    const int K = static_cast<int>(theta.gamma.size());
    Eigen::VectorXd v2 = v2_from(vec.a, data.Z(), theta.gamma);
    Eigen::VectorXd u = v2.array() - 1.0;
    Eigen::MatrixXd H(K + 1, K + 1);
    H(0, 0) = -0.5 * (vec.adot.array().square() * v2.array()).sum() - 0.5 * vec.addot.dot(u) +
              fam.log_det_second_deriv(theta.rho);
    Eigen::VectorXd cross = 0.5 * data.Z().transpose() * (vec.adot.array() * v2.array()).matrix();
    H.block(0, 1, 1, K) = cross.transpose();
    H.block(1, 0, K, 1) = cross;
    H.block(1, 1, K, K) =
        -0.5 * data.Z().transpose() * v2.asDiagonal() * data.Z();
    return H;
}

Eigen::VectorXd ols(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y) {
    return Z.colPivHouseholderQr().solve(y);
}

double logit(double p) { return std::log(p / (1.0 - p)); }
double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }

} // namespace

double log_likelihood(const LogSheModel& model, const Dataset& data, const Theta& theta) {
    if (theta.gamma.size() != data.K()) throw validation_error("log_likelihood: gamma dimension != K");
    OpVectorCache cache(model.family, data);
    return loglik_impl(model.family, data, cache.at(theta.rho), theta);
}

Eigen::VectorXd score(const LogSheModel& model, const Dataset& data, const Theta& theta) {
    if (theta.gamma.size() != data.K()) throw validation_error("score: gamma dimension != K");
    OpVectorCache cache(model.family, data);
    return score_impl(model.family, data, cache.at(theta.rho), theta);
}

Eigen::MatrixXd hessian(const LogSheModel& model, const Dataset& data, const Theta& theta) {
    if (theta.gamma.size() != data.K()) throw validation_error("hessian: gamma dimension != K");
    OpVectorCache cache(model.family, data);
    return hessian_impl(model.family, data, cache.at(theta.rho), theta);
}

Eigen::VectorXd MLFit::standard_errors() const {
    if (covariance.size() == 0) return Eigen::VectorXd();
    return covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
}

MlInformation ml_information(const LogSheModel& model, const Dataset& data, const Theta& theta,
                             const MomentSet& mom) {
    const OperatorFamily& fam = model.family;
    const Eigen::MatrixXd& Z = data.Z();
    const int K = data.K();

    Eigen::MatrixXd As = fam.a_star_dense(theta.rho);
    const double t = As.trace();
    Eigen::VectorXd dA = As.diagonal();
    Eigen::VectorXd r = As.rowwise().sum();
    Eigen::VectorXd m = As * (Z * theta.gamma);
    const double S1 = dA.squaredNorm();
    const double SF = As.squaredNorm();
    const double S2 = (As.array() * As.transpose().array()).sum();
    const double B2 = fam.log_det_second_deriv(theta.rho) + S2; // tr(Addot Ainv)

    const double s2 = mom.sigma2, ss2 = mom.sigma_star2;

    MlInformation info;
    info.omega.resize(K + 1, K + 1);
    info.sigma.resize(K + 1, K + 1);

    const double om_rr =
        0.25 * (mom.c_e - 2.0 * mom.a_e * mom.b_e - 2.0 * mom.d_e * mom.d_e - s2 * mom.e_e +
                2.0 * s2 * mom.b_e * mom.b_e) * S1 +
        0.25 * s2 * (mom.e_e - mom.b_e * mom.b_e) * SF + 0.25 * mom.d_e * mom.d_e * S2 +
        0.25 * (mom.d_e - 2.0) * (mom.d_e - 2.0) * t * t +
        0.25 * s2 * mom.b_e * mom.b_e * r.squaredNorm() +
        0.5 * mom.b_e * mom.f_e * dA.dot(r) + 0.5 * mom.f_e * dA.dot(m) +
        0.5 * s2 * mom.b_e * r.dot(m) + 0.25 * s2 * m.squaredNorm();
    Eigen::VectorXd om_rg = -0.25 * (Z.transpose() * (s2 * m + mom.f_e * dA + s2 * mom.b_e * r));
    info.omega(0, 0) = om_rr;
    info.omega.block(0, 1, 1, K) = om_rg.transpose();
    info.omega.block(1, 0, K, 1) = om_rg;
    info.omega.block(1, 1, K, K) = 0.25 * s2 * (Z.transpose() * Z);

    const double si_rr =
        0.5 * (mom.c_e_star - ss2 * mom.e_e - 2.0 * mom.a_e_star * mom.b_e +
               2.0 * ss2 * mom.b_e * mom.b_e) * S1 +
        0.5 * ss2 * (mom.e_e - mom.b_e * mom.b_e) * SF + S2 +
        0.5 * ss2 * mom.b_e * mom.b_e * r.squaredNorm() +
        mom.b_e * mom.f_e_star * dA.dot(r) + mom.f_e_star * dA.dot(m) +
        ss2 * mom.b_e * r.dot(m) + 0.5 * ss2 * m.squaredNorm() +
        (0.5 * mom.d_e - 1.0) * B2;
    Eigen::VectorXd si_rg = -0.5 * (Z.transpose() * (ss2 * m + mom.f_e_star * dA + ss2 * mom.b_e * r));
    info.sigma(0, 0) = si_rr;
    info.sigma.block(0, 1, 1, K) = si_rg.transpose();
    info.sigma.block(1, 0, K, 1) = si_rg;
    info.sigma.block(1, 1, K, K) = 0.5 * ss2 * (Z.transpose() * Z);
    return info;
}

MLFit fit_ml(const LogSheModel& model, const Dataset& data, const MLOptions& options) {
    const OperatorFamily& fam = model.family;
    const RhoInterval iv = fam.interval();
    const double width = iv.hi - iv.lo;
    const int K = data.K();
    OpVectorCache cache(fam, data);

    Eigen::VectorXd gamma0 = ols(data.Z(), data.log_y2());

    MLFit best;
    best.loglik = -std::numeric_limits<double>::infinity();
    bool any = false;

    const bool rho_free = !options.rho_fixed.has_value();

    auto objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
        Theta theta;
        double s = 0.0;
        if (rho_free) {
            s = sigmoid(x[0]);
            theta.rho = iv.lo + width * s;
            theta.gamma = x.tail(K);
        } else {
            theta.rho = *options.rho_fixed;
            theta.gamma = x;
        }
        auto vec = cache.at(theta.rho);
        if (grad) {
            Eigen::VectorXd sc = score_impl(fam, data, vec, theta);
            if (rho_free) {
                grad->resize(K + 1);
                (*grad)[0] = -sc[0] * width * s * (1.0 - s);
                grad->tail(K) = -sc.tail(K);
            } else {
                *grad = -sc.tail(K);
            }
        }
        return -loglik_impl(fam, data, vec, theta);
    };

    std::vector<Eigen::VectorXd> starts;
    if (options.start) {
        Eigen::VectorXd x(rho_free ? K + 1 : K);
        if (rho_free) {
            double rho_s = iv.clamp_interior(options.start->rho, 1e-4 * width);
            x[0] = logit((rho_s - iv.lo) / width);
            x.tail(K) = options.start->gamma;
        } else {
            x = options.start->gamma;
        }
        starts.push_back(x);
    } else if (rho_free) {
        for (double rho_s : options.rho_starts) {
            const double rs = iv.clamp_interior(rho_s, 0.05 * width);
            Eigen::VectorXd x(K + 1);
            x[0] = logit((rs - iv.lo) / width);
            x.tail(K) = detail::centered_start(cache, rs, data.Z(), gamma0);
            starts.push_back(x);
        }
    } else {
        starts.push_back(detail::centered_start(cache, *options.rho_fixed, data.Z(), gamma0));
    }

    OptimOptions oopt;
    oopt.grad_tol = options.tol;
    oopt.max_iter = options.max_iter;

    for (const auto& x0 : starts) {
        OptimResult r;
        try {
            r = bfgs_minimize(objective, x0, oopt);
        } catch (const numerical_error&) {
            continue; // start point infeasible
        }
        const double ll = -r.f;
        if (!any || ll > best.loglik ||
            (r.converged && !best.converged && ll >= best.loglik - 1e-10)) {
            any = true;
            Theta theta;
            if (rho_free) {
                theta.rho = iv.lo + width * sigmoid(r.x[0]);
                theta.gamma = r.x.tail(K);
                best.boundary_warning = std::fabs(r.x[0]) > 6.0;
            } else {
                theta.rho = *options.rho_fixed;
                theta.gamma = r.x;
                best.boundary_warning = false;
            }
            best.theta_hat = theta;
            best.loglik = ll;
            best.converged = r.converged;
            best.iterations = r.iterations;
        }
    }
    if (!any) throw fit_error("fit_ml: every start point failed to evaluate");

    best.method = "ml";
    auto vec = cache.at(best.theta_hat.rho);
    Eigen::VectorXd sc = score_impl(fam, data, vec, best.theta_hat);
    if (!rho_free) sc[0] = 0.0; // rho was not a free parameter
    best.score_norm_at_opt = sc.cwiseAbs().maxCoeff();

    Eigen::VectorXd v2 = v2_from(vec.a, data.Z(), best.theta_hat.gamma);
    best.moments = estimate_moments(v2, options.moment_mode);

    if (options.compute_covariance) {
        MlInformation info = ml_information(model, data, best.theta_hat, best.moments);
        if (rho_free) {
            Eigen::PartialPivLU<Eigen::MatrixXd> lu(info.sigma);
            Eigen::MatrixXd cov = lu.solve(info.omega) * lu.inverse().transpose();
            best.covariance = 0.5 * (cov + cov.transpose());
        } else {
            // rho known: sandwich over the gamma block only
            Eigen::MatrixXd sg = info.sigma.block(1, 1, K, K);
            Eigen::MatrixXd og = info.omega.block(1, 1, K, K);
            Eigen::PartialPivLU<Eigen::MatrixXd> lu(sg);
            Eigen::MatrixXd cov = lu.solve(og) * lu.inverse().transpose();
            best.covariance = Eigen::MatrixXd::Zero(K + 1, K + 1);
            best.covariance.block(1, 1, K, K) = 0.5 * (cov + cov.transpose());
        }
    }
    return best;
}

MLFit fit_2sml(const LogSheModel& model, const Dataset& data, const MLOptions& options) {
    if (!model.durbin) throw validation_error("fit_2sml: Durbin layout required");
    const OperatorFamily& fam = model.family;
    const RhoInterval iv = fam.interval();
    const int n = data.n();
    const int K = data.K();
    OpVectorCache cache(fam, data);

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(data.Z());
    const double log2pi = std::log(2.0 * M_PI);

    auto profile = [&](double rho) {
        // for fixed rho, (c_e, beta, beta_m) is least squares of A(rho) log Y^2 on Z
        Eigen::VectorXd zeta = cache.at(rho).a;
        Eigen::VectorXd coef = qr.solve(zeta);
        double rss = (zeta - data.Z() * coef).squaredNorm();
        double sigma_t2 = rss / n;
        return 0.5 * n * (log2pi + 1.0 + std::log(std::max(sigma_t2, 1e-300))) -
               fam.log_det_A(rho);
    };

    const double margin = 1e-4 * (iv.hi - iv.lo);
    double rho_hat = brent_minimize(profile, iv.lo + margin, iv.hi - margin, 1e-9);

    Eigen::VectorXd zeta = cache.at(rho_hat).a;
    Eigen::VectorXd coef = qr.solve(zeta);
    Eigen::VectorXd resid = zeta - data.Z() * coef;
    const double sigma_t2 = resid.squaredNorm() / n;
    if (!(sigma_t2 > 0.0)) throw fit_error("fit_2sml: degenerate fit, sigma_tilde^2 <= 0");

    // C_i(beta, beta_m) = zeta_i - X_i beta - (M X beta_m)_i = c_e_hat + resid_i
    Eigen::VectorXd C = resid.array() + coef[0];
    const double cmax = C.maxCoeff();
    const double alpha_hat = cmax + std::log((C.array() - cmax).exp().mean());

    MLFit fit;
    fit.method = "2sml";
    fit.theta_hat.rho = rho_hat;
    fit.theta_hat.gamma.resize(K);
    fit.theta_hat.gamma[0] = alpha_hat;
    fit.theta_hat.gamma.tail(K - 1) = coef.tail(K - 1);
    fit.converged = true;
    fit.iterations = 0;
    fit.loglik = log_likelihood(model, data, fit.theta_hat);
    fit.score_norm_at_opt = std::numeric_limits<double>::quiet_NaN();
    Eigen::VectorXd v2 = v2_vector(model, data, fit.theta_hat).v2;
    fit.moments = estimate_moments(v2, options.moment_mode);
    // no covariance by construction: two-step estimation leaves the joint
    // asymptotic variance unavailable
    return fit;
}

ConsistencyDiagnostic consistency_diagnostic(const MLFit& fit, const LogSheModel& model,
                                             const Dataset& data) {
    Eigen::VectorXd v2 = v2_vector(model, data, fit.theta_hat).v2;
    const auto n = static_cast<double>(data.n());
    double e1 = 0.0;
    for (Eigen::Index i = 0; i < v2.size(); ++i) e1 += (1.0 - v2[i]) * std::log(v2[i]);
    e1 /= n;
    ConsistencyDiagnostic diag;
    diag.term1 = (e1 + 2.0) * model.family.trace_Adot_Ainv(fit.theta_hat.rho) / n;
    diag.term2 = (v2.mean() - 1.0) * (data.Z().transpose() * Eigen::VectorXd::Ones(data.n())) / n;
    return diag;
}

} // namespace logshe
