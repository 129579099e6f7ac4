#include "logshe/gmm.hpp"

#include "logshe/detail/op_cache.hpp"
#include "logshe/optimize.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/QR>

#include <cmath>
#include <cstring>
#include <limits>

namespace logshe {

namespace {

using detail::OpVectorCache;

std::uint64_t fnv1a(const unsigned char* bytes, size_t len, std::uint64_t h) {
    for (size_t i = 0; i < len; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
    }
    return h;
}

double logit(double p) { return std::log(p / (1.0 - p)); }
double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }

} // namespace

std::uint64_t matrix_hash(const Eigen::MatrixXd& m) {
    std::uint64_t h = 14695981039346656037ull;
    h = fnv1a(reinterpret_cast<const unsigned char*>(m.data()),
              sizeof(double) * static_cast<size_t>(m.size()), h);
    return h;
}

MomentSystem::MomentSystem(std::vector<Eigen::MatrixXd> P, Eigen::MatrixXd Q)
    : P_(std::move(P)), Q_(std::move(Q)) {
    const auto n = Q_.rows();
    if (n < 2) throw validation_error("MomentSystem: empty Q");
    const int kp = Kp();
    diag_P_star_.resize(n, kp);
    for (int s = 0; s < kp; ++s) {
        const Eigen::MatrixXd& Ps = P_[static_cast<size_t>(s)];
        if (Ps.rows() != n || Ps.cols() != n)
            throw validation_error("MomentSystem: P size mismatch");
        if (std::fabs(Ps.trace()) > 1e-10)
            throw validation_error("MomentSystem: P_" + std::to_string(s + 1) + " has nonzero trace");
        diag_P_star_.col(s) = 2.0 * Ps.diagonal();
    }
    a_star_star_.resize(kp, kp);
    for (int i = 0; i < kp; ++i)
        for (int j = i; j < kp; ++j) {
            const double v = (P_[static_cast<size_t>(i)].array() *
                              (P_[static_cast<size_t>(j)] + P_[static_cast<size_t>(j)].transpose())
                                  .transpose()
                                  .array())
                                 .sum();
            a_star_star_(i, j) = v;
            a_star_star_(j, i) = v;
        }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Q_);
    if (qr.rank() < Q_.cols())
        throw instrument_rank_error("MomentSystem: Q has collinear columns");

    std::uint64_t h = 14695981039346656037ull;
    for (const auto& Ps : P_)
        h = fnv1a(reinterpret_cast<const unsigned char*>(Ps.data()),
                  sizeof(double) * static_cast<size_t>(Ps.size()), h);
    h = fnv1a(reinterpret_cast<const unsigned char*>(Q_.data()),
              sizeof(double) * static_cast<size_t>(Q_.size()), h);
    hash_ = h;
}

MomentSystem default_instruments(const WeightMatrix& W, const Eigen::MatrixXd& Z, int kappa_max,
                                 bool durbin_layout) {
    if (!W.standardized()) throw validation_error("default_instruments: W must be standardized");
    if (kappa_max < 1 || kappa_max > 6)
        throw validation_error("default_instruments: kappa_max must be in 1..6");
    const int n = W.n();
    if (Z.rows() != n) throw validation_error("default_instruments: Z row count != n");

    std::vector<Eigen::MatrixXd> P;
    Eigen::MatrixXd Wk = W.entries();
    for (int kappa = 1; kappa <= kappa_max; ++kappa) {
        Eigen::MatrixXd Pk = Wk;
        Pk.diagonal().array() -= Wk.trace() / n;
        P.push_back(std::move(Pk));
        if (kappa < kappa_max) Wk = Wk * W.entries();
    }

    Eigen::MatrixXd Q;
    if (durbin_layout) {
        // Z = (1, X, WX): take Q = (1, X, WX, W^2 X)
        const int K = static_cast<int>(Z.cols());
        if (K < 3 || K % 2 == 0)
            throw validation_error("default_instruments: Durbin layout needs Z = (1, X, WX)");
        const int xc = (K - 1) / 2;
        Q.resize(n, K + xc);
        Q.leftCols(K) = Z;
        Q.rightCols(xc) = W.entries() * Z.rightCols(xc);
    } else {
        // (Z, WZ), dropping lag columns that duplicate existing ones
        // (W 1_n = 1_n under row standardization)
        Eigen::MatrixXd WZ = W.entries() * Z;
        std::vector<int> keep;
        Eigen::MatrixXd cand(n, Z.cols() + WZ.cols());
        cand.leftCols(Z.cols()) = Z;
        cand.rightCols(WZ.cols()) = WZ;
        Eigen::MatrixXd kept(n, cand.cols());
        int kc = 0;
        for (int c = 0; c < cand.cols(); ++c) {
            Eigen::VectorXd col = cand.col(c);
            Eigen::VectorXd resid = col;
            if (kc > 0) {
                Eigen::MatrixXd B = kept.leftCols(kc);
                resid = col - B * B.colPivHouseholderQr().solve(col);
            }
            if (resid.norm() > 1e-8 * std::max(1.0, col.norm())) {
                kept.col(kc++) = col;
            } else if (c < Z.cols()) {
                throw instrument_rank_error("default_instruments: Z columns are collinear");
            }
        }
        Q = kept.leftCols(kc);
    }
    return MomentSystem(std::move(P), std::move(Q));
}

namespace {

struct GmmEval {
    const MomentSystem& system;
    const LogSheModel& model;
    const Dataset& data;
    OpVectorCache cache;

    GmmEval(const MomentSystem& sys, const LogSheModel& mod, const Dataset& dat)
        : system(sys), model(mod), data(dat), cache(mod.family, dat) {}

    Eigen::VectorXd v_star(const OpVectorCache::Vectors& vec, const Theta& theta) const {
        Eigen::VectorXd e = vec.a - data.Z() * theta.gamma;
        Eigen::VectorXd out(e.size());
        for (Eigen::Index i = 0; i < e.size(); ++i) {
            if (e[i] > 700.0)
                throw nonfinite_variance_error("v^2 overflow at unit " + std::to_string(i));
            out[i] = std::exp(e[i]) - 1.0;
        }
        return out;
    }

    Eigen::VectorXd moments(const OpVectorCache::Vectors& vec, const Theta& theta) const {
        Eigen::VectorXd vs = v_star(vec, theta);
        Eigen::VectorXd R(system.dim());
        for (int s = 0; s < system.Kp(); ++s)
            R[s] = vs.dot(system.P()[static_cast<size_t>(s)] * vs);
        R.tail(system.Kq()) = system.Q().transpose() * vs;
        return R;
    }

    Eigen::MatrixXd jacobian(const OpVectorCache::Vectors& vec, const Theta& theta) const {
        Eigen::VectorXd vs = v_star(vec, theta);
        Eigen::VectorXd v2 = vs.array() + 1.0;
        Eigen::VectorXd w1 = v2.array() * vec.adot.array(); // dV*/drho
        const int K = static_cast<int>(theta.gamma.size());
        Eigen::MatrixXd J(system.dim(), K + 1);
        for (int s = 0; s < system.Kp(); ++s) {
            const Eigen::MatrixXd& Ps = system.P()[static_cast<size_t>(s)];
            Eigen::VectorXd pv = Ps * vs + Ps.transpose() * vs; // P* v*
            J(s, 0) = w1.dot(pv);
            J.block(s, 1, 1, K) =
                -(data.Z().transpose() * (v2.array() * pv.array()).matrix()).transpose();
        }
        J.block(system.Kp(), 0, system.Kq(), 1) = system.Q().transpose() * w1;
        J.block(system.Kp(), 1, system.Kq(), K) =
            -system.Q().transpose() * v2.asDiagonal() * data.Z();
        return J;
    }
};

} // namespace

Eigen::VectorXd moment_vector(const MomentSystem& system, const LogSheModel& model,
                              const Dataset& data, const Theta& theta) {
    GmmEval ev(system, model, data);
    return ev.moments(ev.cache.at(theta.rho), theta);
}

Eigen::MatrixXd moment_jacobian(const MomentSystem& system, const LogSheModel& model,
                                const Dataset& data, const Theta& theta) {
    GmmEval ev(system, model, data);
    return ev.jacobian(ev.cache.at(theta.rho), theta);
}

MomentCovariances omega_sigma_R(const MomentSystem& system, const LogSheModel& model,
                                const Dataset& data, const Theta& theta,
                                const MomentSet& mom) {
    const int kp = system.Kp();
    const int kq = system.Kq();
    const int K = data.K();
    const Eigen::MatrixXd& Q = system.Q();
    const Eigen::MatrixXd& Z = data.Z();

    MomentCovariances out;
    const double s2 = mom.sigma2, s4 = s2 * s2, ss2 = mom.sigma_star2;

    // b: n x Kp matrix with columns diag(P_s)
    Eigen::MatrixXd b = 0.5 * system.diag_P_star();
    out.omega_R.resize(kp + kq, kp + kq);
    out.omega_R.topLeftCorner(kp, kp) =
        (mom.mu4 - 3.0 * s4) * (b.transpose() * b) + s4 * system.a_star_star();
    out.omega_R.topRightCorner(kp, kq) = mom.mu3 * (b.transpose() * Q);
    out.omega_R.bottomLeftCorner(kq, kp) = out.omega_R.topRightCorner(kp, kq).transpose();
    out.omega_R.bottomRightCorner(kq, kq) = s2 * (Q.transpose() * Q);

    // ridge regularization for near-singular Omega_R
    Eigen::LLT<Eigen::MatrixXd> llt(out.omega_R);
    if (llt.info() != Eigen::Success) {
        out.ridged = true;
        out.ridge_lambda = 1e-8 * out.omega_R.trace() / out.omega_R.rows();
        out.omega_R.diagonal().array() += out.ridge_lambda;
    }

    Eigen::MatrixXd As = model.family.a_star_dense(theta.rho);
    Eigen::VectorXd dA = As.diagonal();
    Eigen::VectorXd r = As.rowwise().sum();
    Eigen::VectorXd m = As * (Z * theta.gamma);

    out.sigma_R.resize(kp + kq, K + 1);
    for (int s = 0; s < kp; ++s) {
        const Eigen::MatrixXd& Ps = system.P()[static_cast<size_t>(s)];
        const double tr_ps_astar =
            ((Ps + Ps.transpose()).array() * As.transpose().array()).sum();
        Eigen::VectorXd dPs = system.diag_P_star().col(s);
        out.sigma_R(s, 0) = mom.d_e * ss2 * tr_ps_astar + s2 * dPs.dot(m + mom.b_e * r) +
                            (mom.a_e + mom.d_e * (1.0 - ss2) - s2 * mom.b_e) * dPs.dot(dA);
        out.sigma_R.block(s, 1, 1, K) = -s2 * (Z.transpose() * dPs).transpose();
    }
    Eigen::VectorXd z_star = ss2 * m + ss2 * mom.b_e * r + mom.f_e_star * dA;
    out.sigma_R.block(kp, 0, kq, 1) = Q.transpose() * z_star;
    out.sigma_R.block(kp, 1, kq, K) = -ss2 * (Q.transpose() * Z);
    return out;
}

Eigen::VectorXd GmmFit::standard_errors() const {
    if (covariance.size() == 0) return Eigen::VectorXd();
    return covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
}

GmmFit fit_gmm(const MomentSystem& system, const LogSheModel& model, const Dataset& data,
               const Eigen::MatrixXd& Xi, const GmmOptions& options) {
    const int K = data.K();
    if (system.dim() < K + 1)
        throw validation_error("fit_gmm: order condition fails, Kp+Kq < K+1");
    if (Xi.rows() != system.dim() || Xi.cols() != system.dim())
        throw validation_error("fit_gmm: weighting matrix dimension mismatch");

    const OperatorFamily& fam = model.family;
    const RhoInterval iv = fam.interval();
    const double width = iv.hi - iv.lo;
    GmmEval ev(system, model, data);

    Eigen::VectorXd gamma0 = data.Z().colPivHouseholderQr().solve(data.log_y2());

    // the optimizer sees D/n^2 so step and tolerance scales are n-free
    const double scale = 1.0 / (static_cast<double>(data.n()) * data.n());
    auto objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
        Theta theta;
        const double s = sigmoid(x[0]);
        theta.rho = iv.lo + width * s;
        theta.gamma = x.tail(K);
        auto vec = ev.cache.at(theta.rho);
        Eigen::VectorXd R = ev.moments(vec, theta);
        if (grad) {
            Eigen::MatrixXd J = ev.jacobian(vec, theta);
            Eigen::VectorXd g = (2.0 * scale) * (J.transpose() * (Xi * R));
            grad->resize(K + 1);
            (*grad)[0] = g[0] * width * s * (1.0 - s);
            grad->tail(K) = g.tail(K);
        }
        return scale * R.dot(Xi * R);
    };

    std::vector<Eigen::VectorXd> starts;
    auto push_start = [&](double rho_s, const Eigen::VectorXd& g) {
        Eigen::VectorXd x(K + 1);
        x[0] = logit((iv.clamp_interior(rho_s, 0.05 * width) - iv.lo) / width);
        x.tail(K) = g;
        starts.push_back(x);
    };
    if (options.start) {
        push_start(options.start->rho, options.start->gamma);
    } else {
        for (double rho_s : options.rho_starts) {
            const double rs = iv.clamp_interior(rho_s, 0.05 * width);
            push_start(rho_s, detail::centered_start(ev.cache, rs, data.Z(), gamma0));
        }
    }

    OptimOptions oopt;
    oopt.grad_tol = options.tol;
    oopt.max_iter = options.max_iter;

    GmmFit best;
    best.objective = std::numeric_limits<double>::infinity();
    bool any = false;
    for (const auto& x0 : starts) {
        OptimResult r;
        try {
            r = bfgs_minimize(objective, x0, oopt);
        } catch (const numerical_error&) {
            continue;
        }
        if (!any || r.f < best.objective ||
            (r.converged && !best.converged && r.f <= best.objective + 1e-12)) {
            any = true;
            best.theta_hat.rho = iv.lo + width * sigmoid(r.x[0]);
            best.theta_hat.gamma = r.x.tail(K);
            best.objective = r.f;
            best.converged = r.converged;
            best.iterations = r.iterations;
        }
    }
    if (!any) throw fit_error("fit_gmm: every start point failed to evaluate");
    best.objective /= scale; // report the unscaled R' Xi R

    best.method = "gmm";
    best.instrument_hash = system.hash();
    best.weighting_hash = matrix_hash(Xi);
    best.moment_at_opt = moment_vector(system, model, data, best.theta_hat);

    Eigen::VectorXd v2 =
        v2_vector(model, data, best.theta_hat).v2;
    best.moments = estimate_moments(v2, MomentMode::Sample);

    if (options.compute_covariance) {
        MomentCovariances mc = omega_sigma_R(system, model, data, best.theta_hat, best.moments);
        best.omega_R_hat = mc.omega_R;
        best.sigma_R_hat = mc.sigma_R;
        best.ridged = mc.ridged;
        // sandwich covariance for a general weighting
        Eigen::MatrixXd SX = best.sigma_R_hat.transpose() * Xi;
        Eigen::MatrixXd G1 = SX * best.sigma_R_hat;
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(G1);
        Eigen::MatrixXd inner = SX * best.omega_R_hat * SX.transpose();
        Eigen::MatrixXd cov = lu.solve(inner) * lu.inverse().transpose();
        best.covariance = 0.5 * (cov + cov.transpose());
    }
    return best;
}

Eigen::MatrixXd inverse_weighting(Eigen::MatrixXd omega, bool* ridged) {
    Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(omega.rows(), omega.cols());
    Eigen::LLT<Eigen::MatrixXd> llt(omega);
    if (llt.info() != Eigen::Success) {
        if (ridged) *ridged = true;
        omega.diagonal().array() += 1e-6 * omega.trace() / omega.rows();
        llt.compute(omega);
        if (llt.info() != Eigen::Success)
            throw numerical_error("inverse_weighting: Omega not positive definite");
    }
    Eigen::MatrixXd Xi = llt.solve(identity);
    return 0.5 * (Xi + Xi.transpose());
}

GmmFit fit_ogmm(const MomentSystem& system, const LogSheModel& model, const Dataset& data,
                const GmmOptions& options) {
    GmmOptions stage1_opts = options;
    stage1_opts.compute_covariance = false;
    Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(system.dim(), system.dim());
    GmmFit stage1 = fit_gmm(system, model, data, identity, stage1_opts);

    MomentCovariances tilde =
        omega_sigma_R(system, model, data, stage1.theta_hat, stage1.moments);
    bool rflag = tilde.ridged;
    Eigen::MatrixXd Xi2 = inverse_weighting(tilde.omega_R, &rflag);

    GmmOptions stage2_opts = options;
    stage2_opts.start = stage1.theta_hat;
    GmmFit fit = fit_gmm(system, model, data, Xi2, stage2_opts);
    // also try the default starts if stage-2 from stage-1 did not converge
    if (!fit.converged) {
        GmmOptions retry = options;
        retry.start.reset();
        GmmFit alt = fit_gmm(system, model, data, Xi2, retry);
        if (alt.objective < fit.objective || (alt.converged && !fit.converged)) fit = alt;
    }
    fit.method = "ogmm";
    fit.ridged = fit.ridged || rflag;
    fit.omega_tilde = tilde.omega_R;
    fit.stage1 = std::make_shared<GmmFit>(std::move(stage1));

    if (options.compute_covariance) {
        // optimal-weighting covariance (S' O^-1 S)^-1 with Omega, Sigma re-estimated at theta_hat
        Eigen::LLT<Eigen::MatrixXd> llt2(fit.omega_R_hat);
        if (llt2.info() == Eigen::Success) {
            Eigen::MatrixXd OS = llt2.solve(fit.sigma_R_hat);
            Eigen::MatrixXd H = fit.sigma_R_hat.transpose() * OS;
            Eigen::MatrixXd cov = Eigen::PartialPivLU<Eigen::MatrixXd>(H).inverse();
            fit.covariance = 0.5 * (cov + cov.transpose());
        }
    }
    return fit;
}

} // namespace logshe
