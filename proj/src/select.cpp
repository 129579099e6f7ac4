#include "logshe/select.hpp"

#include "logshe/special.hpp"

#include <algorithm>
#include <cmath>

namespace logshe {

namespace {

struct Design {
    Eigen::MatrixXd Z;
    std::vector<std::string> names;
};

Design full_design(const Eigen::MatrixXd& X, const WeightMatrix& W, bool with_x) {
    Design d;
    const auto n = X.rows();
    if (!with_x) {
        d.Z = Eigen::MatrixXd::Ones(n, 1);
        d.names = {"intercept"};
        return d;
    }
    d.Z = durbin_design(X, W);
    d.names.emplace_back("intercept");
    for (int c = 0; c < X.cols(); ++c) d.names.push_back("x" + std::to_string(c + 1));
    for (int c = 0; c < X.cols(); ++c) d.names.push_back("Wx" + std::to_string(c + 1));
    return d;
}

} // namespace

SelectionReport bic_select(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                           const WeightMatrix& W, const BicOptions& options) {
    const int n = static_cast<int>(y.size());
    if (X.rows() != n) throw validation_error("bic_select: X row count != n");
    if (options.families.empty() || options.with_x.empty())
        throw validation_error("bic_select: empty candidate grid");
    const double alpha = options.alpha;
    const MLOptions& base_options = options.fit;

    SelectionReport report;
    for (FamilyKind kind : options.families) {
        for (bool with_x : options.with_x) {
            OperatorFamily family(kind, W, options.sme_truncation);
            LogSheModel model(family, with_x);
            Design design = full_design(X, W, with_x);

            FittedCandidate cand;
            cand.family = kind;
            cand.with_x = with_x;

            std::vector<int> active(design.names.size());
            for (size_t i = 0; i < active.size(); ++i) active[i] = static_cast<int>(i);
            bool rho_active = true;

            MLFit fit;
            for (;;) {
                Eigen::MatrixXd Zsub(n, static_cast<Eigen::Index>(active.size()));
                for (size_t c = 0; c < active.size(); ++c) Zsub.col(static_cast<Eigen::Index>(c)) = design.Z.col(active[c]);
                Dataset data(y, Zsub, W);
                MLOptions opts = base_options;
                opts.compute_covariance = true;
                if (!rho_active) opts.rho_fixed = 0.0;
                fit = fit_ml(model, data, opts);

                // p-values from z statistics; candidates: rho and every column
                Eigen::VectorXd se = fit.standard_errors();
                double worst_p = -1.0;
                int worst_idx = -2; // -1 = rho, >= 0 = column position
                auto consider = [&](int idx, double est, double sd) {
                    if (!(sd > 0.0)) return;
                    const double p = 2.0 * (1.0 - normal_cdf(std::fabs(est / sd)));
                    if (p > worst_p) {
                        worst_p = p;
                        worst_idx = idx;
                    }
                };
                if (rho_active) consider(-1, fit.theta_hat.rho, se[0]);
                for (size_t c = 0; c < active.size(); ++c)
                    consider(static_cast<int>(c), fit.theta_hat.gamma[static_cast<Eigen::Index>(c)],
                             se[static_cast<Eigen::Index>(c + 1)]);

                if (worst_idx == -2 || worst_p <= alpha) break; // all significant

                if (worst_idx == -1) {
                    rho_active = false;
                    cand.steps.push_back({"rho", worst_p});
                    continue;
                }
                // refuse to drop the last remaining column: keep the intercept
                if (active.size() == 1) {
                    cand.degenerate = true;
                    break;
                }
                cand.steps.push_back({design.names[static_cast<size_t>(active[static_cast<size_t>(worst_idx)])], worst_p});
                active.erase(active.begin() + worst_idx);
            }

            cand.loglik = fit.loglik;
            cand.rho_kept = rho_active;
            cand.free_parameters = static_cast<int>(active.size()) + (rho_active ? 1 : 0);
            cand.bic = -2.0 * fit.loglik + cand.free_parameters * std::log(static_cast<double>(n));
            for (int idx : active) cand.kept.push_back(design.names[static_cast<size_t>(idx)]);
            cand.theta_hat = fit.theta_hat;
            report.candidates.push_back(std::move(cand));
        }
    }
    for (size_t i = 0; i < report.candidates.size(); ++i)
        if (report.best_index < 0 ||
            report.candidates[i].bic < report.candidates[static_cast<size_t>(report.best_index)].bic)
            report.best_index = static_cast<int>(i);
    return report;
}

} // namespace logshe
