#pragma once

#include "logshe/model.hpp"
#include "logshe/moments.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace logshe {

double log_likelihood(const LogSheModel& model, const Dataset& data, const Theta& theta);
Eigen::VectorXd score(const LogSheModel& model, const Dataset& data, const Theta& theta);
Eigen::MatrixXd hessian(const LogSheModel& model, const Dataset& data, const Theta& theta);

struct MLOptions {
    std::vector<double> rho_starts = {-0.3, 0.0, 0.3};
    double tol = 1e-6;
    int max_iter = 500;
    MomentMode moment_mode = MomentMode::Sample;
    bool compute_covariance = true;
    std::optional<double> rho_fixed; // restrict the fit to a known rho
    std::optional<Theta> start;      // overrides the default multi-start
};

struct MLFit {
    Theta theta_hat;
    double loglik = 0.0;
    Eigen::MatrixXd covariance; // (K+1)x(K+1); empty for 2SML
    double score_norm_at_opt = 0.0;
    MomentSet moments;
    bool converged = false;
    bool boundary_warning = false;
    int iterations = 0;
    std::string method = "ml";

    Eigen::VectorXd standard_errors() const;
};

MLFit fit_ml(const LogSheModel& model, const Dataset& data, const MLOptions& options = {});

// two-step ML benchmark (Durbin layout only); reports no covariance
MLFit fit_2sml(const LogSheModel& model, const Dataset& data, const MLOptions& options = {});

struct ConsistencyDiagnostic {
    double term1 = 0.0;       // {E[(1-v^2)log v^2]+2} tr(Adot Ainv)/n
    Eigen::VectorXd term2;    // E(v^2-1) Z'1/n
};

ConsistencyDiagnostic consistency_diagnostic(const MLFit& fit, const LogSheModel& model,
                                             const Dataset& data);

// Omega_0n = E[s s'] and Sigma_0n = E[-Hessian] at theta, assembled from the
// moment set; covariance of theta_hat is Sigma^-1 Omega Sigma^-1.
struct MlInformation {
    Eigen::MatrixXd omega;
    Eigen::MatrixXd sigma;
};

MlInformation ml_information(const LogSheModel& model, const Dataset& data, const Theta& theta,
                             const MomentSet& moments);

} // namespace logshe
