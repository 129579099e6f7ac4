#pragma once

#include "logshe/model.hpp"
#include "logshe/moments.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace logshe {

// Quadratic instruments P_1..P_Kp (zero trace) and linear instruments Q.
class MomentSystem {
public:
    MomentSystem(std::vector<Eigen::MatrixXd> P, Eigen::MatrixXd Q);

    int Kp() const { return static_cast<int>(P_.size()); }
    int Kq() const { return static_cast<int>(Q_.cols()); }
    int dim() const { return Kp() + Kq(); }
    const std::vector<Eigen::MatrixXd>& P() const { return P_; }
    const Eigen::MatrixXd& Q() const { return Q_; }
    const Eigen::MatrixXd& diag_P_star() const { return diag_P_star_; } // n x Kp, cols = diag(P_s + P_s')
    const Eigen::MatrixXd& a_star_star() const { return a_star_star_; } // tr(P_i (P_j + P_j'))
    std::uint64_t hash() const { return hash_; }

private:
    std::vector<Eigen::MatrixXd> P_;
    Eigen::MatrixXd Q_;
    Eigen::MatrixXd diag_P_star_;
    Eigen::MatrixXd a_star_star_;
    std::uint64_t hash_ = 0;
};

// P_kappa = W^kappa - (tr W^kappa / n) I for kappa = 1..kappa_max;
// Q = (Z, W Z) dropping duplicated lag columns, or (1, X, WX, W^2 X) under the
// Durbin layout.
MomentSystem default_instruments(const WeightMatrix& W, const Eigen::MatrixXd& Z,
                                 int kappa_max = 4, bool durbin_layout = true);

Eigen::VectorXd moment_vector(const MomentSystem& system, const LogSheModel& model,
                              const Dataset& data, const Theta& theta);

Eigen::MatrixXd moment_jacobian(const MomentSystem& system, const LogSheModel& model,
                                const Dataset& data, const Theta& theta);

struct MomentCovariances {
    Eigen::MatrixXd omega_R; // Var R_n(theta0)
    Eigen::MatrixXd sigma_R; // E dR_n/dtheta'
    bool ridged = false;
    double ridge_lambda = 0.0;
};

MomentCovariances omega_sigma_R(const MomentSystem& system, const LogSheModel& model,
                                const Dataset& data, const Theta& theta, const MomentSet& moments);

struct GmmOptions {
    std::vector<double> rho_starts = {-0.3, 0.0, 0.3};
    double tol = 1e-8;
    int max_iter = 500;
    bool compute_covariance = true;
    std::optional<Theta> start;
};

struct GmmFit {
    Theta theta_hat;
    double objective = 0.0;
    Eigen::MatrixXd covariance;
    Eigen::VectorXd moment_at_opt;  // R_n(theta_hat)
    Eigen::MatrixXd omega_R_hat;    // sample Omega_R at theta_hat
    Eigen::MatrixXd sigma_R_hat;    // sample Sigma_R at theta_hat
    MomentSet moments;
    Eigen::MatrixXd omega_tilde;    // stage-2 weighting is its inverse (OGMM only)
    std::string method = "gmm";
    bool converged = false;
    bool ridged = false;
    int iterations = 0;
    std::uint64_t instrument_hash = 0;
    std::uint64_t weighting_hash = 0; // identifies the Xi actually minimized
    int constraint_cg = 0;            // nonzero for constrained fits
    std::string constraint_desc;
    std::shared_ptr<GmmFit> stage1;

    Eigen::VectorXd standard_errors() const;
};

GmmFit fit_gmm(const MomentSystem& system, const LogSheModel& model, const Dataset& data,
               const Eigen::MatrixXd& Xi, const GmmOptions& options = {});

// identity-weighted first stage, then minimization of R' Omega_tilde^-1 R
GmmFit fit_ogmm(const MomentSystem& system, const LogSheModel& model, const Dataset& data,
                const GmmOptions& options = {});

// weighting matrix hash used to enforce shared-weighting preconditions
std::uint64_t matrix_hash(const Eigen::MatrixXd& m);

// symmetric inverse used as the stage-2 weighting; ridges when not PD
Eigen::MatrixXd inverse_weighting(Eigen::MatrixXd omega, bool* ridged = nullptr);

} // namespace logshe
