#pragma once

#include "logshe/weights.hpp"

#include <Eigen/Dense>

#include <vector>

namespace logshe {

enum class OperatorPart { A, F, AInv, ADot, ADdot };

// One of the operator families A_n(rho):
//   SAR: A = I - rho*W          SMA: A = (I - rho*W)^-1       SME: A = Exp(rho*W)
// normalized so A(0) = I. The SME exponential is truncated at `sme_truncation`
// terms and the same truncation is used for A, its inverse, and the rho
// derivatives, so d/drho of the truncated A is reproduced exactly.
class OperatorFamily {
public:
    // force_lu_fallback routes log-det work through dense LU factorizations,
    // the same path taken when the eigensolver fails to converge on W
    OperatorFamily(FamilyKind kind, WeightMatrix W, int sme_truncation = 10,
                   double sme_box = 2.0, bool force_lu_fallback = false);

    FamilyKind kind() const { return kind_; }
    const WeightMatrix& weights() const { return W_; }
    int n() const { return W_.n(); }
    int sme_truncation() const { return truncation_; }
    const RhoInterval& interval() const { return interval_; }
    const Eigen::VectorXcd& eigenvalues() const { return eigvals_; }
    bool lu_fallback() const { return lu_fallback_; }

    void check_admissible(double rho) const;

    Eigen::MatrixXd evaluate(double rho, OperatorPart part) const;

    // log det A(rho); exactly 0 for SME since tr(W) = 0
    double log_det_A(double rho) const;
    // tr(Adot * Ainv) = d/drho log det A; exactly 0 for SME
    double trace_Adot_Ainv(double rho) const;
    // d^2/drho^2 log det A = tr(Addot*Ainv - (Adot*Ainv)^2); exactly 0 for SME
    double log_det_second_deriv(double rho) const;

    // A*(rho) = Adot(rho) * Ainv(rho), dense
    Eigen::MatrixXd a_star_dense(double rho) const;

    // matrix-free applications used in estimation hot paths
    Eigen::VectorXd apply_A(double rho, const Eigen::VectorXd& v) const;
    Eigen::VectorXd apply_A_inv(double rho, const Eigen::VectorXd& v) const;

    // SME power-series coefficients of A at the configured truncation:
    // A = sum_i coeff[i] W^i (coeff[0] multiplies I)
    std::vector<double> series_coefficients(double rho, int deriv_order) const;

private:
    Eigen::MatrixXd sme_series(double rho, int deriv_order) const;
    const Eigen::MatrixXd& power(int i) const;
    double log_det_lu(double rho) const;

    FamilyKind kind_;
    WeightMatrix W_;
    int truncation_;
    RhoInterval interval_;
    Eigen::VectorXcd eigvals_;             // SAR/SMA only, empty under LU fallback
    std::vector<Eigen::MatrixXd> powers_;  // SME only: W^1 .. W^(truncation)
    bool lu_fallback_ = false;
};

} // namespace logshe
