#include "logshe/operators.hpp"

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

namespace logshe {

OperatorFamily::OperatorFamily(FamilyKind kind, WeightMatrix W, int sme_truncation,
                               double sme_box, bool force_lu_fallback)
    : kind_(kind), W_(std::move(W)), truncation_(sme_truncation),
      lu_fallback_(force_lu_fallback) {
    if (!W_.standardized()) throw validation_error("OperatorFamily: weight matrix must be standardized");
    if (kind_ == FamilyKind::SME && truncation_ < 4)
        throw validation_error("OperatorFamily: sme_truncation must be >= 4");
    if (kind_ != FamilyKind::SME) {
        if (!lu_fallback_) {
            try {
                eigvals_ = weight_eigenvalues(W_);
            } catch (const numerical_error&) {
                lu_fallback_ = true;
            }
        }
        if (lu_fallback_) {
            // row standardization bounds the spectral radius by one, so the
            // conservative interval (-1, 1) stays admissible
            interval_ = {-1.0, 1.0};
        } else {
            interval_ = rho_interval(W_, kind_, sme_box);
        }
    } else {
        interval_ = rho_interval(W_, kind_, sme_box);
        // cache W^1..W^truncation for dense series evaluation
        powers_.reserve(static_cast<size_t>(truncation_));
        powers_.push_back(W_.entries());
        for (int i = 1; i < truncation_; ++i) powers_.push_back(powers_.back() * W_.entries());
    }
}

void OperatorFamily::check_admissible(double rho) const {
    if (!std::isfinite(rho) || !interval_.contains(rho))
        throw std::domain_error("rho=" + std::to_string(rho) + " outside admissible interval (" +
                                std::to_string(interval_.lo) + ", " + std::to_string(interval_.hi) + ")");
}

const Eigen::MatrixXd& OperatorFamily::power(int i) const {
    return powers_[static_cast<size_t>(i - 1)];
}

std::vector<double> OperatorFamily::series_coefficients(double rho, int deriv_order) const {
    // d^m/drho^m sum_{i=0}^{p} rho^i W^i / i!  =  sum_{i=m}^{p} rho^(i-m) W^i / (i-m)!
    std::vector<double> coeff(static_cast<size_t>(truncation_) + 1, 0.0);
    for (int i = deriv_order; i <= truncation_; ++i) {
        double c = 1.0;
        for (int j = 1; j <= i - deriv_order; ++j) c *= rho / j;
        coeff[static_cast<size_t>(i)] = c;
    }
    return coeff;
}

Eigen::MatrixXd OperatorFamily::sme_series(double rho, int deriv_order) const {
    const int n = W_.n();
    const auto coeff = series_coefficients(rho, deriv_order);
    Eigen::MatrixXd out = coeff[0] * Eigen::MatrixXd::Identity(n, n);
    for (int i = 1; i <= truncation_; ++i)
        if (coeff[static_cast<size_t>(i)] != 0.0) out += coeff[static_cast<size_t>(i)] * power(i);
    return out;
}

Eigen::MatrixXd OperatorFamily::evaluate(double rho, OperatorPart part) const {
    check_admissible(rho);
    const int n = W_.n();
    const Eigen::MatrixXd& M = W_.entries();
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);

    switch (kind_) {
    case FamilyKind::SAR: {
        switch (part) {
        case OperatorPart::A: return I - rho * M;
        case OperatorPart::F: return rho * M;
        case OperatorPart::ADot: return -M;
        case OperatorPart::ADdot: return Eigen::MatrixXd::Zero(n, n);
        case OperatorPart::AInv: {
            for (Eigen::Index i = 0; i < eigvals_.size(); ++i)
                if (std::abs(1.0 - rho * eigvals_[i]) < 1e-12)
                    throw singular_operator_error("I - rho*W numerically singular at rho=" + std::to_string(rho));
            return Eigen::PartialPivLU<Eigen::MatrixXd>(I - rho * M).inverse();
        }
        }
        break;
    }
    case FamilyKind::SMA: {
        for (Eigen::Index i = 0; i < eigvals_.size(); ++i)
            if (std::abs(1.0 - rho * eigvals_[i]) < 1e-12)
                throw singular_operator_error("I - rho*W numerically singular at rho=" + std::to_string(rho));
        switch (part) {
        case OperatorPart::AInv: return I - rho * M;
        case OperatorPart::A: return Eigen::PartialPivLU<Eigen::MatrixXd>(I - rho * M).inverse();
        case OperatorPart::F: return I - evaluate(rho, OperatorPart::A);
        case OperatorPart::ADot: {
            Eigen::MatrixXd A = evaluate(rho, OperatorPart::A);
            return A * M * A;
        }
        case OperatorPart::ADdot: {
            Eigen::MatrixXd A = evaluate(rho, OperatorPart::A);
            Eigen::MatrixXd AM = A * M;
            return 2.0 * AM * AM * A;
        }
        }
        break;
    }
    case FamilyKind::SME: {
        switch (part) {
        case OperatorPart::A: return sme_series(rho, 0);
        case OperatorPart::AInv: return sme_series(-rho, 0);
        case OperatorPart::F: return Eigen::MatrixXd(I - sme_series(rho, 0));
        case OperatorPart::ADot: return sme_series(rho, 1);
        case OperatorPart::ADdot: return sme_series(rho, 2);
        }
        break;
    }
    }
    throw std::logic_error("unreachable operator part");
}

double OperatorFamily::log_det_lu(double rho) const {
    const int n = W_.n();
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(Eigen::MatrixXd::Identity(n, n) -
                                            rho * W_.entries());
    double sum = 0.0;
    double sign = lu.permutationP().determinant() > 0 ? 1.0 : -1.0;
    for (int i = 0; i < n; ++i) {
        const double u = lu.matrixLU()(i, i);
        if (std::fabs(u) < 1e-300)
            throw singular_operator_error("det A(rho) vanishes at rho=" + std::to_string(rho));
        if (u < 0.0) sign = -sign;
        sum += std::log(std::fabs(u));
    }
    if (sign <= 0.0)
        throw determinant_sign_error("det A(rho) not positive at rho=" + std::to_string(rho));
    return sum;
}

double OperatorFamily::log_det_A(double rho) const {
    check_admissible(rho);
    if (kind_ == FamilyKind::SME) return rho * W_.entries().trace(); // = 0, zero diagonal
    if (lu_fallback_) {
        const double sum = log_det_lu(rho);
        return kind_ == FamilyKind::SAR ? sum : -sum;
    }
    double sum = 0.0;
    for (Eigen::Index i = 0; i < eigvals_.size(); ++i) {
        const std::complex<double> term = 1.0 - rho * eigvals_[i];
        if (std::abs(eigvals_[i].imag()) <= 1e-10 && term.real() <= 0.0)
            throw determinant_sign_error("det A(rho) not positive at rho=" + std::to_string(rho) +
                                         " (eigenvalue " + std::to_string(eigvals_[i].real()) + ")");
        if (std::abs(term) < 1e-300)
            throw singular_operator_error("det A(rho) vanishes at rho=" + std::to_string(rho));
        sum += std::log(std::abs(term));
    }
    return kind_ == FamilyKind::SAR ? sum : -sum;
}

double OperatorFamily::trace_Adot_Ainv(double rho) const {
    check_admissible(rho);
    if (kind_ == FamilyKind::SME) return 0.0; // tr(W) = 0
    if (lu_fallback_) {
        const int n = W_.n();
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(Eigen::MatrixXd::Identity(n, n) -
                                                rho * W_.entries());
        const double tr = lu.solve(W_.entries()).trace();
        return kind_ == FamilyKind::SAR ? -tr : tr;
    }
    std::complex<double> sum = 0.0;
    for (Eigen::Index i = 0; i < eigvals_.size(); ++i)
        sum += eigvals_[i] / (1.0 - rho * eigvals_[i]);
    return kind_ == FamilyKind::SAR ? -sum.real() : sum.real();
}

double OperatorFamily::log_det_second_deriv(double rho) const {
    check_admissible(rho);
    if (kind_ == FamilyKind::SME) return 0.0;
    if (lu_fallback_) {
        const int n = W_.n();
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(Eigen::MatrixXd::Identity(n, n) -
                                                rho * W_.entries());
        Eigen::MatrixXd Y = lu.solve(W_.entries()); // Ainv W
        const double tr = (Y.array() * Y.transpose().array()).sum();
        return kind_ == FamilyKind::SAR ? -tr : tr;
    }
    std::complex<double> sum = 0.0;
    for (Eigen::Index i = 0; i < eigvals_.size(); ++i) {
        const std::complex<double> q = eigvals_[i] / (1.0 - rho * eigvals_[i]);
        sum += q * q;
    }
    // SAR: -tr((W Ainv)^2); SMA: +tr((Ainv W)^2)
    return kind_ == FamilyKind::SAR ? -sum.real() : sum.real();
}

Eigen::MatrixXd OperatorFamily::a_star_dense(double rho) const {
    check_admissible(rho);
    const Eigen::MatrixXd& M = W_.entries();
    const int n = W_.n();
    switch (kind_) {
    case FamilyKind::SAR: {
        // -W (I - rho W)^-1
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(Eigen::MatrixXd::Identity(n, n) - rho * M);
        return Eigen::MatrixXd(-M * lu.inverse());
    }
    case FamilyKind::SMA: {
        // Adot*Ainv = A*W = (I - rho W)^-1 W
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(Eigen::MatrixXd::Identity(n, n) - rho * M);
        return lu.solve(M);
    }
    case FamilyKind::SME:
        return Eigen::MatrixXd(sme_series(rho, 1) * sme_series(-rho, 0));
    }
    throw std::logic_error("unreachable");
}

Eigen::VectorXd OperatorFamily::apply_A(double rho, const Eigen::VectorXd& v) const {
    check_admissible(rho);
    const Eigen::MatrixXd& M = W_.entries();
    switch (kind_) {
    case FamilyKind::SAR: return v - rho * (M * v);
    case FamilyKind::SMA: {
        const int n = W_.n();
        return Eigen::PartialPivLU<Eigen::MatrixXd>(Eigen::MatrixXd::Identity(n, n) - rho * M).solve(v);
    }
    case FamilyKind::SME: {
        const auto coeff = series_coefficients(rho, 0);
        Eigen::VectorXd acc = coeff[0] * v;
        Eigen::VectorXd wv = v;
        for (int i = 1; i <= truncation_; ++i) {
            wv = M * wv;
            acc += coeff[static_cast<size_t>(i)] * wv;
        }
        return acc;
    }
    }
    throw std::logic_error("unreachable");
}

Eigen::VectorXd OperatorFamily::apply_A_inv(double rho, const Eigen::VectorXd& v) const {
    check_admissible(rho);
    const Eigen::MatrixXd& M = W_.entries();
    switch (kind_) {
    case FamilyKind::SAR: {
        const int n = W_.n();
        return Eigen::PartialPivLU<Eigen::MatrixXd>(Eigen::MatrixXd::Identity(n, n) - rho * M).solve(v);
    }
    case FamilyKind::SMA: return v - rho * (M * v);
    case FamilyKind::SME: return apply_A(-rho, v);
    }
    throw std::logic_error("unreachable");
}

} // namespace logshe
