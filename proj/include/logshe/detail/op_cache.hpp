#pragma once

#include "logshe/model.hpp"

#include <Eigen/Dense>
#include <Eigen/LU>

#include <vector>

namespace logshe::detail {

// Per-dataset cache of A(rho) log Y^2 and its rho derivatives. SAR needs one
// W log Y^2 product, SME one Krylov ladder W^i log Y^2; SMA factors
// (I - rho W) per evaluation.
class OpVectorCache {
public:
    OpVectorCache(const OperatorFamily& fam, const Dataset& data) : fam_(fam), data_(data) {
        const Eigen::MatrixXd& W = fam.weights().entries();
        if (fam.kind() == FamilyKind::SAR) {
            w_logy2_ = W * data.log_y2();
        } else if (fam.kind() == FamilyKind::SME) {
            pow_logy2_.reserve(static_cast<size_t>(fam.sme_truncation()) + 1);
            pow_logy2_.push_back(data.log_y2());
            for (int i = 1; i <= fam.sme_truncation(); ++i)
                pow_logy2_.push_back(W * pow_logy2_.back());
        }
    }

    struct Vectors {
        Eigen::VectorXd a;     // A(rho) log Y^2
        Eigen::VectorXd adot;  // Adot(rho) log Y^2
        Eigen::VectorXd addot; // Addot(rho) log Y^2
    };

    Vectors at(double rho) const {
        fam_.check_admissible(rho);
        const int n = data_.n();
        Vectors v;
        switch (fam_.kind()) {
        case FamilyKind::SAR:
            v.a = data_.log_y2() - rho * w_logy2_;
            v.adot = -w_logy2_;
            v.addot = Eigen::VectorXd::Zero(n);
            break;
        case FamilyKind::SMA: {
            const Eigen::MatrixXd& W = fam_.weights().entries();
            Eigen::PartialPivLU<Eigen::MatrixXd> lu(Eigen::MatrixXd::Identity(n, n) - rho * W);
            v.a = lu.solve(data_.log_y2());
            v.adot = lu.solve(W * v.a);
            v.addot = 2.0 * lu.solve(W * v.adot);
            break;
        }
        case FamilyKind::SME:
            v.a = series(rho, 0);
            v.adot = series(rho, 1);
            v.addot = series(rho, 2);
            break;
        }
        return v;
    }

    const OperatorFamily& family() const { return fam_; }
    const Dataset& data() const { return data_; }

private:
    Eigen::VectorXd series(double rho, int order) const {
        const auto coeff = fam_.series_coefficients(rho, order);
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(data_.n());
        for (size_t i = 0; i < coeff.size(); ++i)
            if (coeff[i] != 0.0) acc += coeff[i] * pow_logy2_[i];
        return acc;
    }

    const OperatorFamily& fam_;
    const Dataset& data_;
    Eigen::VectorXd w_logy2_;
    std::vector<Eigen::VectorXd> pow_logy2_;
};

// OLS coefficients with the intercept recentred so that the implied v^2(start)
// averages to one; keeps initial moment/likelihood gradients at a sane scale
inline Eigen::VectorXd centered_start(const OpVectorCache& cache, double rho,
                                      const Eigen::MatrixXd& Z,
                                      const Eigen::VectorXd& gamma_ols) {
    Eigen::VectorXd g = gamma_ols;
    if (Z.cols() == 0 || (Z.col(0).array() - 1.0).abs().maxCoeff() > 0.0) return g;
    Eigen::VectorXd resid = cache.at(rho).a - Z * g;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < resid.size(); ++i)
        acc += std::exp(std::min(resid[i], 40.0));
    g[0] += std::log(acc / static_cast<double>(resid.size()));
    return g;
}

} // namespace logshe::detail
