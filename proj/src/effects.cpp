#include "logshe/effects.hpp"

#include <Eigen/LU>

#include <cmath>

namespace logshe {

EffectTriple mean_effects(double rho_bar, double beta_k, double beta_mk, const WeightMatrix& W) {
    if (!W.standardized()) throw validation_error("mean_effects: W must be standardized");
    if (std::fabs(rho_bar) >= 1.0) throw validation_error("mean_effects: |rho_bar| must be < 1");
    const int n = W.n();
    Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(n, n) - rho_bar * W.entries();
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(lhs);
    const double logabsdet = lu.matrixLU().diagonal().array().abs().log().sum();
    if (!std::isfinite(logabsdet))
        throw singular_operator_error("mean_effects: I - rho_bar W is singular");

    // S = (I - rho W)^-1 (beta_k I + beta_mk W)
    Eigen::MatrixXd S = lu.solve(beta_k * Eigen::MatrixXd::Identity(n, n) + beta_mk * W.entries());
    EffectTriple e;
    e.ate = S.sum() / n;
    e.ade = S.trace() / n;
    e.aie = e.ate - e.ade;
    return e;
}

EffectTriple variance_effects(const Theta& theta_hat, const Dataset& data,
                              const OperatorFamily& family, int k) {
    const int K = data.K();
    if (K < 3 || K % 2 == 0)
        throw validation_error("variance_effects: Durbin layout (1, X, WX) required");
    const int xc = (K - 1) / 2;
    if (k < 0 || k >= xc) throw validation_error("variance_effects: variable index out of range");
    const double beta_k = theta_hat.gamma[1 + k];
    const double beta_mk = theta_hat.gamma[1 + xc + k];
    const int n = data.n();

    Eigen::MatrixXd Abar = family.evaluate(theta_hat.rho, OperatorPart::AInv);
    Eigen::MatrixXd G =
        Abar * (beta_k * Eigen::MatrixXd::Identity(n, n) + beta_mk * family.weights().entries());
    Eigen::VectorXd y2 = data.y().array().square();

    EffectTriple e;
    e.ate = y2.dot(G * Eigen::VectorXd::Ones(n)) / n;
    e.ade = y2.dot(G.diagonal()) / n;
    e.aie = e.ate - e.ade;
    return e;
}

} // namespace logshe
