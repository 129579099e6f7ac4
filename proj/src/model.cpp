#include "logshe/model.hpp"

#include <Eigen/QR>

#include <cmath>
#include <string>

namespace logshe {

namespace {
// stream tags for seed derivation; fixed so that nesting DGPs with the same
// seed produce identical draws
constexpr std::uint64_t kTagErrors = 0x45525253ull;  // per-unit error stream
constexpr std::uint64_t kTagDesign = 0x58434f4cull;  // per-unit X stream
} // namespace

Eigen::VectorXd Theta::full() const {
    Eigen::VectorXd out(dim());
    out[0] = rho;
    out.tail(gamma.size()) = gamma;
    return out;
}

Theta Theta::from_full(const Eigen::VectorXd& v) {
    Theta t;
    t.rho = v[0];
    t.gamma = v.tail(v.size() - 1);
    return t;
}

Dataset::Dataset(Eigen::VectorXd y, Eigen::MatrixXd Z, WeightMatrix W,
                 std::optional<WeightMatrix> W_star)
    : y_(std::move(y)), Z_(std::move(Z)), W_(std::move(W)), W_star_(std::move(W_star)) {
    const auto n = y_.size();
    if (n < 2) throw validation_error("dataset: need at least 2 units");
    if (Z_.rows() != n) throw validation_error("dataset: Z row count != n");
    if (W_.n() != n) throw validation_error("dataset: weight matrix size != n");
    if (W_star_ && W_star_->n() != n) throw validation_error("dataset: W_star size != n");
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!std::isfinite(y_[i])) throw validation_error("dataset: nonfinite y at row " + std::to_string(i));
        if (y_[i] == 0.0)
            throw validation_error("dataset: y=0 at row " + std::to_string(i) + " (log y^2 undefined)");
    }
    if (!Z_.allFinite()) throw validation_error("dataset: nonfinite design entry");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Z_);
    if (qr.rank() < Z_.cols()) throw validation_error("dataset: design matrix is rank deficient");
    log_y2_ = y_.array().square().log().matrix();
}

Eigen::MatrixXd durbin_design(const Eigen::MatrixXd& X, const WeightMatrix& W) {
    const auto n = X.rows();
    if (W.n() != n) throw validation_error("durbin_design: size mismatch");
    Eigen::MatrixXd Z(n, 1 + 2 * X.cols());
    Z.col(0).setOnes();
    Z.middleCols(1, X.cols()) = X;
    Z.rightCols(X.cols()) = W.entries() * X;
    return Z;
}

Eigen::VectorXd h_vector(const LogSheModel& model, const Dataset& data, const Theta& theta) {
    if (theta.gamma.size() != data.K()) throw validation_error("h_vector: gamma dimension != K");
    model.family.check_admissible(theta.rho);
    // F log Y^2 = log Y^2 - A log Y^2
    Eigen::VectorXd f_logy2 = data.log_y2() - model.family.apply_A(theta.rho, data.log_y2());
    Eigen::VectorXd expo = data.Z() * theta.gamma + f_logy2;
    Eigen::VectorXd h(data.n());
    for (int i = 0; i < data.n(); ++i) {
        h[i] = std::exp(expo[i]);
        if (!std::isfinite(h[i]) || h[i] <= 0.0)
            throw nonfinite_variance_error("h_vector: nonfinite variance at unit " + std::to_string(i));
    }
    return h;
}

ResidualVariance v2_vector(const LogSheModel& model, const Dataset& data, const Theta& theta) {
    Eigen::VectorXd h = h_vector(model, data, theta);
    ResidualVariance rv;
    rv.v2 = (data.y().array().square() / h.array()).matrix();
    rv.v_star = rv.v2.array() - 1.0;
    return rv;
}

namespace {

Eigen::VectorXd draw_errors(const ErrorDistribution& errors, std::uint64_t seed, int n,
                            int& resampled) {
    Rng base = Rng(seed).fork(kTagErrors);
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) {
        Rng stream = base.fork(static_cast<std::uint64_t>(i));
        double draw = errors.draw(stream);
        while (std::fabs(draw) < 1e-300) {
            ++resampled;
            draw = errors.draw(stream);
        }
        v[i] = draw;
    }
    return v;
}

Eigen::MatrixXd draw_design(std::uint64_t seed, int n, int x_cols) {
    Rng base = Rng(seed).fork(kTagDesign);
    Eigen::MatrixXd X(n, x_cols);
    for (int i = 0; i < n; ++i) {
        Rng stream = base.fork(static_cast<std::uint64_t>(i));
        for (int c = 0; c < x_cols; ++c) X(i, c) = stream.next_normal();
    }
    return X;
}

SimulationResult finish_simulation(Eigen::VectorXd log_y2, Eigen::MatrixXd Z, WeightMatrix W,
                                   Eigen::VectorXd v, int resampled,
                                   std::optional<WeightMatrix> W_star = std::nullopt) {
    const auto n = v.size();
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i)
        y[i] = (v[i] < 0.0 ? -1.0 : 1.0) * std::exp(0.5 * log_y2[i]);
    SimulationResult out{Dataset(std::move(y), std::move(Z), std::move(W), std::move(W_star)),
                         std::move(v), resampled};
    return out;
}

} // namespace

SimulationResult simulate_with_design(const OperatorFamily& family, const Theta& theta0,
                                      const Eigen::MatrixXd& Z, const ErrorDistribution& errors,
                                      std::uint64_t seed) {
    family.check_admissible(theta0.rho);
    const int n = family.n();
    if (Z.rows() != n) throw validation_error("simulate: design row count != n");
    if (theta0.gamma.size() != Z.cols()) throw validation_error("simulate: gamma dimension != K");

    int resampled = 0;
    Eigen::VectorXd v = draw_errors(errors, seed, n, resampled);
    Eigen::VectorXd rhs = Z * theta0.gamma + v.array().square().log().matrix();
    Eigen::VectorXd log_y2 = family.apply_A_inv(theta0.rho, rhs);
    return finish_simulation(std::move(log_y2), Z, family.weights(), std::move(v), resampled);
}

SimulationResult simulate(const OperatorFamily& family, const Theta& theta0, int x_cols,
                          const ErrorDistribution& errors, std::uint64_t seed) {
    if (x_cols < 1) throw validation_error("simulate: x_cols must be >= 1");
    const int n = family.n();
    if (theta0.gamma.size() != 1 + 2 * x_cols)
        throw validation_error("simulate: Durbin layout needs dim(gamma) = 1 + 2*x_cols");
    Eigen::MatrixXd X = draw_design(seed, n, x_cols);
    return simulate_with_design(family, theta0, durbin_design(X, family.weights()), errors, seed);
}

SimulationResult simulate_alternative(AlternativeKind kind, double rho0, double rho_star,
                                      const Eigen::VectorXd& gamma0, int x_cols,
                                      const WeightMatrix& W, const WeightMatrix& W_star,
                                      const ErrorDistribution& errors, std::uint64_t seed) {
    const int n = W.n();
    if (W_star.n() != n) throw validation_error("simulate_alternative: W_star size != n");
    if (gamma0.size() != 1 + 2 * x_cols)
        throw validation_error("simulate_alternative: Durbin layout needs dim(gamma) = 1 + 2*x_cols");

    Eigen::MatrixXd X = draw_design(seed, n, x_cols);
    Eigen::MatrixXd Z = durbin_design(X, W);
    int resampled = 0;
    Eigen::VectorXd v = draw_errors(errors, seed, n, resampled);
    Eigen::VectorXd log_v2 = v.array().square().log().matrix();

    Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(n, n) - rho0 * W.entries() -
                          rho_star * W_star.entries();
    Eigen::VectorXd rhs;
    if (kind == AlternativeKind::HigherOrder) {
        rhs = Z * gamma0 + log_v2;
    } else {
        rhs = Z * gamma0 + log_v2 - rho_star * (W_star.entries() * log_v2);
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(lhs);
    const double logabsdet =
        lu.matrixLU().diagonal().array().abs().log().sum();
    if (!std::isfinite(logabsdet) || logabsdet < -40.0 * n)
        throw singular_operator_error("simulate_alternative: DGP system is singular");
    Eigen::VectorXd log_y2 = lu.solve(rhs);
    if (!log_y2.allFinite())
        throw singular_operator_error("simulate_alternative: DGP system is unstable");
    return finish_simulation(std::move(log_y2), std::move(Z), W, std::move(v), resampled, W_star);
}

} // namespace logshe
