#pragma once

#include "logshe/operators.hpp"
#include "logshe/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>

namespace logshe {

// theta = (rho, gamma')'
struct Theta {
    double rho = 0.0;
    Eigen::VectorXd gamma;

    int dim() const { return 1 + static_cast<int>(gamma.size()); }
    Eigen::VectorXd full() const;
    static Theta from_full(const Eigen::VectorXd& v);
};

// Observed sample: responses y, design Z, weight matrix W.
class Dataset {
public:
    Dataset(Eigen::VectorXd y, Eigen::MatrixXd Z, WeightMatrix W,
            std::optional<WeightMatrix> W_star = std::nullopt);

    int n() const { return static_cast<int>(y_.size()); }
    int K() const { return static_cast<int>(Z_.cols()); }
    const Eigen::VectorXd& y() const { return y_; }
    const Eigen::MatrixXd& Z() const { return Z_; }
    const WeightMatrix& W() const { return W_; }
    const std::optional<WeightMatrix>& W_star() const { return W_star_; }
    const Eigen::VectorXd& log_y2() const { return log_y2_; }

private:
    Eigen::VectorXd y_;
    Eigen::MatrixXd Z_;
    WeightMatrix W_;
    std::optional<WeightMatrix> W_star_;
    Eigen::VectorXd log_y2_;
};

// Durbin layout builds Z = (1, X, W X); the raw layout takes Z as supplied.
Eigen::MatrixXd durbin_design(const Eigen::MatrixXd& X, const WeightMatrix& W);

struct LogSheModel {
    OperatorFamily family;
    bool durbin = true;

    LogSheModel(OperatorFamily fam, bool durbin_layout = true)
        : family(std::move(fam)), durbin(durbin_layout) {}
};

// h_i(theta) = exp{ Z_i'gamma + [F(rho) log Y^2]_i }
Eigen::VectorXd h_vector(const LogSheModel& model, const Dataset& data, const Theta& theta);

struct ResidualVariance {
    Eigen::VectorXd v2;     // v_i^2(theta) = y_i^2 / h_i(theta)
    Eigen::VectorXd v_star; // v2 - 1
};

ResidualVariance v2_vector(const LogSheModel& model, const Dataset& data, const Theta& theta);

struct SimulationResult {
    Dataset data;
    Eigen::VectorXd v;   // generating errors
    int resampled = 0;   // near-zero draws replaced
};

// draws X ~ N(0,1) per unit (Durbin layout), simulates
//   log Y^2 = Abar(rho0) (Z gamma0 + log V^2),  y_i = sign(v_i) exp(log y_i^2 / 2)
SimulationResult simulate(const OperatorFamily& family, const Theta& theta0, int x_cols,
                          const ErrorDistribution& errors, std::uint64_t seed);

// same DGP with a caller-supplied design matrix
SimulationResult simulate_with_design(const OperatorFamily& family, const Theta& theta0,
                                      const Eigen::MatrixXd& Z, const ErrorDistribution& errors,
                                      std::uint64_t seed);

enum class AlternativeKind { HigherOrder, Generalized };

// SAR-type alternative DGPs used to study the overidentification test:
//   HigherOrder: (I - rho0 M - rho* M*) log Y^2 = Z gamma0 + log V^2
//   Generalized: (I - rho* M* - rho0 M) log Y^2 = Z gamma0 + (I - rho* M*) log V^2
SimulationResult simulate_alternative(AlternativeKind kind, double rho0, double rho_star,
                                      const Eigen::VectorXd& gamma0, int x_cols,
                                      const WeightMatrix& W, const WeightMatrix& W_star,
                                      const ErrorDistribution& errors, std::uint64_t seed);

} // namespace logshe
