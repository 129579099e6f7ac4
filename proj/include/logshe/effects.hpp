#pragma once

#include "logshe/model.hpp"

namespace logshe {

struct EffectTriple {
    double ate = 0.0;
    double ade = 0.0;
    double aie = 0.0; // always ate - ade
};

// effects of variable k on the response mean under the spatial Durbin mean
// model with externally supplied parameters
EffectTriple mean_effects(double rho_bar, double beta_k, double beta_mk, const WeightMatrix& W);

// effects of variable k on the response variance under a fitted log-SHE model
// (Durbin layout): derivative matrix diag(Y^2) Abar(rho) (beta_k I + beta_mk W)
EffectTriple variance_effects(const Theta& theta_hat, const Dataset& data,
                              const OperatorFamily& family, int k);

} // namespace logshe
