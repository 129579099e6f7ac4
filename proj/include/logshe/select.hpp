#pragma once

#include "logshe/ml.hpp"

#include <string>
#include <vector>

namespace logshe {

struct EliminationStep {
    std::string removed;
    double p_value = 0.0;
};

struct FittedCandidate {
    FamilyKind family = FamilyKind::SAR;
    bool with_x = true;
    double bic = 0.0;
    double loglik = 0.0;
    int free_parameters = 0;
    bool rho_kept = true;
    std::vector<std::string> kept; // surviving design columns
    std::vector<EliminationStep> steps;
    bool degenerate = false; // elimination emptied the model, intercept retained
    Theta theta_hat;
};

struct SelectionReport {
    std::vector<FittedCandidate> candidates;
    int best_index = -1; // minimum BIC
};

struct BicOptions {
    std::vector<FamilyKind> families = {FamilyKind::SAR, FamilyKind::SMA, FamilyKind::SME};
    std::vector<bool> with_x = {true, false};
    double alpha = 0.05;
    int sme_truncation = 10;
    MLOptions fit;
};

// BIC = -2 loglik + (#free params) log n after backward elimination at the
// given significance threshold, over families x {with X, without X}.
SelectionReport bic_select(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                           const WeightMatrix& W, const BicOptions& options = {});

inline SelectionReport bic_select(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                                  const WeightMatrix& W, double alpha,
                                  int sme_truncation = 10) {
    BicOptions opts;
    opts.alpha = alpha;
    opts.sme_truncation = sme_truncation;
    return bic_select(y, X, W, opts);
}

} // namespace logshe
