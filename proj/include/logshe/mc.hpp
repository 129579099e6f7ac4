#pragma once

#include "logshe/inference.hpp"
#include "logshe/ml.hpp"
#include "logshe/model.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace logshe {

// upper-tail chi-square critical value
double chisq_critical(double tau, int df);

// runs fn(i) for i in [0, count) on `threads` workers; exceptions propagate
void parallel_for(int count, int threads, const std::function<void(int)>& fn);

struct McDesign {
    FamilyKind family = FamilyKind::SAR;
    int n = 200;
    double rho0 = 0.3;
    Eigen::VectorXd gamma0 = (Eigen::VectorXd(3) << 1.0, 3.0, 3.0).finished();
    int x_cols = 1;
    int knn_k = 5;
    ErrorDistribution errors = ErrorDistribution::std_normal();
    int sme_truncation = 10;
    int kappa_max = 4;
    int replications = 1000;
    std::uint64_t seed = 1;
    int threads = 1;

    // weight matrix from seeded uniform coordinates, shared by replications
    WeightMatrix make_weights() const;
    WeightMatrix make_weights(int k) const;
};

struct EstimationCell {
    std::string method;
    std::string param;
    double bias = 0.0;
    double rmse = 0.0;
};

struct EstimationTable {
    std::vector<EstimationCell> cells;
    int reps_used = 0;
    int reps_failed = 0;
    std::uint64_t seed = 0;

    const EstimationCell& cell(const std::string& method, const std::string& param) const;
    std::string to_csv(const std::string& error_name, int n) const;
};

EstimationTable run_estimation_mc(const McDesign& design, const std::vector<std::string>& methods);

// Wald/LM/D statistics under the rho=0 constraint, one entry per replication
struct TestStatistics {
    std::vector<double> wald;
    std::vector<double> lm;
    std::vector<double> d;
    int reps_used = 0;
    int reps_failed = 0;

    double rate(const std::vector<double>& stats, double critical) const;
};

TestStatistics run_test_mc(const McDesign& design);

enum class JtestModel { Null, HigherOrder, Generalized };

struct JStatistics {
    std::vector<double> stats;
    int df = 0;
    int reps_used = 0;
    int reps_failed = 0;
};

// null model: log-SARHE at design.rho0; alternatives add rho_star = 0.6 on a
// 2-nearest-neighbor W*
JStatistics run_jtest_mc(const McDesign& design, JtestModel model, double rho_star = 0.6,
                         int knn_k_star = 2);

double empirical_quantile(std::vector<double> values, double p);

} // namespace logshe
