#pragma once

#include <Eigen/Dense>

#include <functional>

namespace logshe {

// objective callback: returns f(x) and fills *grad when non-null
using ObjectiveFn = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>;

struct OptimOptions {
    double grad_tol = 1e-6;   // scaled by max(1, |f|)
    int max_iter = 500;
    // bound on the infinity norm of the first step (guards against a huge
    // initial gradient catapulting the iterate onto a degenerate plateau)
    double first_step_cap = 1.0;
};

struct OptimResult {
    Eigen::VectorXd x;
    double f = 0.0;
    Eigen::VectorXd grad;
    bool converged = false;
    int iterations = 0;
    int evaluations = 0;
};

// quasi-Newton minimizer (inverse-BFGS update, Armijo backtracking)
OptimResult bfgs_minimize(const ObjectiveFn& fn, const Eigen::VectorXd& x0,
                          const OptimOptions& options = {});

// Brent minimization of a univariate function on [lo, hi]
double brent_minimize(const std::function<double(double)>& fn, double lo, double hi,
                      double tol, double* fmin_out = nullptr);

} // namespace logshe
