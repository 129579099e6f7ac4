#pragma once

#include "logshe/gmm.hpp"

#include <functional>
#include <string>

namespace logshe {

// Parameter constraint G(theta) = 0. The linear form holds J'theta = c; a
// nonlinear map can be supplied for Wald testing (jacobian by central
// differences).
struct Constraint {
    Eigen::MatrixXd J; // (K+1) x c_g
    Eigen::VectorXd c; // c_g
    std::string description;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> nonlinear;

    int cg() const;
    bool is_linear() const { return !nonlinear; }
    Eigen::VectorXd value(const Eigen::VectorXd& theta_full) const;
    Eigen::MatrixXd jacobian(const Eigen::VectorXd& theta_full) const; // c_g x (K+1)

    // rho = 0 (J1 selector)
    static Constraint rho_zero(int K);
    // gamma = 0 jointly (J2 selector)
    static Constraint gamma_zero(int K);
    // single component theta[index] = value
    static Constraint component(int K, int index, double value, std::string label);
    // parsed from the config mini-language, e.g. "rho=0" or "gamma[2]=0,gamma[3]=0"
    static Constraint parse(const std::string& text, int K);
};

struct TestResult {
    std::string kind; // wald / lm / d / j
    double statistic = 0.0;
    int df = 0;
    double p_value = 1.0;
    std::string constraint;
    std::uint64_t instrument_hash = 0;
};

// stage-2 OGMM minimization restricted to {theta : J'theta = c}, sharing the
// unconstrained weighting omega_tilde (required for the D test)
GmmFit constrained_ogmm(const MomentSystem& system, const LogSheModel& model, const Dataset& data,
                        const Constraint& constraint, const Eigen::MatrixXd& omega_tilde,
                        const GmmOptions& options = {});

TestResult wald_test(const GmmFit& fit, const Constraint& constraint);
// score-type statistic at the constrained optimum; the Sigma_R sample version
// is the realized moment Jacobian at theta_hat_c, which keeps the statistic
// c_g-dimensional in finite samples through the first-order conditions
TestResult lm_test(const GmmFit& constrained_fit, const MomentSystem& system,
                   const LogSheModel& model, const Dataset& data, const Constraint& constraint);
TestResult d_test(const GmmFit& constrained_fit, const GmmFit& unconstrained_fit);
TestResult j_test(const GmmFit& fit, const MomentSystem& system);

// Full pipeline: stage-1 GMM, shared Omega_tilde, unconstrained and
// constrained stage-2 fits, Wald/LM/D statistics.
struct ConstraintTests {
    GmmFit unconstrained;
    GmmFit constrained;
    TestResult wald;
    TestResult lm;
    TestResult d;
};

ConstraintTests run_constraint_tests(const MomentSystem& system, const LogSheModel& model,
                                     const Dataset& data, const Constraint& constraint,
                                     const GmmOptions& options = {});

} // namespace logshe
