#pragma once

#include <Eigen/Dense>

namespace logshe {

enum class MomentMode { Sample, GaussianTheoretical };

// Error moments entering the covariance formulas. With w = log(v^2) and
// u = v^2 - 1:
//   a_e  = E[u^2 w]     b_e = E[w]        c_e = E[u^2 w^2]   d_e = E[u w]
//   e_e  = E[w^2]       f_e = a_e - sigma2*b_e               sigma2 = E[u^2]
//   a_e* = E[v^2 w]     c_e* = E[v^2 w^2] d_e* = d_e - 2     f_e* = a_e* - sigma_star2*b_e
//   sigma_star2 = E[v^2]                  mu3 = E[u^3]       mu4 = E[u^4]
struct MomentSet {
    double a_e = 0, b_e = 0, c_e = 0, d_e = 0, e_e = 0, f_e = 0;
    double sigma2 = 0;
    double a_e_star = 0, c_e_star = 0, d_e_star = 0, f_e_star = 0;
    double sigma_star2 = 0;
    double mu3 = 0, mu4 = 0;
    MomentMode mode = MomentMode::Sample;
};

// Sample mode averages the defining expressions over the residual vector;
// GaussianTheoretical mode returns the chi-square(1) values in closed form.
MomentSet estimate_moments(const Eigen::VectorXd& v2, MomentMode mode);

MomentSet gaussian_moments();

} // namespace logshe
