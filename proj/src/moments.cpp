#include "logshe/moments.hpp"

#include "logshe/errors.hpp"

#include <cmath>

namespace logshe {

MomentSet gaussian_moments() {
    // moments of v^2 ~ chi-square(1); derived once from
    // E[X^s log^m X] for X ~ Gamma(1/2, 2) and frozen as constants
    const double euler = 0.57721566490153286060651209008240243;
    const double pi = 3.14159265358979323846264338327950288;
    const double b_e = -(euler + std::log(2.0));   // E log chi2_1
    const double trigamma_half = pi * pi / 2.0;

    MomentSet m;
    m.mode = MomentMode::GaussianTheoretical;
    m.b_e = b_e;
    m.e_e = trigamma_half + b_e * b_e;
    m.sigma_star2 = 1.0;
    m.sigma2 = 2.0;
    m.d_e = 2.0;
    m.d_e_star = 0.0;
    m.a_e_star = b_e + 2.0;
    m.a_e = 2.0 * b_e + 4.0;
    m.c_e_star = (b_e + 2.0) * (b_e + 2.0) + trigamma_half - 4.0;
    // c_e = E[(X-1)^2 (log X)^2] = E[X^2 (log X)^2] - 2 E[X (log X)^2] + E[(log X)^2]
    const double ex2l2 =
        3.0 * ((b_e + 8.0 / 3.0) * (b_e + 8.0 / 3.0) + trigamma_half - 4.0 - 4.0 / 9.0);
    m.c_e = ex2l2 - 2.0 * m.c_e_star + m.e_e;
    m.f_e = m.a_e - m.sigma2 * m.b_e;           // = 4
    m.f_e_star = m.a_e_star - m.sigma_star2 * m.b_e; // = 2
    m.mu3 = 8.0;   // E (chi2_1 - 1)^3
    m.mu4 = 60.0;  // E (chi2_1 - 1)^4
    return m;
}

MomentSet estimate_moments(const Eigen::VectorXd& v2, MomentMode mode) {
    if (mode == MomentMode::GaussianTheoretical) return gaussian_moments();
    if (v2.size() == 0) throw validation_error("estimate_moments: empty residual vector");
    for (Eigen::Index i = 0; i < v2.size(); ++i)
        if (!(v2[i] > 0.0)) throw validation_error("estimate_moments: nonpositive v^2 entry");

    const auto n = static_cast<double>(v2.size());
    MomentSet m;
    m.mode = MomentMode::Sample;
    for (Eigen::Index i = 0; i < v2.size(); ++i) {
        const double x = v2[i];
        const double w = std::log(x);
        const double u = x - 1.0;
        m.a_e += u * u * w;
        m.b_e += w;
        m.c_e += u * u * w * w;
        m.d_e += u * w;
        m.e_e += w * w;
        m.sigma2 += u * u;
        m.a_e_star += x * w;
        m.c_e_star += x * w * w;
        m.sigma_star2 += x;
        m.mu3 += u * u * u;
        m.mu4 += u * u * u * u;
    }
    m.a_e /= n; m.b_e /= n; m.c_e /= n; m.d_e /= n; m.e_e /= n;
    m.sigma2 /= n; m.a_e_star /= n; m.c_e_star /= n; m.sigma_star2 /= n;
    m.mu3 /= n; m.mu4 /= n;
    m.d_e_star = m.d_e - 2.0;
    m.f_e = m.a_e - m.sigma2 * m.b_e;
    m.f_e_star = m.a_e_star - m.sigma_star2 * m.b_e;
    return m;
}

} // namespace logshe
