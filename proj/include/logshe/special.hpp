#pragma once

#include <cstdint>

namespace logshe {

// Regularized incomplete gamma functions P(a,x) and Q(a,x) = 1 - P(a,x).
double gamma_p(double a, double x);
double gamma_q(double a, double x);

// chi-square distribution with df degrees of freedom
double chisq_cdf(double x, double df);
double chisq_upper_tail(double x, double df);

// standard normal
double normal_cdf(double x);
// Wichura AS241 inverse normal CDF, good to ~1e-15.
double normal_quantile(double p);

} // namespace logshe
