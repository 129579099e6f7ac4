#include "logshe/optimize.hpp"

#include <cmath>
#include <limits>

namespace logshe {

OptimResult bfgs_minimize(const ObjectiveFn& fn, const Eigen::VectorXd& x0,
                          const OptimOptions& options) {
    const auto dim = x0.size();
    OptimResult res;
    res.x = x0;
    res.grad.resize(dim);
    res.f = fn(res.x, &res.grad);
    res.evaluations = 1;

    Eigen::MatrixXd H = Eigen::MatrixXd::Identity(dim, dim);
    const double c1 = 1e-4;

    for (int it = 0; it < options.max_iter; ++it) {
        res.iterations = it;
        if (res.grad.cwiseAbs().maxCoeff() <= options.grad_tol * std::max(1.0, std::fabs(res.f))) {
            res.converged = true;
            return res;
        }

        Eigen::VectorXd dir = -(H * res.grad);
        double slope = res.grad.dot(dir);
        if (!(slope < 0.0)) { // H lost positive definiteness, restart
            H.setIdentity();
            dir = -res.grad;
            slope = res.grad.dot(dir);
            if (!(slope < 0.0)) break;
        }

        double alpha = 1.0;
        if (it == 0) {
            const double step = dir.cwiseAbs().maxCoeff();
            if (step > options.first_step_cap) alpha = options.first_step_cap / step;
        }
        double f_new = std::numeric_limits<double>::infinity();
        Eigen::VectorXd x_new(dim), g_new(dim);
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            x_new = res.x + alpha * dir;
            double f_try;
            try {
                f_try = fn(x_new, &g_new);
            } catch (...) {
                alpha *= 0.5;
                continue;
            }
            ++res.evaluations;
            if (std::isfinite(f_try) && f_try <= res.f + c1 * alpha * slope) {
                f_new = f_try;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) break; // no acceptable step along dir

        Eigen::VectorXd s = x_new - res.x;
        Eigen::VectorXd yv = g_new - res.grad;
        double sy = s.dot(yv);
        if (sy > 1e-12 * s.norm() * yv.norm()) {
            if (it == 0) H *= sy / yv.squaredNorm(); // initial curvature scaling
            double rho_bfgs = 1.0 / sy;
            Eigen::MatrixXd I = Eigen::MatrixXd::Identity(dim, dim);
            Eigen::MatrixXd V = I - rho_bfgs * s * yv.transpose();
            H = V * H * V.transpose() + rho_bfgs * s * s.transpose();
        }
        res.x = x_new;
        res.f = f_new;
        res.grad = g_new;
    }

    res.converged =
        res.grad.cwiseAbs().maxCoeff() <= options.grad_tol * std::max(1.0, std::fabs(res.f));
    return res;
}

double brent_minimize(const std::function<double(double)>& fn, double lo, double hi,
                      double tol, double* fmin_out) {
    const double gold = 0.3819660112501051;
    double a = lo, b = hi;
    double x = a + gold * (b - a);
    double w = x, v = x;
    double fx = fn(x), fw = fx, fv = fx;
    double d = 0.0, e = 0.0;

    for (int it = 0; it < 200; ++it) {
        const double xm = 0.5 * (a + b);
        const double tol1 = tol * std::fabs(x) + 1e-12;
        const double tol2 = 2.0 * tol1;
        if (std::fabs(x - xm) <= tol2 - 0.5 * (b - a)) break;

        bool parabolic = false;
        if (std::fabs(e) > tol1) {
            const double r = (x - w) * (fx - fv);
            double q = (x - v) * (fx - fw);
            double p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if (q > 0.0) p = -p;
            q = std::fabs(q);
            const double e_old = e;
            e = d;
            if (std::fabs(p) < std::fabs(0.5 * q * e_old) && p > q * (a - x) && p < q * (b - x)) {
                d = p / q;
                double u = x + d;
                if (u - a < tol2 || b - u < tol2) d = (xm > x) ? tol1 : -tol1;
                parabolic = true;
            }
        }
        if (!parabolic) {
            e = (x >= xm) ? a - x : b - x;
            d = gold * e;
        }
        const double u = (std::fabs(d) >= tol1) ? x + d : x + ((d > 0.0) ? tol1 : -tol1);
        const double fu = fn(u);
        if (fu <= fx) {
            if (u >= x) a = x; else b = x;
            v = w; fv = fw;
            w = x; fw = fx;
            x = u; fx = fu;
        } else {
            if (u < x) a = u; else b = u;
            if (fu <= fw || w == x) {
                v = w; fv = fw;
                w = u; fw = fu;
            } else if (fu <= fv || v == x || v == w) {
                v = u; fv = fu;
            }
        }
    }
    if (fmin_out) *fmin_out = fx;
    return x;
}

} // namespace logshe
