#include "logshe/ml.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace logshe;

namespace {

Theta make_theta(double rho, std::initializer_list<double> gamma) {
    Theta t;
    t.rho = rho;
    t.gamma.resize(static_cast<Eigen::Index>(gamma.size()));
    int i = 0;
    for (double g : gamma) t.gamma[i++] = g;
    return t;
}

struct Instance {
    WeightMatrix W;
    OperatorFamily fam;
    LogSheModel model;
    Dataset data;
};

Instance make_instance(FamilyKind kind, int n, std::uint64_t seed, double rho0 = 0.3) {
    WeightMatrix W = build_knn(oracle::seeded_points(n, seed), std::min(5, n - 1));
    OperatorFamily fam(kind, W);
    LogSheModel model(fam, true);
    Theta theta0 = make_theta(rho0, {1, 3, 3});
    SimulationResult sim = simulate(fam, theta0, 1, ErrorDistribution::std_normal(), seed + 1);
    return Instance{W, fam, model, sim.data};
}

} // namespace

TEST_CASE("log likelihood at theta = 0 is the pure Gaussian sum") {
    Instance in = make_instance(FamilyKind::SAR, 12, 5);
    Theta zero = make_theta(0.0, {0, 0, 0});
    const double ll = log_likelihood(in.model, in.data, zero);
    double expect = 0.0;
    for (int i = 0; i < in.data.n(); ++i)
        expect += std::log(2.0 * M_PI) + in.data.y()[i] * in.data.y()[i];
    CHECK(ll == doctest::Approx(-0.5 * expect).epsilon(1e-12));
}

TEST_CASE("log likelihood matches a term-by-term scalar evaluation") {
    // 3-unit instance with a raw two-column design (a Durbin layout cannot
    // have full rank at n = 3)
    WeightMatrix W = build_knn(oracle::seeded_points(3, 8), 1);
    OperatorFamily fam(FamilyKind::SAR, W);
    LogSheModel model(fam, false);
    Eigen::VectorXd y(3);
    y << 0.8, -1.3, 2.1;
    Eigen::MatrixXd Z(3, 2);
    Z << 1, 0.4, 1, -0.7, 1, 1.5;
    Dataset data(y, Z, W);
    Theta theta = make_theta(0.25, {0.4, -0.2});
    const double ll = log_likelihood(model, data, theta);

    double acc = 0.0;
    for (int i = 0; i < 3; ++i) {
        double expo = Z.row(i).dot(theta.gamma);
        for (int j = 0; j < 3; ++j)
            expo += theta.rho * W.entries()(i, j) * std::log(y[j] * y[j]);
        const double h = std::exp(expo);
        acc += std::log(2.0 * M_PI) + y[i] * y[i] / h + std::log(h);
    }
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(3, 3) - theta.rho * W.entries();
    CHECK(ll == doctest::Approx(-0.5 * acc + std::log(A.determinant())).epsilon(1e-12));
}

TEST_CASE("log likelihood is invariant under joint unit permutation") {
    const int n = 10;
    Instance in = make_instance(FamilyKind::SAR, n, 23);
    Theta theta = make_theta(0.3, {1, 2, 0.5});
    const double ll = log_likelihood(in.model, in.data, theta);

    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = (i * 3 + 1) % n;
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) P(i, perm[static_cast<size_t>(i)]) = 1.0;
    WeightMatrix Wp = WeightMatrix::from_standardized(P * in.W.entries() * P.transpose());
    OperatorFamily famp(FamilyKind::SAR, Wp);
    LogSheModel modelp(famp, true);
    Dataset datap(P * in.data.y(), P * in.data.Z(), Wp);
    CHECK(log_likelihood(modelp, datap, theta) == doctest::Approx(ll).epsilon(1e-10));
}

TEST_CASE("score matches central finite differences of the log likelihood") {
    for (FamilyKind kind : {FamilyKind::SAR, FamilyKind::SMA, FamilyKind::SME}) {
        Instance in = make_instance(kind, 25, 7);
        for (double rho : {-0.4, 0.1, 0.45}) {
            Theta theta = make_theta(rho, {0.8, 2.5, 2.0});
            Eigen::VectorXd analytic = score(in.model, in.data, theta);
            auto f = [&](const Eigen::VectorXd& x) {
                return log_likelihood(in.model, in.data, Theta::from_full(x));
            };
            Eigen::VectorXd fd = oracle::fd_gradient(f, theta.full(), 1e-6);
            CHECK((analytic - fd).cwiseAbs().maxCoeff() <
                  1e-5 * std::max(1.0, fd.cwiseAbs().maxCoeff()));
        }
    }
}

TEST_CASE("score vanishes when v2 is one under SME") {
    WeightMatrix W = build_knn(oracle::seeded_points(8, 3), 3);
    OperatorFamily fam(FamilyKind::SME, W);
    LogSheModel model(fam, false);
    Eigen::MatrixXd Z(8, 2);
    Z.col(0).setOnes();
    Z.col(1) = Eigen::VectorXd::LinSpaced(8, -1.0, 1.0);
    Theta theta = make_theta(0.0, {0.7, -0.4});
    Eigen::VectorXd y = (0.5 * (Z * theta.gamma)).array().exp();
    Dataset data(y, Z, W);
    Eigen::VectorXd s = score(model, data, theta);
    CHECK(s.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("hessian gamma-gamma block is -Z' diag(v2) Z / 2") {
    WeightMatrix W = build_knn(oracle::seeded_points(3, 19), 1);
    OperatorFamily fam(FamilyKind::SAR, W);
    LogSheModel model(fam, false);
    Eigen::VectorXd y(3);
    y << 1.4, -0.6, 0.9;
    Eigen::MatrixXd Z(3, 2);
    Z << 1, -0.2, 1, 0.8, 1, 0.3;
    Dataset data(y, Z, W);
    Theta theta = make_theta(0.2, {0.3, 0.1});
    Eigen::MatrixXd H = hessian(model, data, theta);
    Eigen::VectorXd v2 = v2_vector(model, data, theta).v2;
    Eigen::MatrixXd ref = -0.5 * Z.transpose() * v2.asDiagonal() * Z;
    CHECK((H.block(1, 1, 2, 2) - ref).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("hessian matches finite differences of the score") {
    for (FamilyKind kind : {FamilyKind::SAR, FamilyKind::SMA, FamilyKind::SME}) {
        Instance in = make_instance(kind, 20, 31);
        Theta theta = make_theta(0.35, {1.0, 2.8, 2.4});
        Eigen::MatrixXd H = hessian(in.model, in.data, theta);
        const double h = 1e-6;
        Eigen::VectorXd x = theta.full();
        for (int j = 0; j < 4; ++j) {
            Eigen::VectorXd up = x, dn = x;
            up[j] += h;
            dn[j] -= h;
            Eigen::VectorXd col = (score(in.model, in.data, Theta::from_full(up)) -
                                   score(in.model, in.data, Theta::from_full(dn))) /
                                  (2.0 * h);
            CHECK((H.col(j) - col).cwiseAbs().maxCoeff() <
                  1e-4 * std::max(1.0, col.cwiseAbs().maxCoeff()));
        }
    }
}

TEST_CASE("SAR hessian trace term equals the dense (-W Abar)^2 trace") {
    Instance in = make_instance(FamilyKind::SAR, 9, 40);
    const double rho = 0.4;
    Eigen::MatrixXd Abar = in.fam.evaluate(rho, OperatorPart::AInv);
    Eigen::MatrixXd WA = -in.W.entries() * Abar;
    CHECK(in.fam.log_det_second_deriv(rho) ==
          doctest::Approx(-(WA * WA).trace()).epsilon(1e-10));
}

TEST_CASE("sample moments of a unit residual vector vanish") {
    Eigen::VectorXd v2 = Eigen::VectorXd::Ones(50);
    MomentSet m = estimate_moments(v2, MomentMode::Sample);
    CHECK(m.a_e == 0.0);
    CHECK(m.b_e == 0.0);
    CHECK(m.c_e == 0.0);
    CHECK(m.d_e == 0.0);
    CHECK(m.sigma2 == 0.0);
}

TEST_CASE("sample d_e over a large chi-square draw is near 2") {
    Rng rng(99);
    const int N = 1000000;
    Eigen::VectorXd v2(N);
    for (int i = 0; i < N; ++i) {
        const double v = rng.next_normal();
        v2[i] = v * v;
    }
    MomentSet m = estimate_moments(v2, MomentMode::Sample);
    CHECK(m.d_e > 1.98);
    CHECK(m.d_e < 2.02);
    CHECK(m.sigma_star2 == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("gaussian theoretical moments match the quadrature oracle") {
    MomentSet m = gaussian_moments();
    const double b_e = oracle::chi2_1_moment([](double, double l) { return l; });
    CHECK(m.b_e == doctest::Approx(b_e).epsilon(1e-6));
    CHECK(m.b_e == doctest::Approx(-1.2704).epsilon(1e-3));

    const double e_e = oracle::chi2_1_moment([](double, double l) { return l * l; });
    CHECK(m.e_e == doctest::Approx(e_e).epsilon(1e-6));

    const double a_e =
        oracle::chi2_1_moment([](double x, double l) { return (x - 1) * (x - 1) * l; });
    CHECK(m.a_e == doctest::Approx(a_e).epsilon(1e-6));

    const double c_e =
        oracle::chi2_1_moment([](double x, double l) { return (x - 1) * (x - 1) * l * l; });
    CHECK(m.c_e == doctest::Approx(c_e).epsilon(1e-6));

    const double a_e_star = oracle::chi2_1_moment([](double x, double l) { return x * l; });
    CHECK(m.a_e_star == doctest::Approx(a_e_star).epsilon(1e-6));

    const double c_e_star = oracle::chi2_1_moment([](double x, double l) { return x * l * l; });
    CHECK(m.c_e_star == doctest::Approx(c_e_star).epsilon(1e-6));

    const double d_e = oracle::chi2_1_moment([](double x, double l) { return (x - 1) * l; });
    CHECK(d_e == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(m.d_e == 2.0);
    CHECK(m.d_e_star == 0.0);
    CHECK(m.sigma2 == 2.0);
    CHECK(m.sigma_star2 == 1.0);
    CHECK(m.mu3 == doctest::Approx(oracle::chi2_1_moment(
                       [](double x, double) { return std::pow(x - 1, 3); })).epsilon(1e-5));
    CHECK(m.mu4 == doctest::Approx(oracle::chi2_1_moment(
                       [](double x, double) { return std::pow(x - 1, 4); })).epsilon(1e-5));
}

TEST_CASE("estimate_moments rejects empty and nonpositive input") {
    CHECK_THROWS_AS(estimate_moments(Eigen::VectorXd(), MomentMode::Sample), validation_error);
    Eigen::VectorXd bad(2);
    bad << 1.0, -0.5;
    CHECK_THROWS_AS(estimate_moments(bad, MomentMode::Sample), validation_error);
}

TEST_CASE("information equality under gaussian moments") {
    for (FamilyKind kind : {FamilyKind::SAR, FamilyKind::SME}) {
        Instance in = make_instance(kind, 30, 55);
        Theta theta = make_theta(0.3, {1, 3, 3});
        MlInformation info = ml_information(in.model, in.data, theta, gaussian_moments());
        const int K = 3;
        CHECK((info.omega.block(1, 1, K, K) - info.sigma.block(1, 1, K, K)).cwiseAbs().maxCoeff() <
              1e-8 * info.sigma.block(1, 1, K, K).cwiseAbs().maxCoeff());
        CHECK((info.omega - info.sigma).cwiseAbs().maxCoeff() <
              1e-6 * info.sigma.cwiseAbs().maxCoeff());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(info.sigma);
        CHECK(es.eigenvalues().minCoeff() > -1e-10 * info.sigma.norm());
    }
}

TEST_CASE("fit recovers the truth on simulated data within four standard errors") {
    Instance in = make_instance(FamilyKind::SAR, 300, 71);
    MLFit fit = fit_ml(in.model, in.data);
    CHECK(fit.converged);
    CHECK(fit.score_norm_at_opt / in.data.n() < 1e-6);
    Eigen::VectorXd se = fit.standard_errors();
    Eigen::VectorXd truth = make_theta(0.3, {1, 3, 3}).full();
    Eigen::VectorXd est = fit.theta_hat.full();
    for (int j = 0; j < 4; ++j) CHECK(std::fabs(est[j] - truth[j]) < 4.0 * se[j]);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(fit.covariance);
    CHECK(es.eigenvalues().minCoeff() > -1e-10);
}

TEST_CASE("null calibration: estimates stay within three standard errors") {
    WeightMatrix W = build_knn(oracle::seeded_points(100, 5), 5);
    OperatorFamily fam(FamilyKind::SAR, W);
    LogSheModel model(fam, true);
    Theta theta0 = make_theta(0.0, {0, 0, 0});
    int ok = 0;
    const int runs = 60;
    for (int r = 0; r < runs; ++r) {
        SimulationResult sim = simulate(fam, theta0, 1, ErrorDistribution::std_normal(), 900 + r);
        MLFit fit = fit_ml(model, sim.data);
        if (!fit.converged) continue;
        Eigen::VectorXd se = fit.standard_errors();
        Eigen::VectorXd est = fit.theta_hat.full();
        bool inside = true;
        for (int j = 0; j < 4; ++j)
            if (std::fabs(est[j]) >= 3.0 * se[j]) inside = false;
        if (inside) ++ok;
    }
    CHECK(ok >= static_cast<int>(0.9 * runs));
}

TEST_CASE("score gamma block grows like sqrt(n), not n") {
    WeightMatrix W = build_knn(oracle::seeded_points(400, 6), 5);
    OperatorFamily fam(FamilyKind::SAR, W);
    LogSheModel model(fam, true);
    Theta theta0 = make_theta(0.3, {1, 3, 3});
    double acc = 0.0;
    const int reps = 50;
    for (int r = 0; r < reps; ++r) {
        SimulationResult sim = simulate(fam, theta0, 1, ErrorDistribution::std_normal(), 70 + r);
        Eigen::VectorXd s = score(model, sim.data, theta0);
        acc += s.tail(3).cwiseAbs().mean();
    }
    const double mean_mag = acc / reps;
    CHECK(mean_mag / 400.0 < 0.5);
    CHECK(mean_mag / std::sqrt(400.0) < 5.0);
    CHECK(mean_mag / std::sqrt(400.0) > 0.05);
}

TEST_CASE("two-step ML reproduces its own profiling identities") {
    Instance in = make_instance(FamilyKind::SAR, 80, 91);
    MLFit fit = fit_2sml(in.model, in.data);
    CHECK(fit.method == "2sml");
    CHECK(fit.covariance.size() == 0);

    Eigen::VectorXd zeta = in.fam.apply_A(fit.theta_hat.rho, in.data.log_y2());
    Eigen::VectorXd coef = in.data.Z().colPivHouseholderQr().solve(zeta);
    CHECK((fit.theta_hat.gamma.tail(2) - coef.tail(2)).cwiseAbs().maxCoeff() < 1e-8);

    Eigen::VectorXd C = zeta - in.data.Z().rightCols(2) * coef.tail(2);
    CHECK(std::exp(fit.theta_hat.gamma[0]) ==
          doctest::Approx(C.array().exp().mean()).epsilon(1e-8));
}

TEST_CASE("2sml requires the Durbin layout") {
    Instance in = make_instance(FamilyKind::SAR, 20, 13);
    LogSheModel raw(in.fam, false);
    CHECK_THROWS_AS(fit_2sml(raw, in.data), validation_error);
}

TEST_CASE("consistency diagnostic term1 is exactly zero under SME") {
    Instance in = make_instance(FamilyKind::SME, 60, 101);
    MLFit fit = fit_ml(in.model, in.data);
    ConsistencyDiagnostic diag = consistency_diagnostic(fit, in.model, in.data);
    CHECK(diag.term1 == 0.0);
}

TEST_CASE("consistency diagnostic is small under normal errors") {
    Instance in = make_instance(FamilyKind::SAR, 600, 111);
    MLFit fit = fit_ml(in.model, in.data);
    ConsistencyDiagnostic diag = consistency_diagnostic(fit, in.model, in.data);
    CHECK(std::fabs(diag.term1) < 0.05);
}

TEST_CASE("consistency diagnostic flags mixed-normal errors under SAR") {
    WeightMatrix W = build_knn(oracle::seeded_points(1000, 8), 5);
    OperatorFamily fam(FamilyKind::SAR, W);
    LogSheModel model(fam, true);
    Theta theta0 = make_theta(0.3, {1, 3, 3});
    int flagged = 0;
    const int seeds = 10;
    for (int r = 0; r < seeds; ++r) {
        SimulationResult sim =
            simulate(fam, theta0, 1, ErrorDistribution::mixed_normal(2, 1), 300 + r);
        MLFit fit = fit_ml(model, sim.data);
        ConsistencyDiagnostic diag = consistency_diagnostic(fit, model, sim.data);
        if (std::fabs(diag.term1) > 0.05) ++flagged;
    }
    CHECK(flagged >= 9);
}
