#include "logshe/weights.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <cstdio>
#include <fstream>

using namespace logshe;

TEST_CASE("knn on a line with ties broken by lowest index") {
    Coordinates c;
    c.points.resize(3, 1);
    c.points << 0.0, 1.0, 2.0;
    WeightMatrix W = build_knn(c, 1);
    CHECK(W.entries()(0, 1) == 1.0);
    CHECK(W.entries()(1, 0) == 1.0); // tie with unit 2 goes to index 0
    CHECK(W.entries()(1, 2) == 0.0);
    CHECK(W.entries()(2, 1) == 1.0);
}

TEST_CASE("knn with k = n-1 is the complete-neighbor matrix") {
    Coordinates c = oracle::seeded_points(7, 42);
    WeightMatrix W = build_knn(c, 6);
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 7; ++j)
            CHECK(W.entries()(i, j) == doctest::Approx(i == j ? 0.0 : 1.0 / 6).epsilon(1e-14));
}

TEST_CASE("knn matches the brute-force distance-sort oracle") {
    Coordinates c = oracle::seeded_points(10, 5);
    WeightMatrix W = build_knn(c, 3);
    Eigen::MatrixXd ref = oracle::knn_bruteforce(c.points, 3);
    CHECK((W.entries() - ref).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("knn is permutation equivariant") {
    const int n = 9;
    Coordinates c = oracle::seeded_points(n, 11);
    WeightMatrix W = build_knn(c, 3);
    Coordinates cp;
    cp.points.resize(n, 2);
    for (int i = 0; i < n; ++i) cp.points.row(i) = c.points.row(n - 1 - i);
    WeightMatrix Wp = build_knn(cp, 3);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            CHECK(Wp.entries()(i, j) == doctest::Approx(W.entries()(n - 1 - i, n - 1 - j)));
}

TEST_CASE("knn rejects out-of-range k") {
    Coordinates c = oracle::seeded_points(5, 1);
    CHECK_THROWS_AS(build_knn(c, 0), validation_error);
    CHECK_THROWS_AS(build_knn(c, 5), validation_error);
}

TEST_CASE("rook grids") {
    WeightMatrix W12 = build_rook(1, 2);
    CHECK(W12.entries()(0, 1) == 1.0);
    CHECK(W12.entries()(1, 0) == 1.0);

    WeightMatrix W22 = build_rook(2, 2);
    for (int i = 0; i < 4; ++i) {
        int nonzero = 0;
        for (int j = 0; j < 4; ++j)
            if (W22.entries()(i, j) > 0) {
                ++nonzero;
                CHECK(W22.entries()(i, j) == doctest::Approx(0.5));
            }
        CHECK(nonzero == 2);
    }

    WeightMatrix W33 = build_rook(3, 3);
    const int center = 4;
    int nonzero = 0;
    for (int j = 0; j < 9; ++j)
        if (W33.entries()(center, j) > 0) {
            ++nonzero;
            CHECK(W33.entries()(center, j) == doctest::Approx(0.25));
        }
    CHECK(nonzero == 4);

    CHECK_THROWS_AS(build_rook(0, 3), validation_error);
    CHECK_THROWS_AS(build_rook(1, 1), validation_error);
}

TEST_CASE("row standardization") {
    Eigen::MatrixXd raw(3, 3);
    raw << 0, 1, 1, 1, 0, 0, 1, 1, 0;
    WeightMatrix W = row_standardize(raw);
    Eigen::MatrixXd expect(3, 3);
    expect << 0, .5, .5, 1, 0, 0, .5, .5, 0;
    CHECK((W.entries() - expect).cwiseAbs().maxCoeff() < 1e-15);

    // idempotence
    WeightMatrix W2 = row_standardize(W.entries());
    CHECK((W2.entries() - W.entries()).cwiseAbs().maxCoeff() == 0.0);

    Eigen::MatrixXd isolated(3, 3);
    isolated << 0, 1, 1, 0, 0, 0, 1, 1, 0;
    CHECK_THROWS_AS(row_standardize(isolated), isolated_unit_error);
}

TEST_CASE("constructed matrices satisfy the row-sum and trace invariants") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        WeightMatrix W = build_knn(oracle::seeded_points(20, seed), 4);
        CHECK((W.entries().rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
        CHECK(W.entries().trace() == 0.0);
    }
}

TEST_CASE("rho interval for the 1x2 rook matrix is (-1, 1)") {
    WeightMatrix W = build_rook(1, 2); // eigenvalues +-1
    RhoInterval iv = rho_interval(W, FamilyKind::SAR);
    CHECK(iv.lo == doctest::Approx(-1.0));
    CHECK(iv.hi == doctest::Approx(1.0));
}

TEST_CASE("rho interval for SME is the configured box") {
    WeightMatrix W = build_rook(2, 3);
    RhoInterval iv = rho_interval(W, FamilyKind::SME);
    CHECK(iv.lo == -2.0);
    CHECK(iv.hi == 2.0);
    RhoInterval iv5 = rho_interval(W, FamilyKind::SME, 5.0);
    CHECK(iv5.hi == 5.0);
}

TEST_CASE("rho interval against an independent complex eigensolver") {
    WeightMatrix W = build_knn(oracle::seeded_points(10, 17), 3);
    RhoInterval iv = rho_interval(W, FamilyKind::SAR);

    Eigen::ComplexEigenSolver<Eigen::MatrixXcd> solver(W.entries().cast<std::complex<double>>());
    double min_real = 0.0;
    bool have = false, complex_found = false;
    for (Eigen::Index i = 0; i < solver.eigenvalues().size(); ++i) {
        auto ev = solver.eigenvalues()[i];
        if (std::fabs(ev.imag()) > 1e-9) {
            complex_found = true;
            continue;
        }
        if (!have || ev.real() < min_real) {
            min_real = ev.real();
            have = true;
        }
    }
    double lo = -1.0;
    if (have && min_real < 0) lo = -std::min(1.0, 1.0 / std::fabs(min_real));
    if (complex_found) lo = std::max(lo, -1.0);
    CHECK(iv.lo == doctest::Approx(lo).epsilon(1e-9));
    CHECK(iv.hi == doctest::Approx(1.0));
    CHECK(iv.lo >= -1.0 - 1e-12);
}

TEST_CASE("assumption validation report") {
    WeightMatrix W = build_knn(oracle::seeded_points(12, 3), 5);
    ValidationReport good = validate_assumptions(W);
    CHECK(good.all_passed());
    CHECK(good.checks.size() == 4);

    Eigen::MatrixXd bad = W.entries();
    bad(1, 1) = 0.1;
    ValidationReport r1 = validate_assumptions(bad);
    CHECK_FALSE(r1.checks[0].passed); // zero_diagonal
    CHECK_FALSE(r1.all_passed());

    Eigen::MatrixXd uns = W.entries();
    uns.row(0) *= 2.0;
    ValidationReport r2 = validate_assumptions(uns);
    CHECK(r2.checks[0].passed);
    CHECK_FALSE(r2.checks[2].passed); // row_sums_one
}

TEST_CASE("coordinate csv round trip") {
    const char* path = "coords_test.csv";
    {
        std::ofstream out(path);
        out << "id,x,y\n0,0.5,0.25\n1,0.75,0.5\n2,0.1,0.9\n";
    }
    Coordinates c = read_coordinates_csv(path);
    CHECK(c.n() == 3);
    CHECK(c.points(1, 0) == doctest::Approx(0.75));
    CHECK(c.points(2, 1) == doctest::Approx(0.9));
    std::remove(path);
}
