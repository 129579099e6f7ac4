#include "logshe/weights.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace logshe {

std::string family_name(FamilyKind kind) {
    switch (kind) {
    case FamilyKind::SAR: return "sar";
    case FamilyKind::SMA: return "sma";
    case FamilyKind::SME: return "sme";
    }
    return "?";
}

FamilyKind family_from_name(const std::string& name) {
    if (name == "sar" || name == "SAR") return FamilyKind::SAR;
    if (name == "sma" || name == "SMA") return FamilyKind::SMA;
    if (name == "sme" || name == "SME") return FamilyKind::SME;
    throw validation_error("unknown operator family: " + name);
}

void Coordinates::validate() const {
    if (points.rows() < 2) throw validation_error("coordinates: need at least 2 units");
    if (!points.allFinite()) throw validation_error("coordinates: nonfinite entry");
}

WeightMatrix WeightMatrix::from_standardized(Eigen::MatrixXd entries) {
    const auto n = entries.rows();
    if (n < 2 || entries.cols() != n) throw validation_error("weight matrix must be square, n >= 2");
    for (Eigen::Index i = 0; i < n; ++i) {
        if (entries(i, i) != 0.0) throw validation_error("weight matrix diagonal must be zero");
        double row = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (entries(i, j) < 0.0) throw validation_error("weight matrix entries must be nonnegative");
            row += entries(i, j);
        }
        if (std::fabs(row - 1.0) > 1e-12)
            throw validation_error("weight matrix row " + std::to_string(i) + " does not sum to 1");
    }
    WeightMatrix W;
    W.entries_ = std::move(entries);
    W.standardized_ = true;
    return W;
}

WeightMatrix row_standardize(const Eigen::MatrixXd& raw) {
    const auto n = raw.rows();
    if (n < 2 || raw.cols() != n) throw validation_error("weight matrix must be square, n >= 2");
    Eigen::MatrixXd out = raw;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (out(i, i) != 0.0) throw validation_error("row_standardize: diagonal entry at unit " + std::to_string(i));
        double row = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (out(i, j) < 0.0) throw validation_error("row_standardize: negative weight");
            row += out(i, j);
        }
        if (row <= 0.0)
            throw isolated_unit_error("row_standardize: unit " + std::to_string(i) +
                                      " has no neighbors (all-zero row)");
        out.row(i) /= row;
    }
    return WeightMatrix::from_standardized(std::move(out));
}

WeightMatrix build_knn(const Coordinates& coords, int k) {
    coords.validate();
    const int n = coords.n();
    if (k < 1 || k > n - 1) throw validation_error("build_knn: k must satisfy 1 <= k <= n-1");

    Eigen::MatrixXd raw = Eigen::MatrixXd::Zero(n, n);
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) {
        std::iota(order.begin(), order.end(), 0);
        Eigen::VectorXd d2(n);
        for (int j = 0; j < n; ++j)
            d2[j] = (coords.points.row(i) - coords.points.row(j)).squaredNorm();
        // nearest first; ties broken by lowest unit index
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            if (d2[a] != d2[b]) return d2[a] < d2[b];
            return a < b;
        });
        int picked = 0;
        for (int j : order) {
            if (j == i) continue;
            raw(i, j) = 1.0;
            if (++picked == k) break;
        }
    }
    return row_standardize(raw);
}

WeightMatrix build_rook(int rows, int cols) {
    if (rows < 1 || cols < 1 || static_cast<long>(rows) * cols < 2)
        throw validation_error("build_rook: grid must contain at least 2 cells");
    const int n = rows * cols;
    Eigen::MatrixXd raw = Eigen::MatrixXd::Zero(n, n);
    auto id = [cols](int r, int c) { return r * cols + c; };
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            if (r > 0) raw(id(r, c), id(r - 1, c)) = 1.0;
            if (r + 1 < rows) raw(id(r, c), id(r + 1, c)) = 1.0;
            if (c > 0) raw(id(r, c), id(r, c - 1)) = 1.0;
            if (c + 1 < cols) raw(id(r, c), id(r, c + 1)) = 1.0;
        }
    }
    return row_standardize(raw);
}

Eigen::VectorXcd weight_eigenvalues(const WeightMatrix& W) {
    Eigen::EigenSolver<Eigen::MatrixXd> solver(W.entries(), /*computeEigenvectors=*/false);
    if (solver.info() != Eigen::Success)
        throw numerical_error("eigensolver failed to converge on weight matrix (n=" +
                              std::to_string(W.n()) + ")");
    return solver.eigenvalues();
}

double RhoInterval::clamp_interior(double rho, double margin) const {
    return std::min(hi - margin, std::max(lo + margin, rho));
}

RhoInterval rho_interval(const WeightMatrix& W, FamilyKind kind, double sme_box) {
    if (kind == FamilyKind::SME) return {-sme_box, sme_box};
    if (!W.standardized()) throw validation_error("rho_interval: weight matrix must be standardized");

    const Eigen::VectorXcd ev = weight_eigenvalues(W);
    bool any_complex = false;
    double min_real = 0.0;
    bool have_real = false;
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (std::fabs(ev[i].imag()) > 1e-9) {
            any_complex = true;
            continue;
        }
        if (!have_real || ev[i].real() < min_real) {
            min_real = ev[i].real();
            have_real = true;
        }
    }
    double lo = -1.0;
    if (have_real && min_real < 0.0) lo = -std::min(1.0 / std::fabs(min_real), 1.0);
    if (any_complex) lo = std::max(lo, -1.0);
    return {lo, 1.0};
}

bool ValidationReport::all_passed() const {
    return std::all_of(checks.begin(), checks.end(),
                       [](const ValidationCheck& c) { return c.passed; });
}

ValidationReport validate_assumptions(const Eigen::MatrixXd& M) {
    ValidationReport report;

    double max_diag = M.diagonal().cwiseAbs().maxCoeff();
    report.checks.push_back({"zero_diagonal", max_diag == 0.0, max_diag});

    double min_entry = M.minCoeff();
    report.checks.push_back({"nonnegative", min_entry >= 0.0, min_entry});

    double worst_row = (M.rowwise().sum().array() - 1.0).abs().maxCoeff();
    report.checks.push_back({"row_sums_one", worst_row < 1e-12, worst_row});

    double spectral = 0.0;
    try {
        Eigen::EigenSolver<Eigen::MatrixXd> solver(M, false);
        if (solver.info() != Eigen::Success) throw numerical_error("eigensolver failed");
        spectral = solver.eigenvalues().cwiseAbs().maxCoeff();
        report.checks.push_back({"spectral_radius_le_one", spectral <= 1.0 + 1e-10, spectral});
    } catch (const numerical_error&) {
        report.checks.push_back({"spectral_radius_le_one", false, 0.0});
    }
    return report;
}

ValidationReport validate_assumptions(const WeightMatrix& W) {
    return validate_assumptions(W.entries());
}

Coordinates read_coordinates_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw validation_error("cannot open coordinates file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw validation_error("empty coordinates file: " + path);
    // header: id,x,y[,z...]
    int dims = -1;
    {
        std::stringstream hs(line);
        std::string tok;
        int fields = 0;
        while (std::getline(hs, tok, ',')) ++fields;
        if (fields < 2) throw validation_error("coordinates header must be id,x[,y...]");
        dims = fields - 1;
    }
    std::vector<std::vector<double>> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::string tok;
        std::vector<double> vals;
        bool first = true;
        while (std::getline(ls, tok, ',')) {
            if (first) { first = false; continue; } // id column, order is file order
            vals.push_back(std::stod(tok));
        }
        if (static_cast<int>(vals.size()) != dims)
            throw validation_error("coordinates line " + std::to_string(lineno) + ": wrong field count");
        rows.push_back(std::move(vals));
    }
    Coordinates coords;
    coords.points.resize(static_cast<Eigen::Index>(rows.size()), dims);
    for (size_t i = 0; i < rows.size(); ++i)
        for (int d = 0; d < dims; ++d) coords.points(static_cast<Eigen::Index>(i), d) = rows[i][d];
    coords.validate();
    return coords;
}

} // namespace logshe
