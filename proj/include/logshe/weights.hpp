#pragma once

#include "logshe/errors.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace logshe {

enum class FamilyKind { SAR, SMA, SME };

std::string family_name(FamilyKind kind);
FamilyKind family_from_name(const std::string& name);

// Euclidean point set, one point per spatial unit.
struct Coordinates {
    Eigen::MatrixXd points; // n x r

    int n() const { return static_cast<int>(points.rows()); }
    void validate() const;
};

// Row-standardized spatial weight matrix M_n: zero diagonal, nonnegative,
// rows summing to one.
class WeightMatrix {
public:
    WeightMatrix() = default;

    static WeightMatrix from_standardized(Eigen::MatrixXd entries);

    int n() const { return static_cast<int>(entries_.rows()); }
    const Eigen::MatrixXd& entries() const { return entries_; }
    bool standardized() const { return standardized_; }

private:
    Eigen::MatrixXd entries_;
    bool standardized_ = false;
};

WeightMatrix build_knn(const Coordinates& coords, int k);
WeightMatrix build_rook(int rows, int cols);
WeightMatrix row_standardize(const Eigen::MatrixXd& raw);

struct RhoInterval {
    double lo = -1.0;
    double hi = 1.0;

    bool contains(double rho) const { return rho > lo && rho < hi; }
    double clamp_interior(double rho, double margin) const;
};

RhoInterval rho_interval(const WeightMatrix& W, FamilyKind kind,
                         double sme_box = 2.0);

struct ValidationCheck {
    std::string name;
    bool passed = false;
    double value = 0.0;
};

struct ValidationReport {
    std::vector<ValidationCheck> checks;
    bool all_passed() const;
};

ValidationReport validate_assumptions(const WeightMatrix& W);
// report-only variant for raw candidate matrices that may violate the checks
ValidationReport validate_assumptions(const Eigen::MatrixXd& entries);

// eigenvalues of W (real nonsymmetric), cached by OperatorFamily
Eigen::VectorXcd weight_eigenvalues(const WeightMatrix& W);

Coordinates read_coordinates_csv(const std::string& path);

} // namespace logshe
