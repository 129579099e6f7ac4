#pragma once

#include <stdexcept>
#include <string>

namespace logshe {

// Data/config problems detected before any numerics run.
class validation_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A weight matrix row sums to zero; Assumption 2(i) cannot hold.
class isolated_unit_error : public validation_error {
public:
    using validation_error::validation_error;
};

class numerical_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class singular_operator_error : public numerical_error {
public:
    using numerical_error::numerical_error;
};

// det A(rho) <= 0: the log-determinant of the operator is undefined.
class determinant_sign_error : public numerical_error {
public:
    using numerical_error::numerical_error;
};

class nonfinite_variance_error : public numerical_error {
public:
    using numerical_error::numerical_error;
};

class instrument_rank_error : public validation_error {
public:
    using validation_error::validation_error;
};

class fit_error : public numerical_error {
public:
    using numerical_error::numerical_error;
};

} // namespace logshe
