#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace linsarsa {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input: bad probabilities, shapes, parameter ranges.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// The chain is reducible, periodic, or leaves some state-action pair unvisited.
class ErgodicityError : public Error {
public:
    using Error::Error;
};

/// A linear system that must be solved is singular or numerically so.
class SingularSystemError : public Error {
public:
    SingularSystemError(const std::string& what, double condition_number)
        : Error(what), condition_(condition_number) {}
    double condition_number() const noexcept { return condition_; }

private:
    double condition_;
};

/// A simulated iterate became non-finite.
class NumericalError : public Error {
public:
    using Error::Error;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
    if (!condition) throw ValidationError(message);
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }

/// 2-norm condition number via SVD; +inf for a numerically rank-deficient matrix.
inline double condition_number(const Matrix& m) {
    Eigen::JacobiSVD<Matrix> svd(m);
    const auto& s = svd.singularValues();
    if (s.size() == 0) return 1.0;
    const double smallest = s(s.size() - 1);
    if (smallest <= 0.0) return kInf;
    return s(0) / smallest;
}

}  // namespace detail
}  // namespace linsarsa
