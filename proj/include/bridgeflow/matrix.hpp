#pragma once

#include <Eigen/Dense>

#include "bridgeflow/errors.hpp"

namespace bridgeflow {

// All dense data is stored row-major in 64-bit floats; a row is one point.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

using Index = Eigen::Index;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }
inline bool all_finite(const Vector& v) { return v.allFinite(); }

inline void require_finite(const Matrix& m, const char* what) {
    if (!m.allFinite()) throw NumericalError(std::string("non-finite values in ") + what);
}

inline void require_shape(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

}  // namespace bridgeflow
