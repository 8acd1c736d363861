#ifndef SGNN_TYPES_HPP
#define SGNN_TYPES_HPP

#include <Eigen/Dense>

namespace sgnn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Largest absolute entry of A - B; 0 for empty operands.
inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (a.size() == 0) return 0.0;
    return (a - b).cwiseAbs().maxCoeff();
}

inline double max_abs(const Matrix& a) { return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff(); }

}  // namespace sgnn

#endif  // SGNN_TYPES_HPP
