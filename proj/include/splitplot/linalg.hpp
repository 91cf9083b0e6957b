#ifndef SPLITPLOT_LINALG_HPP
#define SPLITPLOT_LINALG_HPP

#include <Eigen/Dense>
#include <cmath>

#include "errors.hpp"

namespace splitplot {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

constexpr long default_materialization_cap = 4096;

inline Matrix kron(const Matrix& A, const Matrix& B) {
    Matrix K(A.rows() * B.rows(), A.cols() * B.cols());
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        for (Eigen::Index j = 0; j < A.cols(); ++j)
            K.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
    return K;
}

inline double max_asymmetry(const Matrix& M) {
    if (M.rows() != M.cols()) return INFINITY;
    return (M - M.transpose()).cwiseAbs().maxCoeff();
}

inline double max_idempotence_error(const Matrix& M) {
    return (M * M - M).cwiseAbs().maxCoeff();
}

inline bool all_finite(const Matrix& M) { return M.allFinite(); }

// Compensated (Neumaier) accumulator.
class KahanSum {
public:
    void add(double x) {
        double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            comp_ += (sum_ - t) + x;
        else
            comp_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

}  // namespace splitplot

#endif
