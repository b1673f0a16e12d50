#pragma once

#include "rdsig/types.hpp"

namespace rdsig {

// Distortion geometry over (true, response) pairs: nonnegative, zero
// diagonal, off-diagonal mean exactly 1.
class CostMatrix {
public:
    CostMatrix() = default;

    // Zeroes the diagonal and rescales the off-diagonal mean to 1.
    static CostMatrix normalized(const Matrix& rho);
    // Wraps rho as-is after checking the invariants (tolerance 1e-9 on the mean).
    static CostMatrix checked(const Matrix& rho);
    // 0-1 (Hamming) cost.
    static CostMatrix zero_one(std::size_t k);

    std::size_t k() const { return static_cast<std::size_t>(rho_.rows()); }
    const Matrix& values() const { return rho_; }
    double operator()(std::size_t i, std::size_t j) const {
        return rho_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }

    // Mean of the off-diagonal entries of a square matrix.
    static double off_diagonal_mean(const Matrix& m);

private:
    explicit CostMatrix(Matrix rho) : rho_(std::move(rho)) {}
    Matrix rho_;
};

}  // namespace rdsig
