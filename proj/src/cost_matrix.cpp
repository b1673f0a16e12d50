#include "rdsig/cost_matrix.hpp"

#include <cmath>

namespace rdsig {

double CostMatrix::off_diagonal_mean(const Matrix& m) {
    const auto k = m.rows();
    if (k < 2 || m.cols() != k) throw Error("cost matrix must be square with K >= 2");
    double s = 0.0;
    for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = 0; j < k; ++j)
            if (i != j) s += m(i, j);
    return s / static_cast<double>(k * (k - 1));
}

CostMatrix CostMatrix::normalized(const Matrix& rho) {
    if (!rho.allFinite()) throw Error("cost matrix has non-finite entries");
    Matrix m = rho;
    m.diagonal().setZero();
    if ((m.array() < 0).any()) throw Error("cost matrix has negative entries");
    const double mean = off_diagonal_mean(m);
    if (!(mean > 0)) throw Error("cost matrix has no positive off-diagonal entry");
    m /= mean;
    return CostMatrix(std::move(m));
}

CostMatrix CostMatrix::checked(const Matrix& rho) {
    if (!rho.allFinite()) throw Error("cost matrix has non-finite entries");
    if ((rho.array() < 0).any()) throw Error("cost matrix has negative entries");
    for (Eigen::Index i = 0; i < rho.rows(); ++i)
        if (rho(i, i) != 0.0) throw Error("cost matrix diagonal must be zero");
    if (std::abs(off_diagonal_mean(rho) - 1.0) > 1e-9) throw Error("cost matrix off-diagonal mean must be 1");
    return CostMatrix(rho);
}

CostMatrix CostMatrix::zero_one(std::size_t k) {
    const auto n = static_cast<Eigen::Index>(k);
    Matrix m = Matrix::Ones(n, n);
    m.diagonal().setZero();
    return CostMatrix(std::move(m));
}

}  // namespace rdsig
