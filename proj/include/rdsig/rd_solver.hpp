#pragma once

#include <vector>

#include "rdsig/channel.hpp"
#include "rdsig/cost_matrix.hpp"
#include "rdsig/types.hpp"

namespace rdsig {

struct BASettings {
    int max_iters = 5000;
    double tol = 1e-10;  // sup-norm change in q(y) per sweep
    double damping = 0.0;

    void validate() const;
};

struct RDPoint {
    double lambda = 0.0;
    double rate = 0.0;  // bits
    double distortion = 0.0;
    Channel channel;
    Vector output;  // converged q(y)
    bool converged = false;
    int iters = 0;
    double residual = 0.0;  // last sup-norm change in q(y)
};

struct RDCurve {
    std::vector<RDPoint> points;  // increasing distortion, duplicates collapsed
    Matrix rho;
    Vector prior;
};

using LambdaGrid = std::vector<double>;

// n log10-equispaced values from lo to hi inclusive.
LambdaGrid lambda_grid(double lo, double hi, int n);
LambdaGrid default_lambda_grid();

// Channel q(y|x) proportional to q(y) exp(-lambda rho(x,y)), computed with
// per-row max subtraction. Rows with zero prior are left at zero.
Matrix optimal_conditional(const Matrix& rho, const Vector& prior, double lambda, const Vector& q);

// One Blahut-Arimoto sweep: q(y) -> sum_x p(x) q(y|x).
Vector ba_sweep(const Matrix& rho, const Vector& prior, double lambda, const Vector& q);

// Fixed point of the alternating updates, starting from `warm` when given.
// rho may be any nonnegative matrix (inference works with unnormalized costs).
RDPoint ba_optimal_channel(const Matrix& rho, const Vector& prior, double lambda, const BASettings& settings,
                           const Vector* warm = nullptr);
inline RDPoint ba_optimal_channel(const CostMatrix& rho, const Vector& prior, double lambda,
                                  const BASettings& settings) {
    return ba_optimal_channel(rho.values(), prior, lambda, settings);
}

// One point per distinct lambda, sorted by distortion, with points whose
// distortion differs by <= kDuplicateDistortion collapsed to the higher rate.
RDCurve trace_curve(const Matrix& rho, const Vector& prior, const LambdaGrid& grid, const BASettings& settings,
                    bool warm_start = true);
inline RDCurve trace_curve(const CostMatrix& rho, const Vector& prior, const LambdaGrid& grid,
                           const BASettings& settings, bool warm_start = true) {
    return trace_curve(rho.values(), prior, grid, settings, warm_start);
}

inline constexpr double kDuplicateDistortion = 1e-12;

// Sort by distortion and collapse duplicates (keep max rate).
std::vector<RDPoint> collapse_by_distortion(std::vector<RDPoint> points);

namespace reference {

// Plain serial Blahut-Arimoto (no log-space stabilisation, no warm start).
// Kept as an independent check on the optimized kernel.
RDPoint ba_optimal_channel_serial(const Matrix& rho, const Vector& prior, double lambda, const BASettings& settings);

}  // namespace reference

}  // namespace rdsig
