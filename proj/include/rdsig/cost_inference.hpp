#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rdsig/cost_matrix.hpp"
#include "rdsig/ingest.hpp"
#include "rdsig/optimize.hpp"
#include "rdsig/rd_solver.hpp"

namespace rdsig {

struct PriorConfig {
    double tau_sym = 1.0;
    double tau_asym = 10.0;
    double tau_diag = 0.0;  // reserved: the diagonal is not a free parameter

    void validate() const;
};

// Upper bound on decoded (pre-normalization) cost entries.
inline constexpr double kCostCap = 50.0;

// Free parameters are the K(K-1) off-diagonal cells, row-major. A parameter
// maps to a cost through softplus, capped at kCostCap. The decoded matrix is
// the cost at inverse temperature 1; its off-diagonal mean is the absorbed
// temperature scale and the reported CostMatrix is its normalization.
std::size_t parameter_count(std::size_t k);
Matrix decode_costs(const Vector& theta, std::size_t k);
Vector encode_costs(const Matrix& raw);

struct PosteriorTerms {
    double objective = 0.0;  // negative log posterior (penalized when BA fails)
    double log_likelihood = 0.0;
    double log_prior = 0.0;
    Flags flags;
};

PosteriorTerms posterior_terms(const Vector& theta, const ConfusionCounts& counts, const PriorConfig& prior,
                               const BASettings& ba);
double neg_log_posterior(const Vector& theta, const ConfusionCounts& counts, const PriorConfig& prior,
                         const BASettings& ba);

// Tighter inner solve than the tracing default keeps FD gradients stable.
BASettings inference_ba_settings();

struct FitOptions {
    OptimizerSettings optimizer;
    BASettings ba = inference_ba_settings();
    bool zero_one_start = true;
    bool smoothed_start = true;
    bool inversion_start = true;
    std::vector<Matrix> extra_starts;  // raw (scale-carrying) cost matrices
};

struct FitResult {
    CostMatrix rho_map;  // normalized
    Matrix rho_raw;      // decoded costs at inverse temperature 1
    double scale = 1.0;  // off-diagonal mean of rho_raw
    Vector theta;
    double log_posterior = 0.0;
    bool converged = false;
    int iters = 0;
    std::string start;  // which initialization won
    std::vector<double> objective_trace;  // log posterior after each accepted step
    std::optional<Matrix> stderr_raw;     // Laplace, decoded units
    std::optional<Matrix> stderr_normalized;
    PriorConfig prior;
    Flags flags;
};

FitResult fit_cost_matrix(const ConfusionCounts& counts, const PriorConfig& prior = {}, const FitOptions& opt = {});

// Laplace approximation at the MAP. Fills fit.stderr_* when the Hessian is
// positive definite; otherwise leaves them empty and sets a flag.
void laplace_stderr(FitResult& fit, const ConfusionCounts& counts, double step = 1e-3);

// Standard errors from a Hessian in parameter space mapped to cost units;
// nullopt when the Hessian is not positive definite.
std::optional<Matrix> stderr_from_hessian(const Matrix& hessian, const Vector& theta, std::size_t k);

// Model channel q_{lambda=1}(j|i) implied by a fit under the counts' empirical prior.
Channel implied_channel(const FitResult& fit, const ConfusionCounts& counts, const BASettings& ba);

}  // namespace rdsig
