#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rdsig/types.hpp"

namespace rdsig {

// Must be safe to call concurrently from several threads.
using Objective = std::function<double(const Vector&)>;

struct OptimizerSettings {
    int max_iters = 500;
    double gtol = 1e-5;    // sup norm of the gradient
    double ftol = 1e-9;    // relative objective change per accepted step
    double fd_step = 1e-4; // central-difference step for gradients
    double max_step = 2.0; // cap on the sup norm of a trial step
};

struct OptimizeResult {
    Vector x;
    double f = 0.0;
    Vector gradient;
    bool converged = false;
    bool line_search_failed = false;
    int iters = 0;
    std::vector<double> trace;  // objective after each accepted step, starting at x0
    std::string stop_reason;
};

// Central differences. Every evaluation writes its own slot, so the result is
// bitwise independent of thread count and scheduling.
Vector fd_gradient(const Objective& f, const Vector& x, double h);

// Central second differences (step h) of f at x; symmetric by construction.
Matrix fd_hessian(const Objective& f, const Vector& x, double h);

// Quasi-Newton (BFGS) with Armijo backtracking and finite-difference gradients.
OptimizeResult minimize_bfgs(const Objective& f, Vector x0, const OptimizerSettings& settings);

namespace reference {

Vector fd_gradient_serial(const Objective& f, const Vector& x, double h);

}  // namespace reference

}  // namespace rdsig
