#include "rdsig/cost_inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rdsig/channel.hpp"

namespace rdsig {

namespace {

constexpr double kPenalty = 1e30;

double softplus(double t) {
    return t > 30 ? t : std::log1p(std::exp(t));
}

double softplus_inverse(double v) {
    return v > 30 ? v : std::log(std::expm1(v));
}

double sigmoid(double t) {
    return 1.0 / (1.0 + std::exp(-t));
}

Vector empirical_prior(const ConfusionCounts& counts) {
    Vector p = counts.counts.rowwise().sum().cast<double>();
    return p / p.sum();
}

Matrix zero_one_start(const ConfusionCounts& counts) {
    const auto k = static_cast<double>(counts.k());
    const double acc = (static_cast<double>(counts.counts.diagonal().sum()) + 0.5) /
                       (static_cast<double>(counts.total()) + 1.0);
    // uniform-output BA accuracy for 0-1 cost at scale c is 1 / (1 + (K-1) e^{-c})
    double c = std::log((k - 1.0) * acc / (1.0 - acc));
    c = std::clamp(c, 0.05, 20.0);
    Matrix m = CostMatrix::zero_one(counts.k()).values() * c;
    return m;
}

Matrix smoothed_start(const ConfusionCounts& counts) {
    const Channel sm = smooth_counts(counts, 0.5);
    const auto k = sm.cond.rows();
    Matrix m = Matrix::Zero(k, k);
    for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = 0; j < k; ++j)
            if (i != j) m(i, j) = std::max(0.05, std::log(sm.cond(i, i)) - std::log(sm.cond(i, j)));
    return m;
}

// Inverts the fixed-point equations. On the outputs in use (columns with
// counts) the channel C = BA(rho) satisfies
//   rho(i,j) = log q(j) - log C(j|i) - log Z(i),
// and rho(i,i) = 0 fixes Z(i) whenever output i is itself in use. A row whose
// own output is unused gets the largest Z(i) that keeps its costs positive.
// Unused outputs get costs just high enough that they stay unused, i.e.
// sum_x p(x) exp(-rho(x,j)) / Z(x) < 1.
Matrix inversion_start(const ConfusionCounts& counts) {
    constexpr double kFloor = 0.05;
    const Channel sm = smooth_counts(counts, 0.5);
    const auto k = sm.cond.rows();
    const Vector p = empirical_prior(counts);
    std::vector<bool> used(static_cast<std::size_t>(k));
    double mass = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
        used[static_cast<std::size_t>(j)] = counts.counts.col(j).sum() > 0;
        if (used[static_cast<std::size_t>(j)]) mass += sm.prior.dot(sm.cond.col(j));
    }
    Vector logq = Vector::Zero(k);
    for (Eigen::Index j = 0; j < k; ++j)
        if (used[static_cast<std::size_t>(j)]) logq(j) = std::log(sm.prior.dot(sm.cond.col(j)) / mass);

    Matrix m = Matrix::Zero(k, k);
    Vector logz = Vector::Zero(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        double lz = 0.0;
        if (used[static_cast<std::size_t>(i)]) {
            lz = logq(i) - std::log(sm.cond(i, i));
        } else {
            lz = std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j < k; ++j)
                if (used[static_cast<std::size_t>(j)]) lz = std::min(lz, logq(j) - std::log(sm.cond(i, j)) - kFloor);
        }
        double z = 0.0;
        for (Eigen::Index j = 0; j < k; ++j) {
            if (i == j || !used[static_cast<std::size_t>(j)]) continue;
            m(i, j) = std::clamp(logq(j) - std::log(sm.cond(i, j)) - lz, kFloor, kCostCap);
            z += std::exp(logq(j) - m(i, j));
        }
        if (used[static_cast<std::size_t>(i)]) z += std::exp(logq(i));
        logz(i) = std::log(z);
    }
    for (Eigen::Index j = 0; j < k; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        // row j reaches output j at zero cost; the other rows share what is left
        const double own = p(j) * std::exp(-logz(j));
        const double budget = std::max(1.0 - own, 0.05) / static_cast<double>(k - 1);
        for (Eigen::Index x = 0; x < k; ++x) {
            if (x == j) continue;
            m(x, j) = p(x) > 0 ? std::clamp(std::log(p(x) / budget) - logz(x) + 0.1, kFloor, kCostCap) : kFloor;
        }
    }
    return m;
}

}  // namespace

void PriorConfig::validate() const {
    if (!(tau_sym >= 0) || !(tau_asym >= 0) || !(tau_diag >= 0)) throw Error("prior precisions must be >= 0");
}

BASettings inference_ba_settings() {
    BASettings s;
    s.tol = 1e-12;
    s.max_iters = 100000;
    return s;
}

std::size_t parameter_count(std::size_t k) {
    return k * (k - 1);
}

Matrix decode_costs(const Vector& theta, std::size_t k) {
    if (static_cast<std::size_t>(theta.size()) != parameter_count(k)) throw Error("parameter vector has wrong length");
    const auto n = static_cast<Eigen::Index>(k);
    Matrix m = Matrix::Zero(n, n);
    Eigen::Index p = 0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            if (i != j) m(i, j) = std::min(softplus(theta(p++)), kCostCap);
    return m;
}

Vector encode_costs(const Matrix& raw) {
    const auto n = raw.rows();
    Vector theta(n * (n - 1));
    Eigen::Index p = 0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            if (i != j) theta(p++) = softplus_inverse(std::clamp(raw(i, j), 1e-8, kCostCap));
    return theta;
}

PosteriorTerms posterior_terms(const Vector& theta, const ConfusionCounts& counts, const PriorConfig& prior,
                               const BASettings& ba) {
    const std::size_t k = counts.k();
    const Matrix raw = decode_costs(theta, k);

    PosteriorTerms t;
    const Matrix sym = 0.5 * (raw + raw.transpose());
    const Matrix asym = 0.5 * (raw - raw.transpose());
    // diagonals of both are zero, so Frobenius norms cover off-diagonal cells only
    t.log_prior = -0.5 * prior.tau_sym * sym.squaredNorm() - 0.5 * prior.tau_asym * asym.squaredNorm();

    const RDPoint pt = ba_optimal_channel(raw, empirical_prior(counts), 1.0, ba);
    if (!pt.converged) t.flags.set("ba_not_converged");

    double ll = 0.0;
    for (Eigen::Index i = 0; i < counts.counts.rows(); ++i)
        for (Eigen::Index j = 0; j < counts.counts.cols(); ++j) {
            const auto n = counts.counts(i, j);
            if (n == 0) continue;
            ll += static_cast<double>(n) * std::log(pt.channel.cond(i, j));
        }
    t.log_likelihood = ll;
    if (!std::isfinite(ll)) t.flags.set("zero_model_probability");

    t.objective = -(ll + t.log_prior);
    if (!pt.converged || !std::isfinite(t.objective)) t.objective = kPenalty;
    return t;
}

double neg_log_posterior(const Vector& theta, const ConfusionCounts& counts, const PriorConfig& prior,
                         const BASettings& ba) {
    return posterior_terms(theta, counts, prior, ba).objective;
}

FitResult fit_cost_matrix(const ConfusionCounts& counts, const PriorConfig& prior, const FitOptions& opt) {
    counts.validate();
    prior.validate();
    const std::size_t k = counts.k();
    std::size_t supported = 0;
    for (std::size_t i = 0; i < k; ++i) supported += counts.row_total(i) > 0 ? 1 : 0;
    if (supported < 2) throw Error("cost inference needs at least 2 classes with trials");
    if (counts.total() < static_cast<std::int64_t>(k))
        throw Error("cost inference needs at least K trials (" + std::to_string(k) + ")");

    struct Start {
        std::string name;
        Matrix raw;
    };
    std::vector<Start> starts;
    if (opt.zero_one_start) starts.push_back({"zero_one", zero_one_start(counts)});
    if (opt.smoothed_start) starts.push_back({"smoothed_confusions", smoothed_start(counts)});
    if (opt.inversion_start) starts.push_back({"channel_inversion", inversion_start(counts)});
    for (std::size_t s = 0; s < opt.extra_starts.size(); ++s)
        starts.push_back({"extra_" + std::to_string(s), opt.extra_starts[s]});
    if (starts.empty()) throw Error("no initialization selected");

    const Objective f = [&](const Vector& th) { return neg_log_posterior(th, counts, prior, opt.ba); };

    std::optional<OptimizeResult> best;
    std::string best_name;
    bool all_failed_ls = true;
    for (const auto& s : starts) {
        if (s.raw.rows() != static_cast<Eigen::Index>(k) || s.raw.cols() != static_cast<Eigen::Index>(k))
            throw Error("initial cost matrix has wrong size");
        const Vector theta0 = encode_costs(s.raw);
        if (f(theta0) >= kPenalty) {
            // the penalty plateau has zero gradient and would pass as converged
            if (!best) {
                best.emplace();
                best->x = theta0;
                best->f = kPenalty;
                best_name = s.name;
            }
            continue;
        }
        OptimizeResult r = minimize_bfgs(f, theta0, opt.optimizer);
        all_failed_ls = all_failed_ls && r.line_search_failed;
        if (!best || r.f < best->f || best->f >= kPenalty) {
            best = std::move(r);
            best_name = s.name;
        }
    }

    // When the objective keeps falling along rho -> c rho (no off-diagonal
    // evidence), the optimizer stalls on a vanishing gradient short of the cap.
    if (best->f < kPenalty) {
        const Matrix raw = decode_costs(best->x, k);
        if (raw.maxCoeff() > 0 && raw.maxCoeff() < kCostCap) {
            const Vector capped = encode_costs(raw * (kCostCap / raw.maxCoeff()));
            const double fc = f(capped);
            if (fc < best->f) {
                best->x = capped;
                best->f = fc;
                best->trace.push_back(fc);
            }
        }
    }

    FitResult fit;
    fit.prior = prior;
    fit.theta = best->x;
    fit.rho_raw = decode_costs(best->x, k);
    fit.scale = CostMatrix::off_diagonal_mean(fit.rho_raw);
    fit.rho_map = CostMatrix::normalized(fit.rho_raw);
    fit.converged = best->converged;
    fit.iters = best->iters;
    fit.start = best_name;
    fit.log_posterior = -best->f;
    for (double v : best->trace) fit.objective_trace.push_back(-v);

    const PosteriorTerms terms = posterior_terms(best->x, counts, prior, opt.ba);
    fit.flags.merge(terms.flags);
    if (!fit.converged) fit.flags.set("fit_not_converged");
    if (all_failed_ls && !best->trace.empty()) fit.flags.set("line_search_failed");
    if ((fit.rho_raw.array() >= kCostCap).any()) fit.flags.set("cost_cap_reached");
    return fit;
}

std::optional<Matrix> stderr_from_hessian(const Matrix& hessian, const Vector& theta, std::size_t k) {
    if (!hessian.allFinite()) return std::nullopt;
    Eigen::LLT<Eigen::MatrixXd> llt(hessian);
    if (llt.info() != Eigen::Success) return std::nullopt;
    const Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(hessian.rows(), hessian.cols()));
    const auto n = static_cast<Eigen::Index>(k);
    Matrix se = Matrix::Zero(n, n);
    Eigen::Index p = 0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;
            const double var = cov(p, p);
            if (!(var > 0)) return std::nullopt;
            // capped cells have zero decode derivative
            const double jac = softplus(theta(p)) >= kCostCap ? 0.0 : sigmoid(theta(p));
            se(i, j) = jac * std::sqrt(var);
            ++p;
        }
    return se;
}

void laplace_stderr(FitResult& fit, const ConfusionCounts& counts, double step) {
    fit.stderr_raw.reset();
    fit.stderr_normalized.reset();
    if (!fit.converged) {
        fit.flags.set("stderr_unavailable_not_converged");
        return;
    }
    const BASettings ba = inference_ba_settings();
    const PriorConfig prior = fit.prior;
    const Objective f = [&](const Vector& th) { return neg_log_posterior(th, counts, prior, ba); };
    const Matrix h = fd_hessian(f, fit.theta, step);
    auto se = stderr_from_hessian(h, fit.theta, counts.k());
    if (!se) {
        fit.flags.set("hessian_not_positive_definite");
        return;
    }
    fit.stderr_normalized = *se / fit.scale;
    fit.stderr_raw = std::move(se);
}

Channel implied_channel(const FitResult& fit, const ConfusionCounts& counts, const BASettings& ba) {
    return ba_optimal_channel(fit.rho_raw, empirical_prior(counts), 1.0, ba).channel;
}

}  // namespace rdsig
