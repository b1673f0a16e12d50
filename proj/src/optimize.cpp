#include "rdsig/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rdsig {

namespace {

double safe_eval(const Objective& f, const Vector& x) {
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::max();
}

}  // namespace

Vector fd_gradient(const Objective& f, const Vector& x, double h) {
    const Eigen::Index n = x.size();
    std::vector<double> vals(static_cast<std::size_t>(2 * n));
#pragma omp parallel for schedule(dynamic)
    for (Eigen::Index e = 0; e < 2 * n; ++e) {
        Vector xp = x;
        xp(e / 2) += (e % 2 == 0) ? h : -h;
        vals[static_cast<std::size_t>(e)] = safe_eval(f, xp);
    }
    Vector g(n);
    for (Eigen::Index i = 0; i < n; ++i)
        g(i) = (vals[static_cast<std::size_t>(2 * i)] - vals[static_cast<std::size_t>(2 * i + 1)]) / (2 * h);
    return g;
}

Matrix fd_hessian(const Objective& f, const Vector& x, double h) {
    const Eigen::Index n = x.size();
    const double f0 = safe_eval(f, x);

    // diagonal: f(x +- h e_i); off-diagonal: f(x + a h e_i + b h e_j), a,b in {+1,-1}
    struct Probe {
        Eigen::Index i, j;
        double a, b;
    };
    std::vector<Probe> probes;
    probes.reserve(static_cast<std::size_t>(2 * n + 2 * n * (n - 1)));
    for (Eigen::Index i = 0; i < n; ++i) {
        probes.push_back({i, i, 1, 0});
        probes.push_back({i, i, -1, 0});
    }
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j)
            for (double a : {1.0, -1.0})
                for (double b : {1.0, -1.0}) probes.push_back({i, j, a, b});

    std::vector<double> vals(probes.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t p = 0; p < probes.size(); ++p) {
        Vector xp = x;
        xp(probes[p].i) += probes[p].a * h;
        if (probes[p].j != probes[p].i) xp(probes[p].j) += probes[p].b * h;
        vals[p] = safe_eval(f, xp);
    }

    Matrix hess(n, n);
    std::size_t p = 0;
    for (Eigen::Index i = 0; i < n; ++i, p += 2) hess(i, i) = (vals[p] - 2 * f0 + vals[p + 1]) / (h * h);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j, p += 4) {
            const double v = (vals[p] - vals[p + 1] - vals[p + 2] + vals[p + 3]) / (4 * h * h);
            hess(i, j) = hess(j, i) = v;
        }
    return hess;
}

OptimizeResult minimize_bfgs(const Objective& f, Vector x0, const OptimizerSettings& s) {
    if (!(s.fd_step > 0) || s.max_iters < 0) throw Error("invalid optimizer settings");
    const Eigen::Index n = x0.size();
    OptimizeResult r;
    r.x = std::move(x0);
    r.f = safe_eval(f, r.x);
    r.gradient = fd_gradient(f, r.x, s.fd_step);
    r.trace.push_back(r.f);

    Matrix hinv = Matrix::Identity(n, n);
    bool scaled = false;
    r.stop_reason = "max_iters";
    for (int it = 0; it < s.max_iters; ++it) {
        if (r.gradient.cwiseAbs().maxCoeff() <= s.gtol) {
            r.converged = true;
            r.stop_reason = "gtol";
            break;
        }
        Vector d = -hinv * r.gradient;
        double slope = r.gradient.dot(d);
        if (!(slope < 0)) {
            hinv.setIdentity();
            d = -r.gradient;
            slope = r.gradient.dot(d);
        }
        const double dmax = d.cwiseAbs().maxCoeff();
        if (dmax > s.max_step) {
            d *= s.max_step / dmax;
            slope = r.gradient.dot(d);
        }

        double t = 1.0;
        Vector xn;
        double fn = 0.0;
        bool accepted = false;
        for (int ls = 0; ls < 50; ++ls, t *= 0.5) {
            xn = r.x + t * d;
            fn = safe_eval(f, xn);
            if (fn <= r.f + 1e-4 * t * slope) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            r.line_search_failed = true;
            r.stop_reason = "line_search";
            break;
        }

        Vector gn = fd_gradient(f, xn, s.fd_step);
        const Vector step = xn - r.x;
        const Vector dy = gn - r.gradient;
        const double sy = step.dot(dy);
        if (sy > 1e-12 * step.norm() * dy.norm()) {
            if (!scaled) {
                hinv *= sy / dy.squaredNorm();
                scaled = true;
            }
            const double rho = 1.0 / sy;
            const Vector hy = hinv * dy;
            hinv += ((sy + dy.dot(hy)) * rho * rho) * (step * step.transpose()) -
                    rho * (hy * step.transpose() + step * hy.transpose());
        }
        const double change = std::abs(r.f - fn) / std::max(1.0, std::abs(fn));
        r.x = std::move(xn);
        r.f = fn;
        r.gradient = std::move(gn);
        r.trace.push_back(fn);
        r.iters = it + 1;
        if (change <= s.ftol) {
            r.converged = true;
            r.stop_reason = "ftol";
            break;
        }
    }
    if (!r.converged && r.stop_reason == "max_iters" && r.gradient.cwiseAbs().maxCoeff() <= s.gtol) {
        r.converged = true;
        r.stop_reason = "gtol";
    }
    return r;
}

namespace reference {

Vector fd_gradient_serial(const Objective& f, const Vector& x, double h) {
    Vector g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        Vector xp = x, xm = x;
        xp(i) += h;
        xm(i) -= h;
        g(i) = (safe_eval(f, xp) - safe_eval(f, xm)) / (2 * h);
    }
    return g;
}

}  // namespace reference

}  // namespace rdsig
