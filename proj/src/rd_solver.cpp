#include "rdsig/rd_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>

namespace rdsig {

namespace {

// Below this alphabet size a sweep is too small to amortize a parallel region.
constexpr Eigen::Index kParallelRows = 96;

void check_inputs(const Matrix& rho, const Vector& prior, double lambda) {
    if (!(lambda > 0) || !std::isfinite(lambda)) throw Error("lambda must be positive and finite");
    if (rho.rows() != rho.cols() || rho.rows() < 2) throw Error("cost matrix must be square with K >= 2");
    if (prior.size() != rho.rows()) throw Error("prior length does not match cost matrix");
    if ((prior.array() < 0).any() || !prior.allFinite()) throw Error("prior has negative or non-finite entries");
    if (!(prior.sum() > 0)) throw Error("prior has zero total mass");
    if ((rho.array() < 0).any() || !rho.allFinite()) throw Error("cost matrix has negative or non-finite entries");
}

Channel to_channel(Matrix cond, const Vector& prior) {
    Channel ch;
    ch.cond = std::move(cond);
    ch.prior = prior;
    ch.support.resize(static_cast<std::size_t>(prior.size()));
    for (Eigen::Index i = 0; i < prior.size(); ++i) ch.support[static_cast<std::size_t>(i)] = prior(i) > 0;
    return ch;
}

}  // namespace

void BASettings::validate() const {
    if (max_iters < 1) throw Error("BA max_iters must be >= 1");
    if (!(tol > 0)) throw Error("BA tol must be positive");
    if (!(damping >= 0 && damping < 1)) throw Error("BA damping must be in [0,1)");
}

LambdaGrid lambda_grid(double lo, double hi, int n) {
    if (!(lo > 0) || !std::isfinite(hi) || !(lo < hi)) throw Error("lambda grid needs 0 < lo < hi");
    if (n < 2) throw Error("lambda grid needs at least 2 points");
    LambdaGrid g(static_cast<std::size_t>(n));
    const double a = std::log10(lo);
    const double step = (std::log10(hi) - a) / (n - 1);
    for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = std::pow(10.0, a + step * i);
    g.front() = lo;
    g.back() = hi;
    return g;
}

LambdaGrid default_lambda_grid() {
    return lambda_grid(1e-2, 1e3, 64);
}

Matrix optimal_conditional(const Matrix& rho, const Vector& prior, double lambda, const Vector& q) {
    const Eigen::Index k = rho.rows();
    Matrix cond = Matrix::Zero(k, k);
    Vector logq(k);
    for (Eigen::Index j = 0; j < k; ++j)
        logq(j) = q(j) > 0 ? std::log(q(j)) : -std::numeric_limits<double>::infinity();

#pragma omp parallel for schedule(static) if (k >= kParallelRows)
    for (Eigen::Index x = 0; x < k; ++x) {
        if (!(prior(x) > 0)) continue;
        auto row = cond.row(x);
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index y = 0; y < k; ++y) {
            row(y) = logq(y) - lambda * rho(x, y);
            mx = std::max(mx, row(y));
        }
        double z = 0.0;
        for (Eigen::Index y = 0; y < k; ++y) {
            row(y) = std::exp(row(y) - mx);
            z += row(y);
        }
        row /= z;
    }
    return cond;
}

namespace {

Vector marginal(const Matrix& cond, const Vector& prior) {
    const Eigen::Index k = cond.rows();
    Vector out = Vector::Zero(k);
#pragma omp parallel for schedule(static) if (k >= kParallelRows)
    for (Eigen::Index y = 0; y < k; ++y) {
        double s = 0.0;
        for (Eigen::Index x = 0; x < k; ++x) s += prior(x) * cond(x, y);
        out(y) = s;
    }
    return out;
}

// exp(-lambda (rho - rowmin)): every supported row keeps an entry equal to 1,
// so a sweep is two matrix-vector products with no logs or exps.
Matrix shifted_kernel(const Matrix& rho, double lambda) {
    const Eigen::Index k = rho.rows();
    Matrix w(k, k);
#pragma omp parallel for schedule(static) if (k >= kParallelRows)
    for (Eigen::Index x = 0; x < k; ++x) {
        const double lo = rho.row(x).minCoeff();
        for (Eigen::Index y = 0; y < k; ++y) w(x, y) = std::exp(-lambda * (rho(x, y) - lo));
    }
    return w;
}

// next(y) = q(y) c(y) with c(y) = sum_x p(x) w(x,y) / z(x). False when a
// normalizer z(x) underflows, in which case the caller takes a log-space
// sweep instead.
bool kernel_sweep(const Matrix& w, const Vector& prior, const Vector& q, Vector& ratio, Vector& c, Vector& next) {
    const Eigen::Index k = w.rows();
    bool ok = true;
#pragma omp parallel for schedule(static) reduction(&& : ok) if (k >= kParallelRows)
    for (Eigen::Index x = 0; x < k; ++x) {
        if (!(prior(x) > 0)) {
            ratio(x) = 0.0;
            continue;
        }
        double z = 0.0;
        for (Eigen::Index y = 0; y < k; ++y) z += w(x, y) * q(y);
        ok = ok && z > 1e-290;
        ratio(x) = prior(x) / z;
    }
    if (!ok) return false;
#pragma omp parallel for schedule(static) if (k >= kParallelRows)
    for (Eigen::Index y = 0; y < k; ++y) {
        double s = 0.0;
        for (Eigen::Index x = 0; x < k; ++x) s += ratio(x) * w(x, y);
        c(y) = s;
        const double v = q(y) * s;
        // an output this small never revives; zeroing it avoids subnormal arithmetic
        next(y) = v < 1e-300 ? 0.0 : v;
    }
    return true;
}

// Plain sweeps after which a stalled solve switches to Newton polishing.
constexpr int kSweepsBeforePolish = 200;
// Tolerance on c(y) <= 1 when declaring convergence.
constexpr double kKktSlack = 1e-6;

double dual_value(const Matrix& w, const Vector& prior, const Vector& q) {
    double g = 0.0;
    for (Eigen::Index x = 0; x < w.rows(); ++x) {
        if (!(prior(x) > 0)) continue;
        const double z = w.row(x).dot(q);
        if (!(z > 0)) return -std::numeric_limits<double>::infinity();
        g += prior(x) * std::log(z);
    }
    return g;
}

// The BA fixed point maximizes sum_x p(x) log sum_y q(y) w(x,y) over the
// simplex. Active-set Newton ascent on that problem; outputs leave the set
// when they hit zero and re-enter (once) when c(y) = sum_x p(x) w(x,y) / z(x)
// exceeds 1. Sweeps converge only geometrically, and arbitrarily slowly when
// an output is about to drop out, which is where inference tends to sit.
bool newton_polish(const Matrix& w, const Vector& prior, Vector& q) {
    const Eigen::Index k = w.rows();
    std::vector<bool> active(static_cast<std::size_t>(k)), revived(static_cast<std::size_t>(k), false);
    for (Eigen::Index y = 0; y < k; ++y) active[static_cast<std::size_t>(y)] = q(y) > 0;
    Vector z(k), c(k);

    for (int round = 0; round < 200; ++round) {
        for (Eigen::Index x = 0; x < k; ++x) {
            z(x) = prior(x) > 0 ? w.row(x).dot(q) : 1.0;
            if (!(z(x) > 1e-290)) return false;
        }
        for (Eigen::Index y = 0; y < k; ++y) {
            double s = 0.0;
            for (Eigen::Index x = 0; x < k; ++x)
                if (prior(x) > 0) s += prior(x) * w(x, y) / z(x);
            c(y) = s;
        }
        std::vector<Eigen::Index> idx;
        double kkt = 0.0;
        for (Eigen::Index y = 0; y < k; ++y)
            if (active[static_cast<std::size_t>(y)]) {
                idx.push_back(y);
                kkt = std::max(kkt, std::abs(c(y) - 1.0));
            }
        if (kkt <= 1e-14) {
            Eigen::Index best = -1;
            for (Eigen::Index y = 0; y < k; ++y)
                if (!active[static_cast<std::size_t>(y)] && !revived[static_cast<std::size_t>(y)] &&
                    c(y) > 1.0 + 1e-12 && (best < 0 || c(y) > c(best)))
                    best = y;
            if (best < 0) {
                for (Eigen::Index y = 0; y < k; ++y)
                    if (!active[static_cast<std::size_t>(y)] && c(y) > 1.0 + 1e-12) return false;
                return true;
            }
            active[static_cast<std::size_t>(best)] = revived[static_cast<std::size_t>(best)] = true;
            q(best) = 1e-6;
            q /= q.sum();
            continue;
        }

        const auto m = static_cast<Eigen::Index>(idx.size());
        Matrix h = Matrix::Zero(m, m);
        Vector grad(m);
        for (Eigen::Index a = 0; a < m; ++a) grad(a) = c(idx[static_cast<std::size_t>(a)]);
        for (Eigen::Index x = 0; x < k; ++x) {
            if (!(prior(x) > 0)) continue;
            const double s = prior(x) / (z(x) * z(x));
            for (Eigen::Index a = 0; a < m; ++a) {
                const double wa = w(x, idx[static_cast<std::size_t>(a)]) * s;
                for (Eigen::Index b = 0; b < m; ++b) h(a, b) += wa * w(x, idx[static_cast<std::size_t>(b)]);
            }
        }
        h.diagonal().array() += 1e-14 * h.trace() / static_cast<double>(m);
        const Eigen::LDLT<Matrix> ldlt(h);
        if (ldlt.info() != Eigen::Success) return false;
        const Vector u = ldlt.solve(grad);
        const Vector v = ldlt.solve(Vector::Ones(m));
        const Vector d = u - (u.sum() / v.sum()) * v;
        if (!d.allFinite()) return false;

        double t = 1.0;
        Eigen::Index hit = -1;
        for (Eigen::Index a = 0; a < m; ++a) {
            const double qa = q(idx[static_cast<std::size_t>(a)]);
            if (d(a) < 0 && qa + d(a) <= 0 && -qa / d(a) < t) {
                t = -qa / d(a);
                hit = a;
            }
        }
        const double g0 = dual_value(w, prior, q);
        if (hit >= 0) {
            Vector cand = q;
            for (Eigen::Index a = 0; a < m; ++a) cand(idx[static_cast<std::size_t>(a)]) += t * d(a);
            cand(idx[static_cast<std::size_t>(hit)]) = 0.0;
            cand = cand.cwiseMax(0.0);
            cand /= cand.sum();
            if (dual_value(w, prior, cand) >= g0) {
                q = std::move(cand);
                active[static_cast<std::size_t>(idx[static_cast<std::size_t>(hit)])] = false;
                continue;
            }
            t *= 0.5;  // stay strictly inside and backtrack below
        }

        bool moved = false;
        for (int half = 0; half < 40 && !moved; ++half, t *= 0.5) {
            Vector cand = q;
            for (Eigen::Index a = 0; a < m; ++a) cand(idx[static_cast<std::size_t>(a)]) += t * d(a);
            cand /= cand.sum();
            if (dual_value(w, prior, cand) >= g0) {
                q = std::move(cand);
                moved = true;
            }
        }
        if (!moved) return kkt < 1e-9;
    }
    return false;
}

}  // namespace

Vector ba_sweep(const Matrix& rho, const Vector& prior, double lambda, const Vector& q) {
    const Vector p = prior / prior.sum();
    return marginal(optimal_conditional(rho, p, lambda, q), p);
}

RDPoint ba_optimal_channel(const Matrix& rho, const Vector& prior_in, double lambda, const BASettings& settings,
                           const Vector* warm) {
    check_inputs(rho, prior_in, lambda);
    settings.validate();
    const Eigen::Index k = rho.rows();
    const Vector prior = prior_in / prior_in.sum();

    Vector q;
    if (warm && warm->size() == k && warm->allFinite() && warm->sum() > 0) {
        // keep every output reachable: BA cannot revive an exact zero
        q = (*warm / warm->sum()).array() * (1.0 - 1e-12) + 1e-12 / static_cast<double>(k);
    } else {
        q = Vector::Constant(k, 1.0 / static_cast<double>(k));
    }

    RDPoint pt;
    pt.lambda = lambda;
    const Matrix w = shifted_kernel(rho, lambda);
    Vector ratio(k), c(k), next(k);
    for (int it = 1; it <= settings.max_iters; ++it) {
        // A small change in q is not enough on its own: an output that should
        // be in use but starts near zero grows by a tiny amount per sweep. At
        // the optimum no output has c(y) > 1.
        bool kkt = true;
        if (kernel_sweep(w, prior, q, ratio, c, next)) {
            kkt = c.maxCoeff() <= 1.0 + kKktSlack;
            bool reseeded = false;
            for (Eigen::Index y = 0; y < k; ++y)
                if (next(y) == 0.0 && c(y) > 1.0 + kKktSlack) {
                    next(y) = 1e-12;  // a sweep cannot grow an exact zero
                    reseeded = true;
                }
            if (reseeded) next /= next.sum();
        } else
            next = marginal(optimal_conditional(rho, prior, lambda, q), prior);
        if (settings.damping > 0) next = (1.0 - settings.damping) * next + settings.damping * q;
        pt.residual = (next - q).cwiseAbs().maxCoeff();
        q.swap(next);
        pt.iters = it;
        if (pt.residual <= settings.tol && kkt) {
            pt.converged = true;
            break;
        }
        if (it % kSweepsBeforePolish == 0) {
            Vector polished = q;
            if (newton_polish(w, prior, polished) && dual_value(w, prior, polished) >= dual_value(w, prior, q))
                q = std::move(polished);
        }
    }
    pt.channel = to_channel(optimal_conditional(rho, prior, lambda, q), prior);
    pt.output = std::move(q);
    pt.rate = mutual_information(pt.channel);
    pt.distortion = expected_distortion(pt.channel, rho);
    if (!pt.converged) pt.channel.flags.set("ba_not_converged");
    return pt;
}

std::vector<RDPoint> collapse_by_distortion(std::vector<RDPoint> points) {
    std::stable_sort(points.begin(), points.end(),
                     [](const RDPoint& a, const RDPoint& b) { return a.distortion < b.distortion; });
    std::vector<RDPoint> out;
    out.reserve(points.size());
    for (auto& p : points) {
        if (!out.empty() && p.distortion - out.back().distortion <= kDuplicateDistortion) {
            if (p.rate > out.back().rate) out.back() = std::move(p);
            continue;
        }
        out.push_back(std::move(p));
    }
    return out;
}

RDCurve trace_curve(const Matrix& rho, const Vector& prior, const LambdaGrid& grid, const BASettings& settings,
                    bool warm_start) {
    if (grid.size() < 2) throw Error("lambda grid needs at least 2 points");
    for (double l : grid)
        if (!(l > 0) || !std::isfinite(l)) throw Error("lambda grid has a non-positive or non-finite value");
    check_inputs(rho, prior, grid.front());
    settings.validate();

    std::vector<double> seen;
    std::vector<RDPoint> points;
    Vector warm;
    for (double l : grid) {
        if (std::find(seen.begin(), seen.end(), l) != seen.end()) continue;
        seen.push_back(l);
        RDPoint pt = ba_optimal_channel(rho, prior, l, settings, warm_start && warm.size() ? &warm : nullptr);
        if (warm_start) warm = pt.output;
        points.push_back(std::move(pt));
    }

    RDCurve curve;
    curve.points = collapse_by_distortion(std::move(points));
    curve.rho = rho;
    curve.prior = prior / prior.sum();
    return curve;
}

namespace reference {

RDPoint ba_optimal_channel_serial(const Matrix& rho, const Vector& prior_in, double lambda,
                                  const BASettings& settings) {
    check_inputs(rho, prior_in, lambda);
    const std::size_t k = static_cast<std::size_t>(rho.rows());
    const double mass = prior_in.sum();
    std::vector<double> p(k), q(k, 1.0 / static_cast<double>(k)), kernel(k * k), cond(k * k);
    for (std::size_t x = 0; x < k; ++x) p[x] = prior_in(static_cast<Eigen::Index>(x)) / mass;
    for (std::size_t x = 0; x < k; ++x)
        for (std::size_t y = 0; y < k; ++y)
            kernel[x * k + y] = std::exp(-lambda * rho(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y)));

    auto update_cond = [&] {
        for (std::size_t x = 0; x < k; ++x) {
            double z = 0.0;
            for (std::size_t y = 0; y < k; ++y) z += q[y] * kernel[x * k + y];
            for (std::size_t y = 0; y < k; ++y) cond[x * k + y] = p[x] > 0 ? q[y] * kernel[x * k + y] / z : 0.0;
        }
    };

    RDPoint pt;
    pt.lambda = lambda;
    for (int it = 1; it <= settings.max_iters; ++it) {
        update_cond();
        double res = 0.0;
        for (std::size_t y = 0; y < k; ++y) {
            double s = 0.0;
            for (std::size_t x = 0; x < k; ++x) s += p[x] * cond[x * k + y];
            res = std::max(res, std::abs(s - q[y]));
            q[y] = s;
        }
        pt.iters = it;
        pt.residual = res;
        if (res <= settings.tol) {
            pt.converged = true;
            break;
        }
    }
    update_cond();

    Matrix c(rho.rows(), rho.cols());
    Vector pv(rho.rows()), qv(rho.rows());
    for (std::size_t x = 0; x < k; ++x) {
        pv(static_cast<Eigen::Index>(x)) = p[x];
        qv(static_cast<Eigen::Index>(x)) = q[x];
        for (std::size_t y = 0; y < k; ++y)
            c(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y)) = cond[x * k + y];
    }
    pt.channel = to_channel(std::move(c), pv);
    pt.output = qv;
    pt.rate = mutual_information(pt.channel);
    pt.distortion = expected_distortion(pt.channel, rho);
    return pt;
}

}  // namespace reference

}  // namespace rdsig
