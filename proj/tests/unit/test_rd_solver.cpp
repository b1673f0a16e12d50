#include <doctest.h>

#include <random>

#include "rdsig/rd_solver.hpp"
#include "rdsig/synth.hpp"
#include "support.hpp"

using namespace rdsig;

namespace {

Vector random_prior(std::mt19937_64& rng, Eigen::Index k) {
    std::uniform_real_distribution<double> u(0.2, 1.0);
    Vector p(k);
    for (Eigen::Index i = 0; i < k; ++i) p(i) = u(rng);
    return p / p.sum();
}

// Lower bound on R(D) from any output distribution q at slope lambda (nats):
// -lambda D - sum_x p log Z_x(q) - log max_y c(y).
double dual_bound_bits(const Matrix& rho, const Vector& p, double lambda, const Vector& q, double d) {
    const Eigen::Index k = rho.rows();
    Vector z = Vector::Zero(k);
    for (Eigen::Index x = 0; x < k; ++x)
        for (Eigen::Index y = 0; y < k; ++y) z(x) += q(y) * std::exp(-lambda * rho(x, y));
    double cmax = 0;
    for (Eigen::Index y = 0; y < k; ++y) {
        double c = 0;
        for (Eigen::Index x = 0; x < k; ++x) c += p(x) * std::exp(-lambda * rho(x, y)) / z(x);
        cmax = std::max(cmax, c);
    }
    double nats = -lambda * d - std::log(cmax);
    for (Eigen::Index x = 0; x < k; ++x) nats -= p(x) * std::log(z(x));
    return nats / std::log(2.0);
}

BASettings tight() {
    BASettings s;
    s.tol = 1e-13;
    s.max_iters = 20000;
    return s;
}

}  // namespace

TEST_CASE("lambda grid") {
    const auto g = lambda_grid(1e-2, 1e3, 64);
    REQUIRE(g.size() == 64);
    CHECK(g.front() == doctest::Approx(1e-2));
    CHECK(g.back() == doctest::Approx(1e3));
    for (std::size_t i = 1; i < g.size(); ++i)
        CHECK(std::log10(g[i]) - std::log10(g[i - 1]) == doctest::Approx(5.0 / 63.0));
    CHECK(default_lambda_grid() == g);
    CHECK_THROWS_AS(lambda_grid(0.0, 1.0, 5), Error);
    CHECK_THROWS_AS(lambda_grid(2.0, 1.0, 5), Error);
    CHECK_THROWS_AS(lambda_grid(1.0, 2.0, 1), Error);
}

TEST_CASE("invalid solver inputs") {
    const auto rho = CostMatrix::zero_one(3);
    const Vector p = Vector::Constant(3, 1.0 / 3);
    CHECK_THROWS_AS(ba_optimal_channel(rho, p, 0.0, {}), Error);
    CHECK_THROWS_AS(ba_optimal_channel(rho, p, -1.0, {}), Error);
    CHECK_THROWS_AS(ba_optimal_channel(rho, Vector::Constant(2, 0.5), 1.0, {}), Error);
    BASettings bad;
    bad.damping = 1.0;
    CHECK_THROWS_AS(ba_optimal_channel(rho, p, 1.0, bad), Error);
    CHECK_THROWS_AS(trace_curve(rho, p, {1.0}, {}), Error);
}

TEST_CASE("uniform source under 0-1 cost matches the closed form") {
    for (int k : {2, 3, 5, 10}) {
        const auto rho = CostMatrix::zero_one(static_cast<std::size_t>(k));
        const Vector p = Vector::Constant(k, 1.0 / k);
        for (double lambda : {0.3, 1.0, 2.5, 6.0}) {
            const auto pt = ba_optimal_channel(rho, p, lambda, tight());
            REQUIRE(pt.converged);
            const double e = std::exp(-lambda);
            const double d = (k - 1) * e / (1 + (k - 1) * e);
            CHECK(pt.distortion == doctest::Approx(d).epsilon(1e-9));
            CHECK(pt.rate == doctest::Approx(testing::kary_rd(d, k)).epsilon(1e-8));
        }
    }
}

TEST_CASE("solution is a fixed point and attains the dual bound") {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 30; ++t) {
        const auto k = static_cast<std::size_t>(2 + t % 7);
        const auto rho = random_cost_matrix(k, 500 + static_cast<std::uint64_t>(t));
        const Vector p = random_prior(rng, static_cast<Eigen::Index>(k));
        const double lambda = std::pow(10.0, -1.0 + 2.5 * (t % 10) / 9.0);
        const auto pt = ba_optimal_channel(rho, p, lambda, tight());
        REQUIRE(pt.converged);
        CHECK((ba_sweep(rho.values(), p, lambda, pt.output) - pt.output).cwiseAbs().maxCoeff() < 1e-10);
        pt.channel.validate(1e-9);

        const double bound = dual_bound_bits(rho.values(), p, lambda, pt.output, pt.distortion);
        CHECK(std::abs(bound - pt.rate) < 1e-7);
        // any other output distribution certifies a weaker bound
        Vector other = random_prior(rng, static_cast<Eigen::Index>(k));
        CHECK(dual_bound_bits(rho.values(), p, lambda, other, pt.distortion) <= pt.rate + 1e-9);
    }
}

TEST_CASE("limits of the inverse temperature") {
    const auto rho = random_cost_matrix(4, 9);
    const Vector p = (Vector(4) << 0.1, 0.2, 0.3, 0.4).finished();
    const auto cold = ba_optimal_channel(rho, p, 1e-4, tight());
    CHECK(cold.rate < 1e-6);
    const auto hot = ba_optimal_channel(rho, p, 200.0, tight());
    double h = 0;
    for (Eigen::Index i = 0; i < 4; ++i) h -= p(i) * std::log2(p(i));
    CHECK(hot.distortion < 1e-6);
    CHECK(hot.rate == doctest::Approx(h).epsilon(1e-6));
}

TEST_CASE("zero-prior rows stay empty") {
    const auto rho = random_cost_matrix(4, 2);
    const Vector p = (Vector(4) << 0.5, 0.0, 0.25, 0.25).finished();
    const auto pt = ba_optimal_channel(rho, p, 1.5, tight());
    CHECK_FALSE(pt.channel.support[1]);
    CHECK(pt.channel.cond.row(1).sum() == 0.0);
    pt.channel.validate(1e-9);
}

TEST_CASE("scale equivalence") {
    const auto rho = random_cost_matrix(5, 77);
    const Vector p = Vector::Constant(5, 0.2);
    for (double c : {0.1, 3.0, 40.0}) {
        const auto a = ba_optimal_channel(rho, p, 1.7, tight());
        const auto b = ba_optimal_channel(Matrix(c * rho.values()), p, 1.7 / c, tight());
        CHECK((a.channel.cond - b.channel.cond).cwiseAbs().maxCoeff() <= 1e-9);
        CHECK(b.rate == doctest::Approx(a.rate).epsilon(1e-8));
        CHECK(b.distortion == doctest::Approx(c * a.distortion).epsilon(1e-8));
    }
}

TEST_CASE("frontier is monotone and convex") {
    std::mt19937_64 rng(21);
    for (int t = 0; t < 25; ++t) {
        const auto k = static_cast<std::size_t>(3 + t % 6);
        const auto rho = random_cost_matrix(k, 1000 + static_cast<std::uint64_t>(t));
        const Vector p = random_prior(rng, static_cast<Eigen::Index>(k));
        const auto curve = trace_curve(rho, p, lambda_grid(1e-2, 1e2, 40), {});
        const auto& pts = curve.points;
        REQUIRE(pts.size() >= 3);
        for (std::size_t i = 0; i < pts.size(); ++i) {
            CHECK(pts[i].converged);
            CHECK(pts[i].rate >= -1e-12);
            if (i > 0) {
                CHECK(pts[i].distortion > pts[i - 1].distortion);
                CHECK(pts[i].rate <= pts[i - 1].rate + 1e-9);
            }
        }
        for (std::size_t i = 2; i < pts.size(); ++i) {
            const double s1 = (pts[i - 1].rate - pts[i - 2].rate) / (pts[i - 1].distortion - pts[i - 2].distortion);
            const double s2 = (pts[i].rate - pts[i - 1].rate) / (pts[i].distortion - pts[i - 1].distortion);
            CHECK(s2 >= s1 - 1e-6 * std::max(1.0, std::abs(s1)));
        }
    }
}

TEST_CASE("warm and cold starts agree") {
    const auto rho = random_cost_matrix(6, 31);
    const Vector p = Vector::Constant(6, 1.0 / 6);
    Vector warm;
    for (double lambda : lambda_grid(1e-2, 1e2, 30)) {
        const auto w = ba_optimal_channel(rho.values(), p, lambda, tight(), warm.size() ? &warm : nullptr);
        const auto c = ba_optimal_channel(rho.values(), p, lambda, tight());
        REQUIRE(w.converged);
        CHECK(w.rate == doctest::Approx(c.rate).epsilon(1e-7));
        CHECK(w.distortion == doctest::Approx(c.distortion).epsilon(1e-7));
        warm = w.output;
    }
    for (double lambda : {50.0, 5.0, 0.5, 0.05}) {
        const auto w = ba_optimal_channel(rho.values(), p, lambda, tight(), warm.size() ? &warm : nullptr);
        const auto c = ba_optimal_channel(rho.values(), p, lambda, tight());
        CHECK(w.rate == doctest::Approx(c.rate).epsilon(1e-7));
        warm = w.output;
    }
}

TEST_CASE("optimized kernel agrees with the serial reference") {
    std::mt19937_64 rng(5);
    BASettings ref;
    ref.tol = 1e-14;
    ref.max_iters = 200000;
    for (int t = 0; t < 20; ++t) {
        const auto k = static_cast<std::size_t>(2 + t % 6);
        const auto rho = random_cost_matrix(k, 40 + static_cast<std::uint64_t>(t), 0.5, 1.5);
        const Vector p = random_prior(rng, static_cast<Eigen::Index>(k));
        const double lambda = 0.5 + 0.25 * (t % 8);
        const auto a = ba_optimal_channel(rho, p, lambda, tight());
        const auto b = reference::ba_optimal_channel_serial(rho.values(), p, lambda, ref);
        CHECK(a.rate == doctest::Approx(b.rate).epsilon(1e-6));
        CHECK(a.distortion == doctest::Approx(b.distortion).epsilon(1e-6));
    }
}

TEST_CASE("duplicate distortions collapse to the higher rate") {
    std::vector<RDPoint> pts(3);
    pts[0].distortion = 0.5;
    pts[0].rate = 0.2;
    pts[1].distortion = 0.1;
    pts[1].rate = 0.9;
    pts[2].distortion = 0.5 + 1e-13;
    pts[2].rate = 0.3;
    const auto out = collapse_by_distortion(pts);
    REQUIRE(out.size() == 2);
    CHECK(out[0].distortion == 0.1);
    CHECK(out[1].rate == 0.3);
}
