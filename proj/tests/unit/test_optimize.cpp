#include <doctest.h>

#include "rdsig/optimize.hpp"

using namespace rdsig;

namespace {

double rosenbrock(const Vector& x) {
    double f = 0;
    for (Eigen::Index i = 0; i + 1 < x.size(); ++i)
        f += 100 * std::pow(x(i + 1) - x(i) * x(i), 2) + std::pow(1 - x(i), 2);
    return f;
}

}  // namespace

TEST_CASE("finite differences") {
    const Objective f = [](const Vector& x) { return std::sin(x(0)) * x(1) + x(2) * x(2) * x(0); };
    const Vector x = (Vector(3) << 0.3, -1.2, 2.0).finished();
    const Vector g = fd_gradient(f, x, 1e-5);
    CHECK(g(0) == doctest::Approx(std::cos(0.3) * -1.2 + 4.0).epsilon(1e-8));
    CHECK(g(1) == doctest::Approx(std::sin(0.3)).epsilon(1e-8));
    CHECK(g(2) == doctest::Approx(2 * 2.0 * 0.3).epsilon(1e-8));
    CHECK(g == reference::fd_gradient_serial(f, x, 1e-5));

    const Matrix a = (Matrix(3, 3) << 4, 1, 0, 1, 3, -1, 0, -1, 2).finished();
    const Objective q = [&](const Vector& v) { return 0.5 * v.dot(a * v) + v.sum(); };
    const Matrix h = fd_hessian(q, x, 1e-3);
    CHECK((h - a).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(h == h.transpose());
}

TEST_CASE("quasi-Newton minimization") {
    OptimizerSettings s;
    s.max_iters = 2000;
    s.gtol = 1e-8;
    s.ftol = 0;
    const auto r = minimize_bfgs(rosenbrock, Vector::Constant(4, -1.0), s);
    CHECK(r.converged);
    CHECK((r.x - Vector::Ones(4)).cwiseAbs().maxCoeff() < 1e-4);
    for (std::size_t i = 1; i < r.trace.size(); ++i) CHECK(r.trace[i] <= r.trace[i - 1]);
    CHECK(r.trace.size() == static_cast<std::size_t>(r.iters) + 1);

    OptimizerSettings one = s;
    one.max_iters = 1;
    const auto r1 = minimize_bfgs(rosenbrock, Vector::Constant(4, -1.0), one);
    CHECK_FALSE(r1.converged);
    CHECK(r1.stop_reason == "max_iters");

    // |x| has no descent direction from its kink that FD can see
    const auto kink = minimize_bfgs([](const Vector& x) { return std::abs(x(0) - 1e-9) + 1.0; }, Vector::Zero(1), s);
    CHECK((kink.line_search_failed || kink.converged));

    OptimizerSettings bad;
    bad.fd_step = 0;
    CHECK_THROWS_AS(minimize_bfgs(rosenbrock, Vector::Zero(2), bad), Error);
}
