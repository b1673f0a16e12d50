// Optimized kernels against their serial references.
#include <benchmark/benchmark.h>

#include "rdsig/cost_inference.hpp"
#include "rdsig/optimize.hpp"
#include "rdsig/rd_solver.hpp"
#include "rdsig/synth.hpp"

using namespace rdsig;

namespace {

Vector uniform(Eigen::Index k) { return Vector::Constant(k, 1.0 / static_cast<double>(k)); }

void ba_kernel(benchmark::State& state) {
    const auto k = static_cast<std::size_t>(state.range(0));
    const auto rho = random_cost_matrix(k, 7);
    for (auto _ : state) benchmark::DoNotOptimize(ba_optimal_channel(rho, uniform(state.range(0)), 2.0, {}));
}

void ba_serial(benchmark::State& state) {
    const auto k = static_cast<std::size_t>(state.range(0));
    const auto rho = random_cost_matrix(k, 7);
    for (auto _ : state)
        benchmark::DoNotOptimize(reference::ba_optimal_channel_serial(rho.values(), uniform(state.range(0)), 2.0, {}));
}

void trace(benchmark::State& state) {
    const auto rho = random_cost_matrix(16, 7);
    const bool warm = state.range(0) != 0;
    for (auto _ : state) benchmark::DoNotOptimize(trace_curve(rho, uniform(16), default_lambda_grid(), {}, warm));
}

// Posterior of a K=5 fit: the objective whose gradients drive cost inference.
struct PosteriorFixture {
    ConfusionCounts counts;
    Objective f;
    Vector x;
    PosteriorFixture() {
        const auto obs = make_observer(random_cost_matrix(5, 3), 2.0, uniform(5), 3);
        counts = sample_counts(obs, 5000, numbered_labels(5));
        f = [this](const Vector& t) { return neg_log_posterior(t, counts, {}, inference_ba_settings()); };
        x = encode_costs(2.0 * random_cost_matrix(5, 4).values());
    }
};

void fd_gradient_parallel(benchmark::State& state) {
    PosteriorFixture fx;
    for (auto _ : state) benchmark::DoNotOptimize(fd_gradient(fx.f, fx.x, 1e-4));
}

void fd_gradient_serial(benchmark::State& state) {
    PosteriorFixture fx;
    for (auto _ : state) benchmark::DoNotOptimize(reference::fd_gradient_serial(fx.f, fx.x, 1e-4));
}

}  // namespace

BENCHMARK(ba_kernel)->Arg(8)->Arg(32)->Arg(128);
BENCHMARK(ba_serial)->Arg(8)->Arg(32)->Arg(128);
BENCHMARK(trace)->Arg(0)->Arg(1);
BENCHMARK(fd_gradient_parallel);
BENCHMARK(fd_gradient_serial);

BENCHMARK_MAIN();
