#include "rdsig/synth.hpp"

#include <algorithm>
#include <cmath>

#include "rdsig/rd_solver.hpp"

namespace rdsig {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t row_seed(std::uint64_t seed, std::uint64_t row) {
    return splitmix64(splitmix64(seed) ^ (row + 1));
}

double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

SyntheticObserver make_observer(const CostMatrix& rho, double lambda, const Vector& prior, std::uint64_t seed) {
    BASettings ba;
    ba.tol = 1e-12;
    ba.max_iters = 1000000;
    RDPoint pt = ba_optimal_channel(rho, prior, lambda, ba);
    if (!pt.converged) throw Error("synthetic observer: Blahut-Arimoto did not converge");
    SyntheticObserver obs;
    obs.rho_true = rho;
    obs.lambda_true = lambda;
    obs.prior = prior / prior.sum();
    obs.channel = std::move(pt.channel);
    obs.seed = seed;
    return obs;
}

ConfusionCounts sample_counts(const SyntheticObserver& obs, std::int64_t trials_per_class, const LabelSet& labels,
                              BlockRef key) {
    if (trials_per_class < 1) throw Error("trials_per_class must be >= 1");
    const auto k = obs.channel.cond.rows();
    if (static_cast<std::size_t>(k) != labels.size()) throw Error("label set size does not match observer");
    ConfusionCounts out{std::move(key), CountMatrix::Zero(k, k), labels};

#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < k; ++i) {
        if (!obs.channel.support[static_cast<std::size_t>(i)]) continue;
        std::vector<double> cdf(static_cast<std::size_t>(k));
        double acc = 0.0;
        for (Eigen::Index j = 0; j < k; ++j) {
            acc += obs.channel.cond(i, j);
            cdf[static_cast<std::size_t>(j)] = acc;
        }
        std::mt19937_64 rng(row_seed(obs.seed, static_cast<std::uint64_t>(i)));
        for (std::int64_t t = 0; t < trials_per_class; ++t) {
            const double u = uniform01(rng) * acc;
            auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
            auto j = std::min<std::ptrdiff_t>(it - cdf.begin(), k - 1);
            // skip zero-probability cells that share a cdf value
            while (j > 0 && obs.channel.cond(i, j) == 0.0) --j;
            out.counts(i, j) += 1;
        }
    }
    return out;
}

CostMatrix random_cost_matrix(std::size_t k, std::uint64_t seed, double lo, double hi) {
    if (!(lo >= 0) || !(hi > lo)) throw Error("random cost range needs 0 <= lo < hi");
    std::mt19937_64 rng(splitmix64(seed));
    const auto n = static_cast<Eigen::Index>(k);
    Matrix m = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            if (i != j) m(i, j) = lo + (hi - lo) * uniform01(rng);
    return CostMatrix::normalized(m);
}

LabelSet numbered_labels(std::size_t k) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < k; ++i) names.push_back("c" + std::to_string(i));
    return LabelSet(std::move(names));
}

}  // namespace rdsig
