#pragma once

#include <cstdint>
#include <random>

#include "rdsig/channel.hpp"
#include "rdsig/cost_matrix.hpp"
#include "rdsig/ingest.hpp"

namespace rdsig {

// Row r of an observer with seed s is sampled from an mt19937_64 seeded with
// row_seed(s, r); uniforms take the top 53 bits; categories are drawn by
// inverse CDF. Everything here is specified bit-for-bit, so fixtures are
// identical across platforms and standard libraries.
inline constexpr const char* kGeneratorName = "mt19937_64+splitmix64-row-seed+inverse-cdf";

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t row_seed(std::uint64_t seed, std::uint64_t row);
double uniform01(std::mt19937_64& rng);

struct SyntheticObserver {
    CostMatrix rho_true;
    double lambda_true = 1.0;
    Vector prior;
    Channel channel;
    std::uint64_t seed = 0;
};

// Channel is the BA optimum at (rho, lambda, prior) solved to tol 1e-12.
SyntheticObserver make_observer(const CostMatrix& rho, double lambda, const Vector& prior, std::uint64_t seed);

// Multinomial draw of `trials_per_class` responses for every supported row.
ConfusionCounts sample_counts(const SyntheticObserver& obs, std::int64_t trials_per_class, const LabelSet& labels,
                              BlockRef key = {"synthetic", "synthetic", "synthetic", "synthetic"});

// Off-diagonal entries uniform in [lo, hi], then normalized.
CostMatrix random_cost_matrix(std::size_t k, std::uint64_t seed, double lo = 0.2, double hi = 2.0);

// Labels c0..c{k-1}.
LabelSet numbered_labels(std::size_t k);

}  // namespace rdsig
