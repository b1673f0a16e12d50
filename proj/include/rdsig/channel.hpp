#pragma once

#include <vector>

#include "rdsig/cost_matrix.hpp"
#include "rdsig/ingest.hpp"
#include "rdsig/types.hpp"

namespace rdsig {

enum class PriorMode { empirical, uniform };

// Row-stochastic conditional p(y=j | x=i) with a class prior. Rows outside
// the support (classes never shown) are all-zero and carry zero prior mass.
struct Channel {
    Matrix cond;
    Vector prior;
    std::vector<bool> support;
    Flags flags;

    std::size_t k() const { return static_cast<std::size_t>(cond.rows()); }
    std::size_t supported_rows() const;
    void validate(double tol = 1e-12) const;
};

struct InfoSummary {
    double mutual_information = 0.0;  // bits
    double expected_distortion = 0.0;
    double accuracy = 0.0;
};

Channel channel_from_counts(const ConfusionCounts& counts, PriorMode mode = PriorMode::empirical);

// Additive pseudocount per cell before row normalization. With alpha > 0
// every row is supported and the prior is the smoothed row mass.
Channel smooth_counts(const ConfusionCounts& counts, double alpha);

// p(y) = sum_i p(i) p(y|i).
Vector output_marginal(const Channel& ch);

double mutual_information(const Channel& ch);
double expected_distortion(const Channel& ch, const Matrix& rho);
inline double expected_distortion(const Channel& ch, const CostMatrix& rho) {
    return expected_distortion(ch, rho.values());
}
double accuracy(const Channel& ch);
InfoSummary summarize(const Channel& ch, const CostMatrix& rho);

// Wraps a conditional and prior; rows with zero prior are marked unsupported.
Channel make_channel(Matrix cond, Vector prior);

}  // namespace rdsig
