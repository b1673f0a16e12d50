#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "rdsig/ingest.hpp"

namespace testing {

inline rdsig::LabelSet labels(std::size_t k) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < k; ++i) names.push_back("l" + std::to_string(i));
    return rdsig::LabelSet(names);
}

inline rdsig::ConfusionCounts counts(const rdsig::CountMatrix& m, rdsig::BlockRef key = {"s", "f", "e", "c"}) {
    rdsig::ConfusionCounts c;
    c.key = std::move(key);
    c.counts = m;
    c.labels = labels(static_cast<std::size_t>(m.rows()));
    return c;
}

// Binary entropy in bits.
inline double hb(double p) {
    if (p <= 0 || p >= 1) return 0.0;
    return -p * std::log2(p) - (1 - p) * std::log2(1 - p);
}

// Rate-distortion function of a uniform K-ary source under 0-1 cost.
inline double kary_rd(double d, int k) {
    if (d >= 1.0 - 1.0 / k) return 0.0;
    return std::log2(static_cast<double>(k)) - hb(d) - d * std::log2(static_cast<double>(k - 1));
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(a.size());
    mb /= static_cast<double>(b.size());
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

template <class M>
std::vector<double> off_diagonal(const M& m) {
    std::vector<double> v;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            if (i != j) v.push_back(static_cast<double>(m(i, j)));
    return v;
}

template <class M>
M permuted(const M& m, const std::vector<int>& perm) {
    M out(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) out(perm[i], perm[j]) = m(i, j);
    return out;
}

}  // namespace testing

#include "rdsig/stats.hpp"

namespace testing {

// Signature rows for two families (A reference, B) over `blocks` blocks of
// `per_block` rows: y = 1.5 acc + 0.3 [B] + block effect + interaction acc [B] + N(0, sd).
inline rdsig::SignatureTable additive_panel(std::uint64_t seed, double interaction, int blocks = 20,
                                            int per_block = 10, double sd = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, sd);
    std::uniform_real_distribution<double> acc(0.3, 0.9), eff(-5.0, 5.0);
    rdsig::SignatureTable t;
    for (int b = 0; b < blocks; ++b) {
        const double be = eff(rng);
        for (int r = 0; r < per_block; ++r) {
            rdsig::SignatureRow row;
            const bool fam_b = r % 2 == 1;
            row.family = fam_b ? "B" : "A";
            row.system = row.family + std::to_string(r / 2);
            row.block = {"exp", "blk" + std::to_string(b)};
            row.accuracy = acc(rng);
            row.beta_median =
                1.5 * row.accuracy + (fam_b ? 0.3 + interaction * row.accuracy : 0.0) + be + noise(rng);
            t.push_back(row);
        }
    }
    return t;
}

}  // namespace testing
