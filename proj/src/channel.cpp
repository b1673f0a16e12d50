#include "rdsig/channel.hpp"

#include <cmath>

namespace rdsig {

std::size_t Channel::supported_rows() const {
    std::size_t n = 0;
    for (bool s : support) n += s ? 1 : 0;
    return n;
}

void Channel::validate(double tol) const {
    const auto k = cond.rows();
    if (cond.cols() != k || prior.size() != k || support.size() != static_cast<std::size_t>(k))
        throw Error("channel dimensions are inconsistent");
    if ((cond.array() < 0).any() || (cond.array() > 1 + tol).any()) throw Error("channel entries outside [0,1]");
    if ((prior.array() < 0).any() || std::abs(prior.sum() - 1.0) > tol) throw Error("channel prior is not a distribution");
    for (Eigen::Index i = 0; i < k; ++i)
        if (support[static_cast<std::size_t>(i)] && std::abs(cond.row(i).sum() - 1.0) > tol)
            throw Error("channel row " + std::to_string(i) + " does not sum to 1");
}

Channel make_channel(Matrix cond, Vector prior) {
    Channel ch;
    ch.support.assign(static_cast<std::size_t>(cond.rows()), true);
    ch.cond = std::move(cond);
    ch.prior = std::move(prior);
    for (Eigen::Index i = 0; i < ch.prior.size(); ++i)
        if (ch.prior(i) == 0.0) ch.support[static_cast<std::size_t>(i)] = false;
    return ch;
}

Channel channel_from_counts(const ConfusionCounts& counts, PriorMode mode) {
    const auto k = counts.counts.rows();
    Channel ch;
    ch.cond = Matrix::Zero(k, k);
    ch.prior = Vector::Zero(k);
    ch.support.assign(static_cast<std::size_t>(k), false);

    double total = 0.0;
    std::size_t nsup = 0;
    for (Eigen::Index i = 0; i < k; ++i) {
        const auto row = counts.counts.row(i).sum();
        if (row < 0) throw Error("negative confusion count");
        if (row == 0) continue;
        ch.support[static_cast<std::size_t>(i)] = true;
        ++nsup;
        ch.cond.row(i) = counts.counts.row(i).cast<double>() / static_cast<double>(row);
        ch.prior(i) = static_cast<double>(row);
        total += static_cast<double>(row);
    }
    if (nsup == 0) throw Error("all rows of the confusion matrix are zero");

    if (mode == PriorMode::empirical) {
        ch.prior /= total;
    } else {
        for (Eigen::Index i = 0; i < k; ++i)
            ch.prior(i) = ch.support[static_cast<std::size_t>(i)] ? 1.0 / static_cast<double>(nsup) : 0.0;
    }
    return ch;
}

Channel smooth_counts(const ConfusionCounts& counts, double alpha) {
    if (!(alpha >= 0) || !std::isfinite(alpha)) throw Error("smoothing pseudocount must be a nonnegative number");
    const auto k = counts.counts.rows();
    if (alpha == 0.0) {
        bool zero_row = false;
        for (Eigen::Index i = 0; i < k; ++i) zero_row |= counts.counts.row(i).sum() == 0;
        Channel ch = channel_from_counts(counts);
        if (zero_row) ch.flags.set("alpha_zero_unsupported_rows");
        return ch;
    }
    Channel ch;
    ch.cond = Matrix::Zero(k, k);
    ch.prior = Vector::Zero(k);
    ch.support.assign(static_cast<std::size_t>(k), true);
    for (Eigen::Index i = 0; i < k; ++i) {
        const double denom = static_cast<double>(counts.counts.row(i).sum()) + alpha * static_cast<double>(k);
        for (Eigen::Index j = 0; j < k; ++j) ch.cond(i, j) = (static_cast<double>(counts.counts(i, j)) + alpha) / denom;
        ch.prior(i) = denom;
    }
    ch.prior /= ch.prior.sum();
    return ch;
}

Vector output_marginal(const Channel& ch) {
    return (ch.prior.transpose() * ch.cond).transpose();
}

double mutual_information(const Channel& ch) {
    const Vector py = output_marginal(ch);
    const auto k = ch.cond.rows();
    double mi = 0.0;
    for (Eigen::Index i = 0; i < k; ++i) {
        const double px = ch.prior(i);
        if (px <= 0.0) continue;
        double row = 0.0;
        for (Eigen::Index j = 0; j < k; ++j) {
            const double p = ch.cond(i, j);
            // p > 0 with px > 0 implies py(j) > 0
            if (p > 0.0) row += p * std::log2(p / py(j));
        }
        mi += px * row;
    }
    return mi > 0.0 ? mi : 0.0;
}

double expected_distortion(const Channel& ch, const Matrix& rho) {
    if (rho.rows() != ch.cond.rows() || rho.cols() != ch.cond.cols())
        throw Error("channel and cost matrix dimensions differ (" + std::to_string(ch.cond.rows()) + " vs " +
                    std::to_string(rho.rows()) + ")");
    double d = 0.0;
    for (Eigen::Index i = 0; i < ch.cond.rows(); ++i) {
        if (ch.prior(i) <= 0.0) continue;
        d += ch.prior(i) * ch.cond.row(i).dot(rho.row(i));
    }
    return d;
}

double accuracy(const Channel& ch) {
    return ch.prior.dot(ch.cond.diagonal());
}

InfoSummary summarize(const Channel& ch, const CostMatrix& rho) {
    return {mutual_information(ch), expected_distortion(ch, rho), accuracy(ch)};
}

}  // namespace rdsig
