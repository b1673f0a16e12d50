#include "rdsig/stats.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/students_t.hpp>

namespace rdsig {

double median(std::vector<double> v) {
    if (v.empty()) throw Error("median of an empty set");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double SignatureRow::metric(const std::string& name) const {
    if (name == "accuracy") return accuracy;
    if (name == "beta_median" || name == "beta") return beta_median;
    if (name == "beta_mean") return beta_mean;
    if (name == "kappa") return kappa;
    if (name == "auc") return auc;
    if (name == "beta_n") return beta_n;
    if (name == "kappa_n") return kappa_n;
    if (name == "log10_abs_beta") return std::log10(std::abs(beta_median));
    if (name == "log10_kappa") return std::log10(std::max(kappa, 1e-12));
    throw Error("unknown metric '" + name + "'");
}

bool is_known_metric(const std::string& name) {
    static const std::set<std::string> known = {"accuracy", "beta_median", "beta",           "beta_mean",  "kappa",
                                                "auc",      "beta_n",      "kappa_n", "log10_abs_beta", "log10_kappa"};
    return known.count(name) > 0;
}

bool is_log_metric(const std::string& name) {
    return name == "log10_abs_beta" || name == "log10_kappa";
}

MatchResult match_blocks(const SignatureTable& table, const std::string& a, const std::string& b,
                         const std::string& metric, PairingLevel level) {
    if (!is_known_metric(metric)) throw Error("unknown metric '" + metric + "'");
    auto id_of = [level](const SignatureRow& r) -> const std::string& {
        return level == PairingLevel::system ? r.system : r.family;
    };
    std::map<BlockKey, std::vector<double>> va, vb;
    std::set<BlockKey> present_a, present_b;
    for (const auto& r : table) {
        const std::string& id = id_of(r);
        if (id != a && id != b) continue;
        const double v = r.metric(metric);
        auto& present = id == a ? present_a : present_b;
        auto& vals = id == a ? va : vb;
        present.insert(r.block);
        if (std::isfinite(v)) vals[r.block].push_back(v);
        // a == b (self contrast): the same row feeds both sides
        if (a == b) {
            present_b.insert(r.block);
            if (std::isfinite(v)) vb[r.block].push_back(v);
        }
    }

    MatchResult out;
    for (const auto& blk : present_a) {
        if (!present_b.count(blk)) continue;
        auto ia = va.find(blk), ib = vb.find(blk);
        if (ia == va.end() || ib == vb.end()) {
            ++out.excluded;
            continue;
        }
        out.pairs.push_back({blk, median(ia->second), median(ib->second)});
    }
    if (out.pairs.empty() && out.excluded == 0) throw Error("no matched blocks between '" + a + "' and '" + b + "'");
    return out;
}

std::vector<std::uint64_t> signed_rank_counts(const std::vector<int>& doubled_ranks) {
    const int total = std::accumulate(doubled_ranks.begin(), doubled_ranks.end(), 0);
    std::vector<std::uint64_t> counts(static_cast<std::size_t>(total) + 1, 0);
    counts[0] = 1;
    int reach = 0;
    for (int r : doubled_ranks) {
        for (int t = reach; t >= 0; --t)
            if (counts[static_cast<std::size_t>(t)]) counts[static_cast<std::size_t>(t + r)] += counts[static_cast<std::size_t>(t)];
        reach += r;
    }
    return counts;
}

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& diffs, WilcoxonMode mode) {
    std::vector<double> nz;
    for (double d : diffs) {
        if (!std::isfinite(d)) throw Error("non-finite difference");
        if (d != 0.0) nz.push_back(d);
    }
    if (nz.empty()) throw Error("degenerate: no nonzero differences");
    const int n = static_cast<int>(nz.size());

    std::vector<std::size_t> order(nz.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return std::abs(nz[i]) < std::abs(nz[j]); });

    // doubled mid-ranks: a tie group spanning 1-based positions s..e gets s+e
    std::vector<int> doubled(nz.size());
    std::vector<int> tie_sizes;
    for (std::size_t s = 0; s < order.size();) {
        std::size_t e = s;
        while (e + 1 < order.size() && std::abs(nz[order[e + 1]]) == std::abs(nz[order[s]])) ++e;
        for (std::size_t q = s; q <= e; ++q) doubled[order[q]] = static_cast<int>(s + 1 + e + 1);
        tie_sizes.push_back(static_cast<int>(e - s + 1));
        s = e + 1;
    }

    int t_plus2 = 0, total2 = 0;
    for (std::size_t i = 0; i < nz.size(); ++i) {
        total2 += doubled[i];
        if (nz[i] > 0) t_plus2 += doubled[i];
    }

    WilcoxonResult res;
    res.n_eff = n;
    res.w_plus = t_plus2 / 2.0;
    res.w_minus = (total2 - t_plus2) / 2.0;

    const bool exact = mode == WilcoxonMode::exact || (mode == WilcoxonMode::automatic && n <= kExactWilcoxonLimit);
    res.exact = exact;
    if (exact) {
        if (n > 62) throw Error("exact signed-rank test limited to 62 nonzero differences");
        const auto counts = signed_rank_counts(doubled);
        std::uint64_t le = 0, ge = 0;
        for (std::size_t t = 0; t < counts.size(); ++t) {
            if (static_cast<int>(t) <= t_plus2) le += counts[t];
            if (static_cast<int>(t) >= t_plus2) ge += counts[t];
        }
        const double p = 2.0 * static_cast<double>(std::min(le, ge)) / std::ldexp(1.0, n);
        res.p_value = std::min(1.0, p);
    } else {
        const double nn = n;
        const double mean = nn * (nn + 1) / 4.0;
        double var = nn * (nn + 1) * (2 * nn + 1) / 24.0;
        for (int t : tie_sizes) var -= (static_cast<double>(t) * t * t - t) / 48.0;
        if (var <= 0) {
            res.p_value = 1.0;
        } else {
            const double z = std::max(0.0, std::abs(res.w_plus - mean) - 0.5) / std::sqrt(var);
            res.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
        }
    }
    return res;
}

std::vector<double> bh_fdr(const std::vector<double>& p) {
    const std::size_t m = p.size();
    for (double v : p)
        if (!(v >= 0 && v <= 1)) throw Error("p-values must lie in [0,1]");
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return p[i] < p[j]; });
    std::vector<double> q(m);
    double running = 1.0;
    for (std::size_t r = m; r-- > 0;) {
        // m/(r+1) >= 1 first, so rounding never takes q below p
        const double v = p[order[r]] * (static_cast<double>(m) / static_cast<double>(r + 1));
        running = std::min(running, v);
        q[order[r]] = std::min(1.0, running);
    }
    return q;
}

PairedTestResult paired_compare(const std::string& a, const std::string& b, const std::string& metric,
                                const SignatureTable& table, PairingLevel level, WilcoxonMode mode) {
    PairedTestResult r;
    r.a = a;
    r.b = b;
    r.metric = metric;
    r.level = level;
    const MatchResult m = match_blocks(table, a, b, metric, level);
    r.n_blocks = static_cast<int>(m.pairs.size());
    r.excluded_blocks = m.excluded;
    if (m.pairs.empty()) {
        r.error = "no usable matched blocks";
        r.flags.set("degenerate");
        return r;
    }
    std::vector<double> diffs;
    for (const auto& p : m.pairs) diffs.push_back(p.a - p.b);
    r.delta_median = median(diffs);
    try {
        const WilcoxonResult w = wilcoxon_signed_rank(diffs, mode);
        r.w_plus = w.w_plus;
        r.w_minus = w.w_minus;
        r.p_value = w.p_value;
        r.r_rb = (w.w_plus - w.w_minus) / (w.w_plus + w.w_minus);
        if (!w.exact) r.flags.set("normal_approximation");
    } catch (const Error& e) {
        r.error = e.what();
        r.flags.set("degenerate");
    }
    return r;
}

void assign_q_values(std::vector<PairedTestResult>& results) {
    std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> families;
    for (std::size_t i = 0; i < results.size(); ++i)
        if (results[i].ok()) families[{results[i].fdr_set, results[i].metric}].push_back(i);
    for (const auto& [key, idx] : families) {
        std::vector<double> p;
        for (std::size_t i : idx) p.push_back(results[i].p_value);
        const auto q = bh_fdr(p);
        for (std::size_t n = 0; n < idx.size(); ++n) results[idx[n]].q_value = q[n];
    }
}

namespace {

struct BlockIndex {
    std::vector<int> of_row;  // -1 for dropped rows
    int n_blocks = 0;
    int dropped = 0;
};

BlockIndex index_blocks(const std::vector<std::string>& labels) {
    std::map<std::string, int> size;
    for (const auto& b : labels) ++size[b];
    std::map<std::string, int> id;
    BlockIndex bi;
    for (const auto& [b, n] : size) {
        if (n < 2) {
            ++bi.dropped;
            continue;
        }
        id[b] = bi.n_blocks++;
    }
    for (const auto& b : labels) {
        auto it = id.find(b);
        bi.of_row.push_back(it == id.end() ? -1 : it->second);
    }
    return bi;
}

void check_rank(const Matrix& x, const std::vector<std::string>& names) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    qr.setThreshold(1e-10);
    if (qr.rank() == x.cols()) return;
    std::string cols;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index c = qr.rank(); c < x.cols(); ++c) {
        const auto col = perm(c);
        if (!cols.empty()) cols += ", ";
        cols += col < static_cast<Eigen::Index>(names.size()) ? names[static_cast<std::size_t>(col)]
                                                             : "block_" + std::to_string(col - static_cast<Eigen::Index>(names.size()));
    }
    throw Error("rank-deficient design: collinear column(s) " + cols);
}

RegressionResult finish_ols(const Matrix& x, const Vector& y, std::size_t n_named, int df_absorbed,
                            const std::vector<std::string>& names) {
    const auto n = static_cast<int>(y.size());
    const auto p = static_cast<int>(x.cols());
    RegressionResult r;
    r.n = n;
    r.names = names;
    r.df_resid = n - df_absorbed - p;
    if (r.df_resid <= 0) throw Error("no residual degrees of freedom (n=" + std::to_string(n) + ")");

    const Eigen::MatrixXd xd = x;
    const Eigen::MatrixXd xtx = xd.transpose() * xd;
    const Eigen::VectorXd beta = xtx.ldlt().solve(xd.transpose() * y);
    const Eigen::VectorXd resid = y - xd * beta;
    r.rss = resid.squaredNorm();
    const double sigma2 = r.rss / r.df_resid;
    const Eigen::MatrixXd cov = sigma2 * xtx.inverse();

    r.coef = beta.head(static_cast<Eigen::Index>(n_named));
    r.std_error = Vector(static_cast<Eigen::Index>(n_named));
    r.p = Vector(static_cast<Eigen::Index>(n_named));
    const boost::math::students_t dist(r.df_resid);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n_named); ++i) {
        r.std_error(i) = std::sqrt(std::max(0.0, cov(i, i)));
        if (r.std_error(i) > 0) {
            const double t = std::abs(r.coef(i)) / r.std_error(i);
            r.p(i) = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, t)));
        } else {
            r.p(i) = r.coef(i) == 0.0 ? 1.0 : 0.0;
        }
    }
    return r;
}

// Rows that survive singleton-block dropping.
std::vector<Eigen::Index> kept_rows(const BlockIndex& bi) {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < bi.of_row.size(); ++i)
        if (bi.of_row[i] >= 0) rows.push_back(static_cast<Eigen::Index>(i));
    return rows;
}

void check_panel(const PanelData& d) {
    if (static_cast<std::size_t>(d.y.size()) != d.block.size() || d.x.rows() != d.y.size())
        throw Error("panel data rows are inconsistent");
    if (static_cast<std::size_t>(d.x.cols()) != d.names.size()) throw Error("panel data needs one name per column");
}

}  // namespace

RegressionResult within_ols(const PanelData& data) {
    check_panel(data);
    const BlockIndex bi = index_blocks(data.block);
    if (bi.n_blocks < 2) throw Error("fixed-effects regression needs at least 2 blocks with 2+ rows");
    const auto rows = kept_rows(bi);
    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto p = data.x.cols();

    Matrix x(n, p);
    Vector y(n);
    std::vector<int> blk(rows.size());
    for (Eigen::Index r = 0; r < n; ++r) {
        x.row(r) = data.x.row(rows[static_cast<std::size_t>(r)]);
        y(r) = data.y(rows[static_cast<std::size_t>(r)]);
        blk[static_cast<std::size_t>(r)] = bi.of_row[static_cast<std::size_t>(rows[static_cast<std::size_t>(r)])];
    }
    Matrix xm = Matrix::Zero(bi.n_blocks, p);
    Vector ym = Vector::Zero(bi.n_blocks);
    Vector cnt = Vector::Zero(bi.n_blocks);
    for (Eigen::Index r = 0; r < n; ++r) {
        const int b = blk[static_cast<std::size_t>(r)];
        xm.row(b) += x.row(r);
        ym(b) += y(r);
        cnt(b) += 1;
    }
    for (int b = 0; b < bi.n_blocks; ++b) {
        xm.row(b) /= cnt(b);
        ym(b) /= cnt(b);
    }
    for (Eigen::Index r = 0; r < n; ++r) {
        const int b = blk[static_cast<std::size_t>(r)];
        x.row(r) -= xm.row(b);
        y(r) -= ym(b);
    }
    check_rank(x, data.names);
    RegressionResult res = finish_ols(x, y, static_cast<std::size_t>(p), bi.n_blocks, data.names);
    res.n_blocks = bi.n_blocks;
    res.dropped_singleton_blocks = bi.dropped;
    return res;
}

RegressionResult dummy_ols(const PanelData& data) {
    check_panel(data);
    const BlockIndex bi = index_blocks(data.block);
    if (bi.n_blocks < 2) throw Error("fixed-effects regression needs at least 2 blocks with 2+ rows");
    const auto rows = kept_rows(bi);
    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto p = data.x.cols();
    Matrix x = Matrix::Zero(n, p + bi.n_blocks);
    Vector y(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const auto src = rows[static_cast<std::size_t>(r)];
        x.row(r).head(p) = data.x.row(src);
        x(r, p + bi.of_row[static_cast<std::size_t>(src)]) = 1.0;
        y(r) = data.y(src);
    }
    check_rank(x, data.names);
    RegressionResult res = finish_ols(x, y, static_cast<std::size_t>(p), 0, data.names);
    res.n_blocks = bi.n_blocks;
    res.dropped_singleton_blocks = bi.dropped;
    return res;
}

PanelData build_panel(const SignatureTable& table, const std::string& outcome, const std::string& reference_family,
                      bool interactions) {
    if (!is_known_metric(outcome)) throw Error("unknown metric '" + outcome + "'");
    std::vector<const SignatureRow*> rows;
    std::set<std::string> families;
    for (const auto& r : table) {
        if (!std::isfinite(r.metric(outcome)) || !std::isfinite(r.accuracy)) continue;
        rows.push_back(&r);
        families.insert(r.family);
    }
    if (!families.count(reference_family)) throw Error("reference family '" + reference_family + "' not present");
    families.erase(reference_family);

    PanelData d;
    d.names.push_back("accuracy");
    for (const auto& f : families) d.names.push_back("family[" + f + "]");
    if (interactions)
        for (const auto& f : families) d.names.push_back("accuracy:family[" + f + "]");

    const auto n = static_cast<Eigen::Index>(rows.size());
    d.y = Vector(n);
    d.x = Matrix::Zero(n, static_cast<Eigen::Index>(d.names.size()));
    const auto nf = static_cast<Eigen::Index>(families.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        const SignatureRow& r = *rows[static_cast<std::size_t>(i)];
        d.block.push_back(r.block.experiment + "\x1f" + r.block.condition);
        d.y(i) = r.metric(outcome);
        d.x(i, 0) = r.accuracy;
        Eigen::Index c = 1;
        for (const auto& f : families) {
            if (r.family == f) {
                d.x(i, c) = 1.0;
                if (interactions) d.x(i, c + nf) = r.accuracy;
            }
            ++c;
        }
    }
    return d;
}

RegressionResult fe_regression(const SignatureTable& table, const std::string& outcome,
                               const std::string& reference_family) {
    return within_ols(build_panel(table, outcome, reference_family, false));
}

NestedTestResult nested_f_test(const PanelData& restricted, const PanelData& full) {
    if (restricted.block != full.block || restricted.y != full.y)
        throw Error("nested models must be estimated on identical rows");
    NestedTestResult t;
    t.df1 = static_cast<int>(full.x.cols() - restricted.x.cols());
    if (t.df1 <= 0) throw Error("full model must have more columns than the restricted model");
    t.restricted = within_ols(restricted);
    t.full = within_ols(full);
    t.df1 = t.restricted.df_resid - t.full.df_resid;
    if (t.df1 <= 0) throw Error("degrees-of-freedom difference is not positive");
    t.df2 = t.full.df_resid;
    if (t.full.rss <= 0) {
        t.f_stat = t.restricted.rss > 0 ? std::numeric_limits<double>::infinity() : 0.0;
        t.p_value = t.restricted.rss > 0 ? 0.0 : 1.0;
        return t;
    }
    t.f_stat = ((t.restricted.rss - t.full.rss) / t.df1) / (t.full.rss / t.df2);
    const boost::math::fisher_f dist(t.df1, t.df2);
    t.p_value = t.f_stat > 0 ? boost::math::cdf(boost::math::complement(dist, t.f_stat)) : 1.0;
    return t;
}

NestedTestResult nested_interaction_test(const SignatureTable& table, const std::string& outcome,
                                         const std::string& reference_family) {
    return nested_f_test(build_panel(table, outcome, reference_family, false),
                         build_panel(table, outcome, reference_family, true));
}

}  // namespace rdsig
