#include "rdsig/signatures.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace rdsig {

namespace {

double median_sorted(const std::vector<double>& v) {
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Moments {
    double mean = 0.0;
    double sd = 0.0;
};

Moments population_moments(const std::vector<double>& v) {
    Moments m;
    m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.sd = std::sqrt(ss / static_cast<double>(v.size()));
    return m;
}

}  // namespace

RDSignature extract_signature(std::vector<double> distortion, std::vector<double> rate, double accuracy) {
    if (distortion.size() != rate.size()) throw Error("distortion and rate lengths differ");
    if (!(accuracy >= 0 && accuracy <= 1)) throw Error("accuracy must be in [0,1]");

    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < distortion.size(); ++i)
        if (std::isfinite(distortion[i]) && std::isfinite(rate[i])) pts.emplace_back(distortion[i], rate[i]);
    std::stable_sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<std::pair<double, double>> uniq;
    for (const auto& p : pts) {
        if (!uniq.empty() && p.first - uniq.back().first <= kDuplicateDistortion) {
            uniq.back().second = std::max(uniq.back().second, p.second);
            continue;
        }
        uniq.push_back(p);
    }
    if (uniq.size() < 3) throw Error("degenerate frontier: fewer than 3 distinct points");

    std::vector<double> slopes;
    slopes.reserve(uniq.size() - 1);
    double auc = 0.0;
    for (std::size_t k = 0; k + 1 < uniq.size(); ++k) {
        const double dd = uniq[k + 1].first - uniq[k].first;
        slopes.push_back((uniq[k + 1].second - uniq[k].second) / dd);
        auc += 0.5 * dd * (uniq[k + 1].second + uniq[k].second);
    }

    RDSignature sig;
    sig.n_slopes = static_cast<int>(slopes.size());
    const Moments m = population_moments(slopes);
    sig.beta_mean = m.mean;
    sig.kappa = m.sd * m.sd;
    std::vector<double> sorted = slopes;
    std::sort(sorted.begin(), sorted.end());
    sig.beta_median = median_sorted(sorted);
    sig.auc = auc;
    sig.accuracy = accuracy;
    return sig;
}

RDSignature extract_signature(const RDCurve& curve, double accuracy) {
    std::vector<double> d, r;
    for (const auto& p : curve.points) {
        d.push_back(p.distortion);
        r.push_back(p.rate);
    }
    return extract_signature(std::move(d), std::move(r), accuracy);
}

std::vector<NormalizedSignature> normalize_signatures(const std::vector<RDSignature>& sigs,
                                                      const std::vector<std::string>& groups) {
    if (sigs.size() != groups.size()) throw Error("one group key per signature required");
    std::vector<NormalizedSignature> out(sigs.size());
    std::map<std::string, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < sigs.size(); ++i) {
        const bool finite = std::isfinite(sigs[i].beta_median) && std::isfinite(sigs[i].kappa);
        if (finite) {
            members[groups[i]].push_back(i);
        } else {
            out[i].beta_n = out[i].kappa_n = std::nan("");
            out[i].flags.set("not_normalized");
        }
    }

    auto zscore = [&](const std::vector<std::size_t>& idx, auto value, double NormalizedSignature::*field,
                      const char* flag) {
        std::vector<double> v;
        for (std::size_t i : idx) v.push_back(value(sigs[i]));
        const Moments m = population_moments(v);
        for (std::size_t n = 0; n < idx.size(); ++n) {
            if (m.sd > 0) {
                out[idx[n]].*field = (v[n] - m.mean) / m.sd;
            } else {
                out[idx[n]].*field = 0.0;
                out[idx[n]].flags.set(flag);
            }
        }
    };

    for (const auto& [key, idx] : members) {
        if (idx.size() < 2) {
            out[idx[0]].flags.set("singleton_group");
            continue;
        }
        zscore(idx, [](const RDSignature& s) { return std::log10(std::max(std::abs(s.beta_median), 1e-12)); },
               &NormalizedSignature::beta_n, "beta_zero_variance");
        zscore(idx, [](const RDSignature& s) { return std::log10(std::max(s.kappa, 1e-12)); },
               &NormalizedSignature::kappa_n, "kappa_zero_variance");
    }
    return out;
}

std::vector<GeneralizationPoint> generalization_points(const Channel& channel, const CostMatrix& rho) {
    if (rho.k() != channel.k()) throw Error("channel and cost matrix dimensions differ");
    std::vector<GeneralizationPoint> out;
    for (std::size_t i = 0; i < channel.k(); ++i) {
        if (!channel.support[i]) continue;
        for (std::size_t j = 0; j < channel.k(); ++j)
            if (i != j)
                out.push_back({rho(i, j), channel.cond(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))});
    }
    return out;
}

BinnedGradient bin_gradient(const std::vector<GeneralizationPoint>& pairs, int bins) {
    if (bins < 3) throw Error("gradient binning needs at least 3 bins");
    std::vector<double> ds;
    for (const auto& p : pairs) ds.push_back(p.d);
    std::sort(ds.begin(), ds.end());
    ds.erase(std::unique(ds.begin(), ds.end()), ds.end());
    if (ds.size() < 3) throw Error("exponential fit needs at least 3 distinct cost values");

    const double lo = ds.front(), hi = ds.back();
    const double width = (hi - lo) / bins;
    std::vector<double> sum_d(static_cast<std::size_t>(bins), 0.0), sum_g(static_cast<std::size_t>(bins), 0.0);
    std::vector<int> n(static_cast<std::size_t>(bins), 0);
    for (const auto& p : pairs) {
        auto b = static_cast<std::size_t>(std::min(bins - 1, static_cast<int>(std::floor((p.d - lo) / width))));
        sum_d[b] += p.d;
        sum_g[b] += p.g;
        ++n[b];
    }
    BinnedGradient out;
    for (std::size_t b = 0; b < n.size(); ++b) {
        if (!n[b]) continue;
        out.d.push_back(sum_d[b] / n[b]);
        out.g.push_back(sum_g[b] / n[b]);
    }
    return out;
}

ExpFit fit_exponential(const std::vector<GeneralizationPoint>& pairs, int bins) {
    if (pairs.size() < 3) throw Error("exponential fit needs at least 3 pairs");
    const BinnedGradient bg = bin_gradient(pairs, bins);
    const std::size_t nb = bg.d.size();

    ExpFit fit;
    fit.n_bins = static_cast<int>(nb);
    if (std::all_of(bg.g.begin(), bg.g.end(), [](double g) { return g == 0.0; })) {
        fit.flags.set("degenerate_all_zero");
        return fit;
    }

    // log-linear seed over strictly positive bins
    double a = *std::max_element(bg.g.begin(), bg.g.end());
    double s = 1.0;
    {
        std::vector<double> x, y;
        for (std::size_t b = 0; b < nb; ++b)
            if (bg.g[b] > 0) {
                x.push_back(bg.d[b]);
                y.push_back(std::log(bg.g[b]));
            }
        if (x.size() >= 2) {
            const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
            const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
            double sxy = 0.0, sxx = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) {
                sxy += (x[i] - mx) * (y[i] - my);
                sxx += (x[i] - mx) * (x[i] - mx);
            }
            if (sxx > 0) {
                s = -sxy / sxx;
                a = std::exp(my + s * mx);
            }
        }
    }

    auto sse = [&](double aa, double ss) {
        double e = 0.0;
        for (std::size_t b = 0; b < nb; ++b) {
            const double r = bg.g[b] - aa * std::exp(-ss * bg.d[b]);
            e += r * r;
        }
        return e;
    };

    double err = sse(a, s);
    double mu = 1e-3;
    bool converged = false;
    for (int it = 0; it < 200 && !converged; ++it) {
        Eigen::Matrix2d jtj = Eigen::Matrix2d::Zero();
        Eigen::Vector2d jtr = Eigen::Vector2d::Zero();
        for (std::size_t b = 0; b < nb; ++b) {
            const double e = std::exp(-s * bg.d[b]);
            const double r = bg.g[b] - a * e;
            const Eigen::Vector2d jac(-e, a * bg.d[b] * e);  // d r / d(a, s)
            jtj += jac * jac.transpose();
            jtr += jac * r;
        }
        if (jtr.cwiseAbs().maxCoeff() <= 1e-300 || err == 0.0) {
            converged = true;
            break;
        }
        bool improved = false;
        for (int tries = 0; tries < 40; ++tries) {
            Eigen::Matrix2d lhs = jtj;
            lhs.diagonal() += mu * jtj.diagonal().cwiseMax(1e-300);
            const Eigen::Vector2d step = lhs.ldlt().solve(-jtr);
            const double na = a + step(0), ns = s + step(1);
            const double nerr = sse(na, ns);
            if (std::isfinite(nerr) && nerr <= err) {
                const bool tiny = std::abs(step(0)) <= 1e-14 * (std::abs(a) + 1e-14) &&
                                  std::abs(step(1)) <= 1e-14 * (std::abs(s) + 1e-14);
                const bool flat = err - nerr <= 1e-15 * err;
                a = na;
                s = ns;
                err = nerr;
                mu = std::max(mu / 10, 1e-12);
                improved = true;
                converged = tiny || flat;
                break;
            }
            mu *= 10;
        }
        if (!improved) {
            // no descent possible from here: a stationary point at working precision
            converged = true;
        }
    }
    if (!converged) fit.flags.set("exp_fit_not_converged");
    fit.a = a;
    fit.s = s;
    fit.rmse = std::sqrt(err / static_cast<double>(nb));
    return fit;
}

FitDiagnostics rmse_diagnostics(const ConfusionCounts& counts, const FitResult& fit, const BASettings& ba, int bins) {
    const Channel emp = channel_from_counts(counts);
    const Channel model = implied_channel(fit, counts, ba);

    FitDiagnostics out;
    double ss = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < emp.k(); ++i) {
        if (!emp.support[i]) continue;
        for (std::size_t j = 0; j < emp.k(); ++j) {
            if (i == j) continue;
            const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
            const double r = emp.cond(ii, jj) - model.cond(ii, jj);
            ss += r * r;
            ++n;
        }
    }
    out.rmse_conf_prob = std::sqrt(ss / static_cast<double>(n));

    const auto emp_pts = generalization_points(emp, fit.rho_map);
    const ExpFit emp_fit = fit_exponential(emp_pts, bins);
    out.rmse_emp = emp_fit.rmse;
    out.flags.merge(emp_fit.flags);

    const ExpFit model_fit = fit_exponential(generalization_points(model, fit.rho_map), bins);
    out.flags.merge(model_fit.flags);
    out.genexp_slope = model_fit.s;
    const BinnedGradient bg = bin_gradient(emp_pts, bins);
    double se = 0.0;
    for (std::size_t b = 0; b < bg.d.size(); ++b) {
        const double r = bg.g[b] - std::exp(-model_fit.s * bg.d[b]);
        se += r * r;
    }
    out.rmse_genexp = std::sqrt(se / static_cast<double>(bg.d.size()));
    return out;
}

double log_probability_slope(const Channel& smoothed, const CostMatrix& rho, Flags* flags) {
    if (rho.k() != smoothed.k()) throw Error("channel and cost matrix dimensions differ");
    std::vector<double> x, y;
    bool dropped = false;
    for (std::size_t i = 0; i < smoothed.k(); ++i) {
        if (!smoothed.support[i]) continue;
        for (std::size_t j = 0; j < smoothed.k(); ++j) {
            if (i == j) continue;
            const double p = smoothed.cond(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            if (!(p > 0)) {
                dropped = true;
                continue;
            }
            x.push_back(rho(i, j));
            y.push_back(std::log(p));
        }
    }
    if (dropped && flags) flags->set("zero_cells_dropped");
    std::vector<double> ux = x;
    std::sort(ux.begin(), ux.end());
    ux.erase(std::unique(ux.begin(), ux.end()), ux.end());
    if (ux.size() < 2) throw Error("severity slope needs at least 2 distinct cost values");

    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    return sxy / sxx;
}

std::vector<SeverityPoint> severity_beta(const std::vector<ConfusionCounts>& by_level, const CostMatrix& rho,
                                         double alpha) {
    std::vector<SeverityPoint> out;
    for (const auto& counts : by_level) {
        if (counts.k() != rho.k()) throw Error("severity level and cost matrix dimensions differ");
        if (!by_level.empty() && !(counts.labels == by_level.front().labels))
            throw Error("severity levels use different label sets");
        SeverityPoint pt;
        pt.level = counts.key.condition;
        const Channel sm = smooth_counts(counts, alpha);
        pt.flags.merge(sm.flags);
        pt.beta = log_probability_slope(sm, rho, &pt.flags);
        out.push_back(std::move(pt));
    }
    return out;
}

}  // namespace rdsig
