#include "rdsig/serialize.hpp"

#include <charconv>
#include <cmath>

#include "rdsig/csv.hpp"

namespace rdsig::io {

namespace {

json finite_or_null(double v) {
    return std::isfinite(v) ? json(v) : json(nullptr);
}

double parse_number(const std::string& s, std::size_t line, const std::string& column) {
    if (s.empty()) return std::nan("");
    double v = 0.0;
    // from_chars keeps subnormals, which stod rejects as out of range
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw Error("row " + std::to_string(line) + ", field '" + column + "': not a number '" + s + "'");
    return v;
}

Flags parse_flags(const std::string& s) {
    Flags f;
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto end = s.find(';', start);
        const std::string item = s.substr(start, end == std::string::npos ? std::string::npos : end - start);
        if (!item.empty()) f.set(item);
        if (end == std::string::npos) break;
        start = end + 1;
    }
    return f;
}

}  // namespace

json matrix_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(finite_or_null(m(i, j)));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const json& j) {
    if (!j.is_array() || j.empty()) throw Error("expected a non-empty matrix");
    const auto r = static_cast<Eigen::Index>(j.size());
    const auto c = static_cast<Eigen::Index>(j.at(0).size());
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
        const auto& row = j.at(static_cast<std::size_t>(i));
        if (static_cast<Eigen::Index>(row.size()) != c) throw Error("ragged matrix");
        for (Eigen::Index k = 0; k < c; ++k) {
            const auto& v = row.at(static_cast<std::size_t>(k));
            m(i, k) = v.is_null() ? std::nan("") : v.get<double>();
        }
    }
    return m;
}

json vector_json(const Vector& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(finite_or_null(v(i)));
    return out;
}

Vector vector_from_json(const json& j) {
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    return v;
}

json channel_json(const Channel& ch, const LabelSet* labels) {
    json j;
    j["schema_version"] = kSchemaVersion;
    if (labels) j["labels"] = labels->names();
    j["cond"] = matrix_json(ch.cond);
    j["prior"] = vector_json(ch.prior);
    j["support"] = ch.support;
    j["flags"] = ch.flags.items();
    return j;
}

json curve_json(const RDCurve& curve, const LabelSet* labels) {
    json j;
    j["schema_version"] = kSchemaVersion;
    if (labels) j["labels"] = labels->names();
    j["rho"] = matrix_json(curve.rho);
    j["prior"] = vector_json(curve.prior);
    json pts = json::array();
    for (const auto& p : curve.points) {
        pts.push_back({{"lambda", p.lambda},
                       {"distortion", p.distortion},
                       {"rate_bits", p.rate},
                       {"converged", p.converged},
                       {"iters", p.iters},
                       {"channel", matrix_json(p.channel.cond)}});
    }
    j["points"] = std::move(pts);
    return j;
}

void write_curve_csv(std::ostream& out, const RDCurve& curve) {
    out << "lambda,distortion,rate_bits\n";
    for (const auto& p : curve.points)
        out << csv::format_double(p.lambda) << ',' << csv::format_double(p.distortion) << ','
            << csv::format_double(p.rate) << '\n';
}

json fit_json(const FitResult& fit, const LabelSet& labels, const BlockRef& unit) {
    json j;
    j["schema_version"] = kSchemaVersion;
    j["unit"] = {{"system", unit.system},
                 {"family", unit.family},
                 {"experiment", unit.experiment},
                 {"condition", unit.condition}};
    j["labels"] = labels.names();
    j["rho"] = matrix_json(fit.rho_map.values());
    j["rho_raw"] = matrix_json(fit.rho_raw);
    j["scale"] = fit.scale;
    j["stderr"] = fit.stderr_normalized ? matrix_json(*fit.stderr_normalized) : json(nullptr);
    j["stderr_raw"] = fit.stderr_raw ? matrix_json(*fit.stderr_raw) : json(nullptr);
    j["log_posterior"] = finite_or_null(fit.log_posterior);
    j["iters"] = fit.iters;
    j["converged"] = fit.converged;
    j["start"] = fit.start;
    j["flags"] = fit.flags.items();
    j["prior_config"] = {{"tau_sym", fit.prior.tau_sym},
                         {"tau_asym", fit.prior.tau_asym},
                         {"tau_diag", fit.prior.tau_diag}};
    json trace = json::array();
    for (double v : fit.objective_trace) trace.push_back(finite_or_null(v));
    j["objective_trace"] = std::move(trace);
    return j;
}

FitResult fit_from_json(const json& j) {
    if (j.value("schema_version", 0) != kSchemaVersion) throw Error("unsupported fit schema version");
    FitResult fit;
    fit.rho_raw = matrix_from_json(j.at("rho_raw"));
    fit.rho_map = CostMatrix::checked(matrix_from_json(j.at("rho")));
    fit.scale = j.at("scale").get<double>();
    fit.converged = j.at("converged").get<bool>();
    fit.iters = j.at("iters").get<int>();
    fit.start = j.value("start", "");
    fit.log_posterior = j.at("log_posterior").is_null() ? std::nan("") : j.at("log_posterior").get<double>();
    for (const auto& f : j.at("flags")) fit.flags.set(f.get<std::string>());
    const auto& pc = j.at("prior_config");
    fit.prior.tau_sym = pc.at("tau_sym").get<double>();
    fit.prior.tau_asym = pc.at("tau_asym").get<double>();
    fit.prior.tau_diag = pc.at("tau_diag").get<double>();
    if (!j.at("stderr_raw").is_null()) fit.stderr_raw = matrix_from_json(j.at("stderr_raw"));
    if (!j.at("stderr").is_null()) fit.stderr_normalized = matrix_from_json(j.at("stderr"));
    return fit;
}

void write_signatures_csv(std::ostream& out, const SignatureTable& table) {
    out << csv::join(signature_columns()) << '\n';
    for (const auto& r : table) {
        out << csv::join({r.system, r.family, r.block.experiment, r.block.condition, csv::format_finite(r.accuracy),
                          csv::format_finite(r.beta_median), csv::format_finite(r.beta_mean),
                          csv::format_finite(r.kappa), csv::format_finite(r.auc), csv::format_finite(r.beta_n),
                          csv::format_finite(r.kappa_n), r.flags.joined()})
            << '\n';
    }
}

SignatureTable read_signatures_csv(std::istream& in) {
    csv::Reader reader(in);
    auto header = reader.next();
    if (!header || *header != signature_columns()) throw Error("signatures table has an unexpected header");
    SignatureTable table;
    const auto& cols = signature_columns();
    while (auto row = reader.next()) {
        const auto line = reader.line();
        if (row->size() != cols.size()) throw Error("row " + std::to_string(line) + ": wrong number of fields");
        const auto& f = *row;
        SignatureRow r;
        r.system = f[0];
        r.family = f[1];
        r.block = {f[2], f[3]};
        r.accuracy = parse_number(f[4], line, cols[4]);
        r.beta_median = parse_number(f[5], line, cols[5]);
        r.beta_mean = parse_number(f[6], line, cols[6]);
        r.kappa = parse_number(f[7], line, cols[7]);
        r.auc = parse_number(f[8], line, cols[8]);
        r.beta_n = parse_number(f[9], line, cols[9]);
        r.kappa_n = parse_number(f[10], line, cols[10]);
        r.flags = parse_flags(f[11]);
        table.push_back(std::move(r));
    }
    return table;
}

void write_comparison_csv(std::ostream& out, const std::vector<PairedTestResult>& results) {
    out << "contrast,metric,n_blocks,delta_median,fold,w_plus,w_minus,p,q,r_rb,excluded_blocks,flags\n";
    for (const auto& r : results) {
        const bool ok = r.ok();
        const std::string fold = ok && is_log_metric(r.metric) ? csv::format_double(std::pow(10.0, r.delta_median)) : "";
        Flags flags = r.flags;
        out << csv::join({r.a + " vs " + r.b, r.metric, std::to_string(r.n_blocks),
                          r.n_blocks ? csv::format_finite(r.delta_median) : "", fold,
                          ok ? csv::format_finite(r.w_plus) : "", ok ? csv::format_finite(r.w_minus) : "",
                          ok ? csv::format_finite(r.p_value) : "",
                          r.q_value ? csv::format_finite(*r.q_value) : "", ok ? csv::format_finite(r.r_rb) : "",
                          std::to_string(r.excluded_blocks), flags.joined()})
            << '\n';
    }
}

json comparison_json(const std::vector<PairedTestResult>& results) {
    json arr = json::array();
    for (const auto& r : results) {
        json j;
        j["a"] = r.a;
        j["b"] = r.b;
        j["level"] = r.level == PairingLevel::system ? "system" : "family";
        j["metric"] = r.metric;
        j["fdr_set"] = r.fdr_set;
        j["n_blocks"] = r.n_blocks;
        j["excluded_blocks"] = r.excluded_blocks;
        j["delta_median"] = r.n_blocks ? finite_or_null(r.delta_median) : json(nullptr);
        j["fold"] = r.ok() && is_log_metric(r.metric) ? json(std::pow(10.0, r.delta_median)) : json(nullptr);
        j["w_plus"] = r.ok() ? json(r.w_plus) : json(nullptr);
        j["w_minus"] = r.ok() ? json(r.w_minus) : json(nullptr);
        j["p"] = finite_or_null(r.p_value);
        j["q"] = r.q_value ? json(*r.q_value) : json(nullptr);
        j["r_rb"] = finite_or_null(r.r_rb);
        j["flags"] = r.flags.items();
        j["error"] = r.error.empty() ? json(nullptr) : json(r.error);
        arr.push_back(std::move(j));
    }
    return {{"schema_version", kSchemaVersion}, {"contrasts", std::move(arr)}};
}

json regression_json(const RegressionResult& r) {
    json coefs = json::array();
    for (std::size_t i = 0; i < r.names.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        coefs.push_back({{"name", r.names[i]},
                         {"coef", finite_or_null(r.coef(k))},
                         {"stderr", finite_or_null(r.std_error(k))},
                         {"p", finite_or_null(r.p(k))}});
    }
    return {{"coefficients", std::move(coefs)},
            {"rss", r.rss},
            {"df_resid", r.df_resid},
            {"n", r.n},
            {"n_blocks", r.n_blocks},
            {"dropped_singleton_blocks", r.dropped_singleton_blocks}};
}

json nested_json(const NestedTestResult& t) {
    return {{"f_stat", finite_or_null(t.f_stat)},
            {"p", finite_or_null(t.p_value)},
            {"df1", t.df1},
            {"df2", t.df2},
            {"restricted", regression_json(t.restricted)},
            {"full", regression_json(t.full)}};
}

}  // namespace rdsig::io
