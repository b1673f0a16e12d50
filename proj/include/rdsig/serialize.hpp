#pragma once

#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rdsig/channel.hpp"
#include "rdsig/cost_inference.hpp"
#include "rdsig/rd_solver.hpp"
#include "rdsig/signatures.hpp"
#include "rdsig/stats.hpp"

namespace rdsig::io {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

json matrix_json(const Matrix& m);
Matrix matrix_from_json(const json& j);
json vector_json(const Vector& v);
Vector vector_from_json(const json& j);

json channel_json(const Channel& ch, const LabelSet* labels = nullptr);
json curve_json(const RDCurve& curve, const LabelSet* labels = nullptr);
// lambda,distortion,rate_bits
void write_curve_csv(std::ostream& out, const RDCurve& curve);

json fit_json(const FitResult& fit, const LabelSet& labels, const BlockRef& unit);
// Restores the fields needed downstream (costs, scale, convergence, prior).
FitResult fit_from_json(const json& j);

inline const std::vector<std::string>& signature_columns() {
    static const std::vector<std::string> cols = {"system",      "family",    "experiment", "condition",
                                                  "accuracy",    "beta_median", "beta_mean", "kappa",
                                                  "auc",         "beta_n",    "kappa_n",    "flags"};
    return cols;
}
void write_signatures_csv(std::ostream& out, const SignatureTable& table);
SignatureTable read_signatures_csv(std::istream& in);

// contrast,metric,n_blocks,delta_median,fold,w_plus,w_minus,p,q,r_rb,excluded_blocks,flags
void write_comparison_csv(std::ostream& out, const std::vector<PairedTestResult>& results);
json comparison_json(const std::vector<PairedTestResult>& results);

json regression_json(const RegressionResult& r);
json nested_json(const NestedTestResult& t);

}  // namespace rdsig::io
