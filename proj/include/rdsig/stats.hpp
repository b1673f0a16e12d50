#pragma once

#include <compare>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "rdsig/types.hpp"

namespace rdsig {

struct BlockKey {
    std::string experiment;
    std::string condition;

    auto operator<=>(const BlockKey&) const = default;
};

// One row of the signatures table.
struct SignatureRow {
    std::string system;
    std::string family;
    BlockKey block;
    double accuracy = 0.0;
    double beta_median = 0.0;
    double beta_mean = 0.0;
    double kappa = 0.0;
    double auc = 0.0;
    double beta_n = 0.0;
    double kappa_n = 0.0;
    Flags flags;

    // Columns by name, plus derived log10_abs_beta and log10_kappa.
    double metric(const std::string& name) const;
};

using SignatureTable = std::vector<SignatureRow>;

bool is_known_metric(const std::string& name);
// Metrics on a log10 scale, for which 10^delta is a fold change.
bool is_log_metric(const std::string& name);

// Level 1 pairs systems; level 2 pairs families after a per-block median.
enum class PairingLevel { system, family };

struct MatchedPair {
    BlockKey block;
    double a = 0.0;
    double b = 0.0;
};

struct MatchResult {
    std::vector<MatchedPair> pairs;
    int excluded = 0;  // shared blocks dropped for a non-finite metric
};

// Inner join on block; several rows for one id in a block collapse to their median.
MatchResult match_blocks(const SignatureTable& table, const std::string& a, const std::string& b,
                         const std::string& metric, PairingLevel level = PairingLevel::system);

enum class WilcoxonMode { exact, normal, automatic };

struct WilcoxonResult {
    double w_plus = 0.0;
    double w_minus = 0.0;
    double p_value = 1.0;
    int n_eff = 0;
    bool exact = false;
};

inline constexpr int kExactWilcoxonLimit = 25;

// Two-sided signed-rank test. Zeros dropped, mid-ranks for ties; exact
// (conditional on the ranks) or normal with continuity and tie correction.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& diffs, WilcoxonMode mode = WilcoxonMode::automatic);

// Exact null distribution of T+ for doubled (integer) ranks: counts[t] is
// the number of sign assignments with doubled T+ == t.
std::vector<std::uint64_t> signed_rank_counts(const std::vector<int>& doubled_ranks);

// Benjamini-Hochberg step-up adjusted p-values, in input order.
std::vector<double> bh_fdr(const std::vector<double>& p);

struct PairedTestResult {
    std::string a;
    std::string b;
    std::string metric;
    std::string fdr_set;
    PairingLevel level = PairingLevel::system;
    int n_blocks = 0;
    int excluded_blocks = 0;
    double delta_median = 0.0;
    double w_plus = 0.0;
    double w_minus = 0.0;
    double p_value = std::numeric_limits<double>::quiet_NaN();
    std::optional<double> q_value;
    double r_rb = std::numeric_limits<double>::quiet_NaN();
    Flags flags;
    std::string error;  // set when the test is degenerate

    bool ok() const { return error.empty(); }
};

// delta = a - b per matched block. Degenerate inputs give a result with
// `error` set rather than throwing; "no matched blocks" throws.
PairedTestResult paired_compare(const std::string& a, const std::string& b, const std::string& metric,
                                const SignatureTable& table, PairingLevel level = PairingLevel::system,
                                WilcoxonMode mode = WilcoxonMode::automatic);

// BH within each (fdr_set, metric) over the non-degenerate results.
void assign_q_values(std::vector<PairedTestResult>& results);

// Outcome, named predictors and block labels for a fixed-effects fit.
struct PanelData {
    std::vector<std::string> block;
    Vector y;
    Matrix x;
    std::vector<std::string> names;
};

struct RegressionResult {
    std::vector<std::string> names;
    Vector coef;
    Vector std_error;
    Vector p;
    double rss = 0.0;
    int df_resid = 0;
    int n = 0;
    int n_blocks = 0;
    int dropped_singleton_blocks = 0;
};

// OLS on block-demeaned data, df_resid = n - #blocks - #coefficients.
RegressionResult within_ols(const PanelData& data);
// OLS with one explicit dummy column per block (no intercept); the same
// estimator computed without demeaning.
RegressionResult dummy_ols(const PanelData& data);

// outcome ~ accuracy + family dummies (+ accuracy x family) + block.
PanelData build_panel(const SignatureTable& table, const std::string& outcome, const std::string& reference_family,
                      bool interactions);
RegressionResult fe_regression(const SignatureTable& table, const std::string& outcome,
                               const std::string& reference_family);

struct NestedTestResult {
    double f_stat = 0.0;
    double p_value = 1.0;
    int df1 = 0;
    int df2 = 0;
    RegressionResult restricted;
    RegressionResult full;
};

NestedTestResult nested_f_test(const PanelData& restricted, const PanelData& full);
NestedTestResult nested_interaction_test(const SignatureTable& table, const std::string& outcome,
                                         const std::string& reference_family);

double median(std::vector<double> v);

}  // namespace rdsig
