#pragma once

#include <string>
#include <vector>

#include "rdsig/channel.hpp"
#include "rdsig/cost_inference.hpp"
#include "rdsig/rd_solver.hpp"

namespace rdsig {

struct RDSignature {
    double beta_median = 0.0;  // bits per cost unit
    double beta_mean = 0.0;
    double kappa = 0.0;  // population variance of the local slopes
    double auc = 0.0;
    double accuracy = 0.0;
    int n_slopes = 0;
};

struct NormalizedSignature {
    double beta_n = 0.0;
    double kappa_n = 0.0;
    Flags flags;
};

struct GeneralizationPoint {
    double d = 0.0;  // cost of the confusion
    double g = 0.0;  // its probability
};

struct BinnedGradient {
    std::vector<double> d;  // mean cost of the bin's members
    std::vector<double> g;  // mean probability
};

struct ExpFit {
    double a = 0.0;
    double s = 0.0;
    double rmse = 0.0;
    int n_bins = 0;
    Flags flags;
};

struct FitDiagnostics {
    double rmse_conf_prob = 0.0;
    double rmse_emp = 0.0;
    double rmse_genexp = 0.0;
    double genexp_slope = 0.0;  // s of the model-implied gradient
    Flags flags;
};

struct SeverityPoint {
    std::string level;
    double beta = 0.0;
    Flags flags;
};

inline constexpr int kDefaultBins = 12;

// Slopes between consecutive points after sorting by distortion, dropping
// non-finite points and collapsing duplicate distortions (keep max rate).
// Throws "degenerate frontier" with fewer than 3 usable points.
RDSignature extract_signature(std::vector<double> distortion, std::vector<double> rate, double accuracy);
RDSignature extract_signature(const RDCurve& curve, double accuracy);

// z-scores of log10|beta_median| and log10 kappa within each group (groups[i]
// is the key of sigs[i]). Population standard deviation.
std::vector<NormalizedSignature> normalize_signatures(const std::vector<RDSignature>& sigs,
                                                      const std::vector<std::string>& groups);

std::vector<GeneralizationPoint> generalization_points(const Channel& channel, const CostMatrix& rho);

BinnedGradient bin_gradient(const std::vector<GeneralizationPoint>& pairs, int bins);

// Least-squares a*exp(-s d) through the binned gradient (Levenberg-Marquardt
// seeded by a log-linear regression).
ExpFit fit_exponential(const std::vector<GeneralizationPoint>& pairs, int bins = kDefaultBins);

FitDiagnostics rmse_diagnostics(const ConfusionCounts& counts, const FitResult& fit,
                                const BASettings& ba = inference_ba_settings(), int bins = kDefaultBins);

// OLS slope of log p~(j|i) on rho(i,j) over off-diagonal cells of a smoothed channel.
double log_probability_slope(const Channel& smoothed, const CostMatrix& rho, Flags* flags = nullptr);

// One entry per level, in the given order, labelled by the block condition.
std::vector<SeverityPoint> severity_beta(const std::vector<ConfusionCounts>& by_level, const CostMatrix& rho,
                                         double alpha = 0.5);

}  // namespace rdsig
