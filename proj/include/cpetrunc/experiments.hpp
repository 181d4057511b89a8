#pragma once

// Runners for the simulation studies: Mallows' Cp selection frequencies, the BMA prior
// comparison, the factorial truncation study with its two-way ANOVA, the MSPE check
// for the theoretical kappa and the WAIC sweep over CPE percentiles.

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cpetrunc/dataset.hpp"
#include "cpetrunc/sampler.hpp"

namespace cpetrunc {

// ---------------------------------------------------------------- Cp / BMA studies

struct CpExperimentResult {
    std::vector<double> sigmas;
    /// frequencies(s, b-1): share of replicates at sigmas[s] selecting model b (b = 1..8).
    Eigen::MatrixXd frequencies;
    int replicates = 0;
};

/// n = 200 draws of three standard-normal covariates, y = X beta, argmin Cp over the 8 subsets.
CpExperimentResult run_cp_experiment(int replicates, const std::vector<double>& sigmas, std::uint64_t seed,
                                     const Eigen::Vector4d& beta = Eigen::Vector4d(2, 1, 1, 0),
                                     int n = 200);

/**
 * Per replicate: SSE of the BMA predictor under the uniform prior minus SSE under
 * `restricted_prior` (default: mass 1/2 on models 5 and 8).
 */
std::vector<double> run_bma_experiment(int replicates, double sigma, std::uint64_t seed,
                                       std::optional<std::vector<double>> restricted_prior = std::nullopt,
                                       double beta_prior_var = 10.0, int n = 200);

// ---------------------------------------------------------------- factorial study

struct SimulatedData {
    Eigen::VectorXd z;
    double sigma2 = 1.0;
    Eigen::VectorXd truth;
};

/// z = L + N(0, sigma2 I) with sigma2 calibrated to the SNR.
SimulatedData simulate_dataset(const Eigen::VectorXd& signal, double snr, Rng& rng);

/// Synthetic stand-in for a real survey: n sites on the unit square, two covariates,
/// L = linear trend + exponential-covariance Gaussian process (tau2 = 1, b = 5).
Dataset synthetic_dataset(Eigen::Index n, std::uint64_t seed);

/// sum (y - yhat_tc)^2 - sum (y - yhat_m)^2; negative favours the truncated model.
double response_metric(const Eigen::VectorXd& truth, const Eigen::VectorXd& yhat_tc,
                       const Eigen::VectorXd& yhat_m);

struct McmcSettings {
    int total_iterations = 4000;
    int burn_in = 1000;
    int max_rejections = 1000;

    GibbsConfig config(double kappa = std::numeric_limits<double>::infinity()) const {
        return {total_iterations, burn_in, kappa, max_rejections};
    }
};

struct FactorialDesign {
    std::vector<double> snr_levels{3, 5, 10};
    std::vector<double> d_levels{0.1, 0.5, 0.9};
    int replicates = 30;
    std::uint64_t seed = 1;
    McmcSettings mcmc;
    int threads = 1;
};

struct ResponseRow {
    double snr = 0.0;
    double d = 0.0;
    int replicate = 0;
    double sigma2 = 0.0;
    double kappa = 0.0;
    double sse_tc = 0.0;
    double sse_m = 0.0;
    double response = 0.0;
    std::size_t stalls = 0;
    double beta_acceptance = 1.0;
};

/// Untruncated chain, kappa at its d-th CPE percentile, truncated chain; both summarised by the
/// element-wise posterior median of X beta + w. Rows sorted by (snr, d, replicate).
std::vector<ResponseRow> run_empirical_simulation(const FactorialDesign& design, const Dataset& data);

/// Posterior median of X beta + w over a chain.
Eigen::VectorXd chain_median_predictor(const Chain& chain, const Eigen::MatrixXd& x);

// ---------------------------------------------------------------- ANOVA

struct AnovaRow {
    std::string name;
    int df = 0;
    double sum_sq = 0.0;
    double mean_sq = 0.0;
    double f = std::numeric_limits<double>::quiet_NaN();
    double p = std::numeric_limits<double>::quiet_NaN();
};

struct AnovaTable {
    AnovaRow factor_a, factor_b, interaction, residuals;
    double total_sum_sq = 0.0;
    int total_df = 0;
};

/// Balanced two-way fixed-effects ANOVA with interaction. Levels are taken in order of appearance.
AnovaTable two_way_anova(const std::vector<double>& response, const std::vector<std::string>& factor_a,
                         const std::vector<std::string>& factor_b, const std::string& name_a = "A",
                         const std::string& name_b = "B");

/// I_x(a, b) by Lentz's continued fraction.
double regularized_incomplete_beta(double a, double b, double x);

/// P(F > f) for F ~ F(df1, df2).
double f_upper_tail(double f, double df1, double df2);

// ---------------------------------------------------------------- theorem check

struct Theorem2Config {
    Eigen::Index n = 40;
    double snr = 3.0;
    int replicates = 50;
    std::uint64_t seed = 1;
    McmcSettings mcmc;
    int threads = 1;
};

struct Theorem2Arm {
    std::string name;
    double kappa = 0.0;
    double mean_sse_tc = 0.0;
    double mean_sse_m = 0.0;  ///< over the admissible replicates
    double difference = 0.0;  ///< mean of paired (SSE_tc - SSE_m)
    double difference_se = 0.0;
    std::size_t stalls = 0;
    int admissible = 0;  ///< replicates whose set {CPE < kappa} is nonempty; the others are skipped
};

struct Theorem2Report {
    Eigen::Index n = 0;
    double sigma2 = 0.0;
    double n_sigma2 = 0.0;
    int replicates = 0;
    double mse_m = 0.0;  ///< Monte-Carlo estimate of E sum (Y - Yhat_m)^2
    double mse_m_se = 0.0;
    Theorem2Arm theorem;  ///< kappa = mse_m + n sigma2
    Theorem2Arm control;  ///< kappa = infinity
};

Theorem2Report theorem2_check(const Theorem2Config& config, const Dataset& data);

// ---------------------------------------------------------------- WAIC sweep

struct WaicEstimate {
    double value = 0.0;
    double mc_se = 0.0;  ///< batch-means Monte-Carlo standard error
};

/// WAIC of a chain from log N(z_i | y_i, sigma2), with a batch-means MC standard error.
WaicEstimate chain_waic(const Chain& chain, const Eigen::MatrixXd& x, const Eigen::VectorXd& z, double sigma2,
                        int batches = 10);

struct WaicPoint {
    double d = 0.0;
    double kappa = 0.0;
    bool admissible = true;
    std::string error;
    WaicEstimate waic;
    std::size_t stalls = 0;
};

struct WaicSweep {
    WaicEstimate untruncated;
    std::vector<WaicPoint> points;
    std::optional<double> argmin_d;
};

WaicSweep run_waic_sweep(const GibbsWorkspace& ws, const std::vector<double>& d_grid, const McmcSettings& mcmc,
                         std::uint64_t seed);

/// n evenly spaced percentiles d_k = k / n, k = 1..n.
std::vector<double> percentile_grid(int points);

}  // namespace cpetrunc
