#include "cpetrunc/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cpetrunc/bma.hpp"
#include "cpetrunc/criteria.hpp"
#include "cpetrunc/errors.hpp"
#include "cpetrunc/parallel.hpp"
#include "cpetrunc/predictors.hpp"

namespace cpetrunc {

namespace {

// Stream layout within a task: 0 = data noise, 1 = untruncated chain, 2 = truncated chain,
// 3 = control chain.
enum Stream : std::uint64_t { kData = 0, kUntruncated = 1, kTruncated = 2, kControl = 3 };

struct RegressionDraw {
    Eigen::MatrixXd covariates;
    Eigen::VectorXd truth;
    Eigen::VectorXd z;
};

RegressionDraw draw_regression(int n, const Eigen::Vector4d& beta, double sigma, Rng& rng) {
    RegressionDraw d;
    d.covariates.resize(n, 3);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < 3; ++j) d.covariates(i, j) = rng.normal();
    d.truth = (beta(0) + (d.covariates * beta.tail<3>()).array()).matrix();
    d.z = d.truth + sigma * rng.normal_vector(n);
    return d;
}

double mean_of(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double standard_error(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double ss = 0.0;
    for (const double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

/// Truncated chain started from the latest untruncated state inside the constraint set, else from
/// the lowest-CPE state, else from the prior.
Chain run_truncated(const GibbsWorkspace& ws, const Chain& untruncated, const GibbsConfig& config, Rng& rng) {
    auto start = state_below(untruncated, config.kappa);
    if (!start) start = min_cpe_state(ws, config.kappa);
    return run_gibbs(ws, config, rng, start);
}

std::string describe_cell(double snr, double d, int replicate) {
    return " (snr=" + std::to_string(snr) + ", d=" + std::to_string(d) + ", replicate=" +
           std::to_string(replicate) + ")";
}

}  // namespace

CpExperimentResult run_cp_experiment(int replicates, const std::vector<double>& sigmas, std::uint64_t seed,
                                     const Eigen::Vector4d& beta, int n) {
    if (replicates < 1) throw InvalidArgument("run_cp_experiment: replicates must be >= 1");
    if (sigmas.empty()) throw InvalidArgument("run_cp_experiment: no sigma levels");
    CpExperimentResult out;
    out.sigmas = sigmas;
    out.replicates = replicates;
    out.frequencies = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(sigmas.size()), 8);
    for (std::size_t s = 0; s < sigmas.size(); ++s) {
        const double sigma = sigmas[s];
        if (!(sigma > 0.0)) throw InvalidArgument("run_cp_experiment: sigma must be > 0");
        for (int r = 0; r < replicates; ++r) {
            Rng rng(seed, static_cast<std::uint64_t>(r), s);
            const auto draw = draw_regression(n, beta, sigma, rng);
            Eigen::Index best = 0;
            double best_cp = std::numeric_limits<double>::infinity();
            for (std::size_t b = 0; b < 8; ++b) {
                const Eigen::MatrixXd x = subset_design(draw.covariates, subset_flags()[b]);
                const auto fit = ols_fit(x, draw.z);
                const double cp = mallows_cp(draw.z, fit.fitted, x.cols(), sigma * sigma).value;
                if (cp < best_cp) {
                    best_cp = cp;
                    best = static_cast<Eigen::Index>(b);
                }
            }
            out.frequencies(static_cast<Eigen::Index>(s), best) += 1.0;
        }
    }
    out.frequencies /= static_cast<double>(replicates);
    return out;
}

std::vector<double> run_bma_experiment(int replicates, double sigma, std::uint64_t seed,
                                       std::optional<std::vector<double>> restricted_prior, double beta_prior_var,
                                       int n) {
    if (replicates < 1) throw InvalidArgument("run_bma_experiment: replicates must be >= 1");
    if (!(sigma > 0.0)) throw InvalidArgument("run_bma_experiment: sigma must be > 0");
    const std::vector<double> restricted = restricted_prior.value_or(restricted_subset_prior());
    const Eigen::Vector4d beta(2, 1, 1, 0);
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(replicates));
    for (int r = 0; r < replicates; ++r) {
        Rng rng(seed, static_cast<std::uint64_t>(r));
        const auto draw = draw_regression(n, beta, sigma, rng);
        const double s2 = sigma * sigma;
        const Eigen::VectorXd yv = bma_predict(draw.z, subset_models(draw.covariates), beta_prior_var, s2);
        const Eigen::VectorXd yw =
            bma_predict(draw.z, subset_models(draw.covariates, restricted), beta_prior_var, s2);
        out.push_back((draw.truth - yv).squaredNorm() - (draw.truth - yw).squaredNorm());
    }
    return out;
}

SimulatedData simulate_dataset(const Eigen::VectorXd& signal, double snr, Rng& rng) {
    SimulatedData out;
    out.sigma2 = snr_to_sigma2(signal, snr);
    out.truth = signal;
    out.z = signal + std::sqrt(out.sigma2) * rng.normal_vector(signal.size());
    return out;
}

Dataset synthetic_dataset(Eigen::Index n, std::uint64_t seed) {
    if (n < 3) throw InvalidArgument("synthetic_dataset: need n >= 3");
    Rng rng(seed, 0, 0);
    Dataset d;
    d.locations.resize(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
        d.locations(i, 0) = rng.uniform();
        d.locations(i, 1) = rng.uniform();
    }
    d.covariates.resize(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
        d.covariates(i, 0) = rng.normal();
        d.covariates(i, 1) = rng.normal();
    }
    d.covariate_names = {"cov1", "cov2"};
    const Eigen::MatrixXd cov = exp_covariance(distance_matrix(d.spatial_locations()),
                                               CovarianceSpec<double>{CovarianceFamily::exponential, 1.0, 5.0});
    const Eigen::VectorXd gp = sample_mvn(Eigen::VectorXd::Zero(n), cov, rng);
    const Eigen::Vector3d trend(1.0, 0.5, -0.5);
    d.response = d.design() * trend + gp;
    return d;
}

double response_metric(const Eigen::VectorXd& truth, const Eigen::VectorXd& yhat_tc, const Eigen::VectorXd& yhat_m) {
    if (truth.size() != yhat_tc.size() || truth.size() != yhat_m.size())
        throw InvalidArgument("response_metric: length mismatch");
    return (truth - yhat_tc).squaredNorm() - (truth - yhat_m).squaredNorm();
}

Eigen::VectorXd chain_median_predictor(const Chain& chain, const Eigen::MatrixXd& x) {
    return posterior_summary(latent_draws(chain, x)).median;
}

std::vector<ResponseRow> run_empirical_simulation(const FactorialDesign& design, const Dataset& data) {
    if (design.snr_levels.empty() || design.d_levels.empty())
        throw InvalidArgument("run_empirical_simulation: factor levels must be nonempty");
    if (design.replicates < 1) throw InvalidArgument("run_empirical_simulation: replicates must be >= 1");
    for (const double d : design.d_levels)
        if (!(d > 0.0 && d <= 1.0)) throw InvalidArgument("run_empirical_simulation: d must be in (0, 1]");

    const Eigen::MatrixXd x = data.design();
    const auto locs = data.spatial_locations();
    const std::size_t n_d = design.d_levels.size();
    const auto reps = static_cast<std::size_t>(design.replicates);
    const std::size_t tasks = design.snr_levels.size() * n_d * reps;
    std::vector<ResponseRow> rows(tasks);

    parallel_for(tasks, design.threads, [&](std::size_t t) {
        const std::size_t cell = t / reps;
        const int rep = static_cast<int>(t % reps);
        const double snr = design.snr_levels[cell / n_d];
        const double d = design.d_levels[cell % n_d];

        Rng data_rng(design.seed, t, kData);
        const auto sim = simulate_dataset(data.response, snr, data_rng);
        ModelSpec spec;
        spec.x = x;
        spec.locs = locs;
        spec.sigma2 = sim.sigma2;
        const GibbsWorkspace ws(std::move(spec), sim.z);

        Rng rng_m(design.seed, t, kUntruncated);
        const Chain untruncated = run_gibbs(ws, design.mcmc.config(), rng_m);
        const double kappa = kappa_from_percentile(untruncated, d);
        Rng rng_tc(design.seed, t, kTruncated);
        Chain truncated;
        try {
            truncated = run_truncated(ws, untruncated, design.mcmc.config(kappa), rng_tc);
        } catch (const InitializationExhausted& e) {
            throw InitializationExhausted(e.what() + describe_cell(snr, d, rep), e.attempts());
        }

        ResponseRow& row = rows[t];
        row.snr = snr;
        row.d = d;
        row.replicate = rep;
        row.sigma2 = sim.sigma2;
        row.kappa = kappa;
        const Eigen::VectorXd yhat_m = chain_median_predictor(untruncated, x);
        const Eigen::VectorXd yhat_tc = chain_median_predictor(truncated, x);
        row.sse_tc = (sim.truth - yhat_tc).squaredNorm();
        row.sse_m = (sim.truth - yhat_m).squaredNorm();
        row.response = response_metric(sim.truth, yhat_tc, yhat_m);
        row.stalls = truncated.stall_count;
        row.beta_acceptance = truncated.beta_stats.acceptance_rate();
    });
    return rows;
}

Theorem2Report theorem2_check(const Theorem2Config& config, const Dataset& data) {
    if (config.replicates < 2) throw InvalidArgument("theorem2_check: need at least two replicates");
    const Eigen::MatrixXd x = data.design();
    const auto locs = data.spatial_locations();
    const Eigen::VectorXd& truth = data.response;
    const auto reps = static_cast<std::size_t>(config.replicates);

    Theorem2Report report;
    report.n = data.size();
    report.replicates = config.replicates;
    report.sigma2 = snr_to_sigma2(truth, config.snr);
    report.n_sigma2 = static_cast<double>(report.n) * report.sigma2;

    struct Replicate {
        std::optional<GibbsWorkspace> ws;
        Chain untruncated;
        double sse_m = 0.0;
    };
    std::vector<Replicate> runs(reps);
    parallel_for(reps, config.threads, [&](std::size_t r) {
        Rng data_rng(config.seed, r, kData);
        const auto sim = simulate_dataset(truth, config.snr, data_rng);
        ModelSpec spec;
        spec.x = x;
        spec.locs = locs;
        spec.sigma2 = sim.sigma2;
        runs[r].ws.emplace(std::move(spec), sim.z);
        Rng rng(config.seed, r, kUntruncated);
        runs[r].untruncated = run_gibbs(*runs[r].ws, config.mcmc.config(), rng);
        runs[r].sse_m = (truth - chain_median_predictor(runs[r].untruncated, x)).squaredNorm();
    });

    std::vector<double> sse_m(reps);
    for (std::size_t r = 0; r < reps; ++r) sse_m[r] = runs[r].sse_m;
    report.mse_m = mean_of(sse_m);
    report.mse_m_se = standard_error(sse_m);

    auto run_arm = [&](const std::string& name, double kappa, Stream stream) {
        Theorem2Arm arm;
        arm.name = name;
        arm.kappa = kappa;
        std::vector<double> sse_tc(reps), diff(reps);
        std::vector<std::size_t> stalls(reps, 0);
        std::vector<char> admissible(reps, 0);
        parallel_for(reps, config.threads, [&](std::size_t r) {
            const auto& ws = *runs[r].ws;
            auto start = state_below(runs[r].untruncated, kappa);
            if (!start) start = min_cpe_state(ws, kappa);
            if (!start) return;
            Rng rng(config.seed, r, stream);
            const Chain chain = run_gibbs(ws, config.mcmc.config(kappa), rng, start);
            sse_tc[r] = (truth - chain_median_predictor(chain, x)).squaredNorm();
            diff[r] = sse_tc[r] - sse_m[r];
            stalls[r] = chain.stall_count;
            admissible[r] = 1;
        });
        std::vector<double> kept_tc, kept_m, kept_diff;
        for (std::size_t r = 0; r < reps; ++r) {
            if (!admissible[r]) continue;
            kept_tc.push_back(sse_tc[r]);
            kept_m.push_back(sse_m[r]);
            kept_diff.push_back(diff[r]);
            arm.stalls += stalls[r];
        }
        arm.admissible = static_cast<int>(kept_diff.size());
        if (arm.admissible < 2)
            throw InitializationExhausted("theorem2_check: " + name + " arm has " + std::to_string(arm.admissible) +
                                              " replicates with a nonempty set {CPE < " + std::to_string(kappa) +
                                              "}",
                                          reps);
        arm.mean_sse_tc = mean_of(kept_tc);
        arm.mean_sse_m = mean_of(kept_m);
        arm.difference = mean_of(kept_diff);
        arm.difference_se = standard_error(kept_diff);
        return arm;
    };
    report.theorem = run_arm("theorem", report.mse_m + report.n_sigma2, kTruncated);
    report.control = run_arm("control", std::numeric_limits<double>::infinity(), kControl);
    return report;
}

WaicEstimate chain_waic(const Chain& chain, const Eigen::MatrixXd& x, const Eigen::VectorXd& z, double sigma2,
                        int batches) {
    const Eigen::MatrixXd ll = pointwise_loglik(chain, x, z, sigma2);
    WaicEstimate out;
    out.value = waic(ll).value;
    const Eigen::Index g = ll.rows();
    if (batches >= 2 && g / batches >= 2) {
        const Eigen::Index len = g / batches;
        std::vector<double> vals;
        for (int k = 0; k < batches; ++k) vals.push_back(waic(ll.middleRows(k * len, len)).value);
        out.mc_se = standard_error(vals);
    }
    return out;
}

WaicSweep run_waic_sweep(const GibbsWorkspace& ws, const std::vector<double>& d_grid, const McmcSettings& mcmc,
                         std::uint64_t seed) {
    if (d_grid.empty()) throw InvalidArgument("run_waic_sweep: empty d grid");
    for (const double d : d_grid)
        if (!(d > 0.0 && d <= 1.0)) throw InvalidArgument("run_waic_sweep: d must be in (0, 1]");
    const auto& spec = ws.spec();
    WaicSweep out;
    Rng rng_m(seed, 0, kUntruncated);
    const Chain untruncated = run_gibbs(ws, mcmc.config(), rng_m);
    out.untruncated = chain_waic(untruncated, spec.x, ws.z(), spec.sigma2);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < d_grid.size(); ++k) {
        WaicPoint pt;
        pt.d = d_grid[k];
        pt.kappa = kappa_from_percentile(untruncated, pt.d);
        try {
            Rng rng(seed, k + 1, kTruncated);
            const Chain chain = run_truncated(ws, untruncated, mcmc.config(pt.kappa), rng);
            pt.waic = chain_waic(chain, spec.x, ws.z(), spec.sigma2);
            pt.stalls = chain.stall_count;
            if (pt.waic.value < best) {
                best = pt.waic.value;
                out.argmin_d = pt.d;
            }
        } catch (const InitializationExhausted& e) {
            pt.admissible = false;
            pt.error = e.what();
        }
        out.points.push_back(std::move(pt));
    }
    return out;
}

std::vector<double> percentile_grid(int points) {
    if (points < 1) throw InvalidArgument("percentile_grid: need at least one point");
    std::vector<double> out;
    for (int k = 1; k <= points; ++k) out.push_back(static_cast<double>(k) / points);
    return out;
}

}  // namespace cpetrunc
