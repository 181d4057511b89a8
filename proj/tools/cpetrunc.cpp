// cpetrunc: command-line driver for the truncated CPE experiments.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cpetrunc/bma.hpp"
#include "cpetrunc/errors.hpp"
#include "cpetrunc/experiments.hpp"
#include "cpetrunc/io.hpp"
#include "cpetrunc/predictors.hpp"
#include "cpetrunc/sampler.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cpetrunc;

namespace {

struct Common {
    std::uint64_t seed = 1;
    std::string out;
    int threads = 0;
    bool paper_scale = false;
    std::string data;
    std::string columns;
    std::optional<std::uint64_t> data_seed;
    std::optional<int> n;
};

struct Mcmc {
    std::optional<int> iterations, burn_in;
    int max_rejections = 1000;

    McmcSettings resolve(bool paper) const {
        McmcSettings m;
        m.total_iterations = iterations.value_or(paper ? 12000 : 4000);
        m.burn_in = burn_in.value_or(paper ? 2000 : 1000);
        m.max_rejections = max_rejections;
        return m;
    }
};

json mcmc_json(const McmcSettings& m) {
    return {{"total_iterations", m.total_iterations}, {"burn_in", m.burn_in}, {"max_rejections", m.max_rejections}};
}

int resolve_threads(int requested) {
    if (requested > 0) return requested;
    return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

void add_common(CLI::App* app, Common& c, bool with_data, bool with_scale) {
    app->add_option("--seed", c.seed, "Master RNG seed")->capture_default_str();
    app->add_option("--out", c.out, "Output directory (default out/<subcommand>)");
    app->add_option("--threads", c.threads, "Worker threads (0 = all cores)")->capture_default_str();
    if (with_scale) {
        auto* desk = app->add_flag("--desk-scale", "Desk-scale defaults (n=40, 30 replicates, G=4000/burn 1000)");
        auto* paper = app->add_flag("--paper-scale", c.paper_scale,
                                    "Paper-scale defaults (n=112, 100 replicates, G=12000/burn 2000)");
        desk->excludes(paper);
    }
    if (with_data) {
        app->add_option("--data", c.data, "Dataset file (comma or tab delimited); synthetic data if absent");
        app->add_option("--columns", c.columns, "Column map, e.g. x=Easting,y=Northing,response=logthick");
        app->add_option("--data-seed", c.data_seed, "Seed of the synthetic fallback dataset (default --seed)");
        app->add_option("--n", c.n, "Sites in the synthetic fallback dataset");
    }
}

void add_mcmc(CLI::App* app, Mcmc& m) {
    app->add_option("--iterations", m.iterations, "Total Gibbs iterations G");
    app->add_option("--burn-in", m.burn_in, "Burn-in iterations");
    app->add_option("--max-rejections", m.max_rejections, "Rejection budget per constrained block")
        ->capture_default_str();
}

struct LoadedData {
    Dataset data;
    json source;
};

LoadedData obtain_dataset(const Common& c) {
    if (!c.data.empty()) {
        if (!fs::exists(c.data)) throw IoError("file not found: " + c.data);
        auto data = load_dataset(c.data, ColumnMap::parse(c.columns));
        return {std::move(data), {{"kind", "file"}, {"path", c.data}, {"columns", c.columns}}};
    }
    const Eigen::Index n = c.n.value_or(c.paper_scale ? 112 : 40);
    const std::uint64_t seed = c.data_seed.value_or(c.seed);
    std::cerr << "warning: no --data given; using synthetic dataset (n=" << n << ", seed=" << seed << ")\n";
    return {synthetic_dataset(n, seed), {{"kind", "synthetic"}, {"n", n}, {"seed", seed}}};
}

std::string out_dir(const Common& c, const std::string& name) { return c.out.empty() ? "out/" + name : c.out; }

json base_manifest(const std::string& subcommand, const Common& c) {
    return {{"subcommand", subcommand}, {"seed", c.seed}, {"scale", c.paper_scale ? "paper" : "desk"}};
}

void finish(OutputDirectory& dir, json manifest, std::chrono::steady_clock::time_point start) {
    manifest["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    dir.finish(std::move(manifest));
    std::cout << "wrote " << dir.path().string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Truncated covariance-penalized-error models: experiments and samplers"};
    app.set_config("--config", "", "Config file (TOML/INI); flags override file values");
    app.require_subcommand(1);
    app.fallthrough();

    // cp-experiment
    Common cp_c;
    int cp_reps = 1000;
    std::vector<double> cp_sigmas{0.5, 1.0, 2.0, 3.5};
    auto* cp = app.add_subcommand("cp-experiment", "Mallows' Cp model-selection frequencies over the 8 subsets");
    add_common(cp, cp_c, false, false);
    cp->add_option("--replicates", cp_reps, "Replicates per sigma")->capture_default_str();
    cp->add_option("--sigma", cp_sigmas, "Noise standard deviations")->capture_default_str();

    // bma-experiment
    Common bma_c;
    int bma_reps = 1000;
    double bma_sigma = 2.0;
    double bma_v = 10.0;
    auto* bma = app.add_subcommand("bma-experiment", "BMA squared-error differences, uniform vs restricted prior");
    add_common(bma, bma_c, false, false);
    bma->add_option("--replicates", bma_reps, "Replicates")->capture_default_str();
    bma->add_option("--sigma", bma_sigma, "Noise standard deviation")->capture_default_str();
    bma->add_option("--prior-var", bma_v, "Prior variance of the coefficients")->capture_default_str();

    // simulate
    Common sim_c;
    Mcmc sim_m;
    std::optional<int> sim_reps;
    std::vector<double> sim_snr{3, 5, 10};
    std::vector<double> sim_d{0.1, 0.5, 0.9};
    auto* sim = app.add_subcommand("simulate", "Factorial SNR x d truncation study with two-way ANOVA");
    add_common(sim, sim_c, true, true);
    add_mcmc(sim, sim_m);
    sim->add_option("--replicates", sim_reps, "Replicates per cell");
    sim->add_option("--snr", sim_snr, "SNR levels")->capture_default_str();
    sim->add_option("--d", sim_d, "Percentile levels of the untruncated CPE trace")->capture_default_str();

    // fit
    Common fit_c;
    Mcmc fit_m;
    double fit_pct = 0.5;
    std::optional<double> fit_kappa;
    std::optional<double> fit_sigma2;
    double fit_snr = 5.0;
    auto* fit = app.add_subcommand("fit", "Untruncated and truncated chains on one dataset");
    add_common(fit, fit_c, true, true);
    add_mcmc(fit, fit_m);
    auto* pct_opt = fit->add_option("--kappa-percentile", fit_pct, "kappa as a percentile of the untruncated CPE trace")
                        ->capture_default_str();
    auto* abs_opt = fit->add_option("--kappa-abs", fit_kappa, "Absolute kappa");
    pct_opt->excludes(abs_opt);
    fit->add_option("--sigma2", fit_sigma2, "Known noise variance (default: from --snr)");
    fit->add_option("--snr", fit_snr, "SNR used to set sigma2 (and the noise of synthetic data)")->capture_default_str();

    // waic-sweep
    Common ws_c;
    Mcmc ws_m;
    int ws_points = 20;
    std::vector<double> ws_d;
    std::optional<double> ws_sigma2;
    double ws_snr = 5.0;
    auto* wsw = app.add_subcommand("waic-sweep", "WAIC over a grid of CPE percentiles");
    add_common(wsw, ws_c, true, true);
    add_mcmc(wsw, ws_m);
    wsw->add_option("--grid-points", ws_points, "Grid d_k = k/points")->capture_default_str();
    wsw->add_option("--d", ws_d, "Explicit percentile grid (overrides --grid-points)");
    wsw->add_option("--sigma2", ws_sigma2, "Known noise variance (default: from --snr)");
    wsw->add_option("--snr", ws_snr, "SNR used to set sigma2 (and the noise of synthetic data)")->capture_default_str();

    // anova
    Common an_c;
    std::string an_input;
    std::string an_response = "response", an_a = "snr", an_b = "d";
    auto* an = app.add_subcommand("anova", "Two-way ANOVA of a response table");
    add_common(an, an_c, false, false);
    an->add_option("--input", an_input, "Table with response and factor columns")->required();
    an->add_option("--response", an_response, "Response column")->capture_default_str();
    an->add_option("--factor-a", an_a, "First factor column")->capture_default_str();
    an->add_option("--factor-b", an_b, "Second factor column")->capture_default_str();

    // theorem2-check
    Common t2_c;
    Mcmc t2_m;
    std::optional<int> t2_reps;
    double t2_snr = 3.0;
    auto* t2 = app.add_subcommand("theorem2-check", "MSPE of the truncated model at the theoretical kappa");
    add_common(t2, t2_c, true, true);
    add_mcmc(t2, t2_m);
    t2->add_option("--replicates", t2_reps, "Replicates (default 50, paper scale 100)");
    t2->add_option("--snr", t2_snr, "SNR")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::Error& e) {
        std::cerr << "error[invalid_argument]: " << e.what() << "\n";
        return 2;
    }

    const auto start = std::chrono::steady_clock::now();
    try {
        if (*cp) {
            auto result = run_cp_experiment(cp_reps, cp_sigmas, cp_c.seed);
            OutputDirectory dir(out_dir(cp_c, "cp-experiment"));
            dir.write("cp_frequencies.csv", cp_table(result));
            auto m = base_manifest("cp-experiment", cp_c);
            m["config"] = {{"replicates", cp_reps}, {"sigma", cp_sigmas}, {"n", 200}, {"beta", {2, 1, 1, 0}}};
            finish(dir, m, start);
        } else if (*bma) {
            auto diffs = run_bma_experiment(bma_reps, bma_sigma, bma_c.seed, std::nullopt, bma_v);
            OutputDirectory dir(out_dir(bma_c, "bma-experiment"));
            dir.write("bma_differences.csv", bma_difference_table(diffs));
            auto m = base_manifest("bma-experiment", bma_c);
            m["config"] = {{"replicates", bma_reps}, {"sigma", bma_sigma}, {"prior_var", bma_v}, {"n", 200},
                           {"restricted_prior", restricted_subset_prior()}};
            finish(dir, m, start);
        } else if (*sim) {
            auto loaded = obtain_dataset(sim_c);
            FactorialDesign design;
            design.snr_levels = sim_snr;
            design.d_levels = sim_d;
            design.replicates = sim_reps.value_or(sim_c.paper_scale ? 100 : 30);
            design.seed = sim_c.seed;
            design.mcmc = sim_m.resolve(sim_c.paper_scale);
            design.threads = resolve_threads(sim_c.threads);
            auto rows = run_empirical_simulation(design, loaded.data);

            std::vector<double> response;
            std::vector<std::string> a, b;
            for (const auto& r : rows) {
                response.push_back(r.response);
                a.push_back(format_number(r.snr));
                b.push_back(format_number(r.d));
            }
            OutputDirectory dir(out_dir(sim_c, "simulate"));
            dir.write("responses.csv", response_table(rows));
            dir.write("cell_means.csv", cell_mean_table(rows));
            dir.write("anova.csv", anova_table(two_way_anova(response, a, b, "SNR", "d")));
            auto m = base_manifest("simulate", sim_c);
            m["config"] = {{"snr", sim_snr}, {"d", sim_d}, {"replicates", design.replicates},
                           {"mcmc", mcmc_json(design.mcmc)}, {"threads", design.threads}};
            m["data"] = loaded.source;
            finish(dir, m, start);
        } else if (*fit || *wsw) {
            const bool is_fit = static_cast<bool>(*fit);
            const Common& c = is_fit ? fit_c : ws_c;
            const Mcmc& mc = is_fit ? fit_m : ws_m;
            const double snr = is_fit ? fit_snr : ws_snr;
            const auto& sigma2_flag = is_fit ? fit_sigma2 : ws_sigma2;
            auto loaded = obtain_dataset(c);
            const auto settings = mc.resolve(c.paper_scale);

            Eigen::VectorXd z;
            double sigma2 = 0.0;
            if (c.data.empty()) {
                Rng data_rng(c.seed, 0, 9);
                auto sim_data = simulate_dataset(loaded.data.response, snr, data_rng);
                z = sim_data.z;
                sigma2 = sigma2_flag.value_or(sim_data.sigma2);
            } else {
                z = loaded.data.response;
                sigma2 = sigma2_flag ? *sigma2_flag : snr_to_sigma2(z, snr);
            }
            ModelSpec spec;
            spec.x = loaded.data.design();
            spec.locs = loaded.data.spatial_locations();
            spec.sigma2 = sigma2;
            const GibbsWorkspace ws(spec, z);

            auto m = base_manifest(is_fit ? "fit" : "waic-sweep", c);
            m["data"] = loaded.source;
            if (is_fit) {
                Rng rng_m(c.seed, 0, 0);
                const Chain untruncated = run_gibbs(ws, settings.config(), rng_m);
                const double kappa = fit_kappa ? *fit_kappa : kappa_from_percentile(untruncated, fit_pct);
                Rng rng_tc(c.seed, 0, 1);
                auto warm = state_below(untruncated, kappa);
                if (!warm) warm = min_cpe_state(ws, kappa);
                const Chain truncated = run_gibbs(ws, settings.config(kappa), rng_tc, warm);

                const auto sum_m = posterior_summary(latent_draws(untruncated, spec.x));
                const auto sum_tc = posterior_summary(latent_draws(truncated, spec.x));
                Table pred;
                pred.header = {"site", "z", "mean_m", "median_m", "sd_m", "mean_tc", "median_tc", "sd_tc"};
                for (Eigen::Index i = 0; i < z.size(); ++i)
                    pred.rows.push_back((RowBuilder() << static_cast<std::size_t>(i) << z(i) << sum_m.mean(i)
                                                      << sum_m.median(i) << sum_m.sd(i) << sum_tc.mean(i)
                                                      << sum_tc.median(i) << sum_tc.sd(i))
                                            .take());
                Table summary;
                summary.header = {"arm", "kappa", "waic", "waic_se", "stalls", "acc_beta", "acc_tau2", "acc_b"};
                for (const auto* ch : {&untruncated, &truncated}) {
                    const auto w = chain_waic(*ch, spec.x, z, sigma2);
                    summary.rows.push_back((RowBuilder() << (ch == &untruncated ? "untruncated" : "truncated")
                                                         << ch->kappa << w.value << w.mc_se << ch->stall_count
                                                         << ch->beta_stats.acceptance_rate()
                                                         << ch->tau2_stats.acceptance_rate()
                                                         << ch->b_stats.acceptance_rate())
                                               .take());
                }
                OutputDirectory dir(out_dir(c, "fit"));
                dir.write("chain_untruncated.csv", chain_table(untruncated, ws, settings.burn_in));
                dir.write("chain_truncated.csv", chain_table(truncated, ws, settings.burn_in));
                dir.write("predictions.csv", pred);
                dir.write("fit_summary.csv", summary);
                m["config"] = {{"mcmc", mcmc_json(settings)}, {"sigma2", sigma2}, {"snr", snr}, {"kappa", kappa}};
                if (fit_kappa) m["config"]["kappa_abs"] = *fit_kappa;
                else m["config"]["kappa_percentile"] = fit_pct;
                finish(dir, m, start);
            } else {
                const auto grid = ws_d.empty() ? percentile_grid(ws_points) : ws_d;
                const auto sweep = run_waic_sweep(ws, grid, settings, c.seed);
                OutputDirectory dir(out_dir(c, "waic-sweep"));
                dir.write("waic_sweep.csv", waic_table(sweep));
                m["config"] = {{"mcmc", mcmc_json(settings)}, {"sigma2", sigma2}, {"snr", snr}, {"d", grid}};
                m["argmin_d"] = sweep.argmin_d ? json(*sweep.argmin_d) : json(nullptr);
                finish(dir, m, start);
            }
        } else if (*an) {
            auto t = read_table(an_input);
            auto table = two_way_anova(t.numeric_column(an_response), t.text_column(an_a), t.text_column(an_b),
                                       an_a, an_b);
            OutputDirectory dir(out_dir(an_c, "anova"));
            dir.write("anova.csv", anova_table(table));
            auto m = base_manifest("anova", an_c);
            m["config"] = {{"input", an_input}, {"response", an_response}, {"factor_a", an_a}, {"factor_b", an_b}};
            finish(dir, m, start);
        } else if (*t2) {
            auto loaded = obtain_dataset(t2_c);
            Theorem2Config cfg;
            cfg.n = loaded.data.size();
            cfg.snr = t2_snr;
            cfg.replicates = t2_reps.value_or(t2_c.paper_scale ? 100 : 50);
            cfg.seed = t2_c.seed;
            cfg.mcmc = t2_m.resolve(t2_c.paper_scale);
            cfg.threads = resolve_threads(t2_c.threads);
            auto report = theorem2_check(cfg, loaded.data);
            OutputDirectory dir(out_dir(t2_c, "theorem2-check"));
            dir.write("theorem2.csv", theorem2_table(report));
            auto m = base_manifest("theorem2-check", t2_c);
            m["config"] = {{"snr", cfg.snr}, {"replicates", cfg.replicates}, {"mcmc", mcmc_json(cfg.mcmc)},
                           {"threads", cfg.threads}};
            m["data"] = loaded.source;
            finish(dir, m, start);
        }
    } catch (const Error& e) {
        std::cerr << "error[" << category_name(e.category()) << "]: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error[internal]: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
