#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "cpetrunc/criteria.hpp"
#include "cpetrunc/errors.hpp"
#include "cpetrunc/sampler.hpp"
#include "oracles.hpp"

using namespace cpetrunc;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

MatrixXd random_locations(Eigen::Index n, Rng& rng) {
    MatrixXd p(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) p.row(i) << rng.uniform(), rng.uniform();
    return p;
}

ModelSpec make_spec(Eigen::Index n, Eigen::Index p, Rng& rng, double sigma2 = 0.5) {
    ModelSpec spec;
    spec.locs = SpatialLocations<double>(random_locations(n, rng));
    spec.x = MatrixXd::Ones(n, p);
    for (Eigen::Index j = 1; j < p; ++j)
        for (Eigen::Index i = 0; i < n; ++i) spec.x(i, j) = rng.normal();
    spec.sigma2 = sigma2;
    return spec;
}

MatrixXd h_matrix(const ModelSpec& spec, std::size_t level) {
    return exp_covariance(distance_matrix(spec.locs),
                          CovarianceSpec<double>{CovarianceFamily::exponential, 1.0, spec.b_levels[level].decay});
}

ChainState some_state(const GibbsWorkspace& ws, Rng& rng, double tau2 = 0.8, std::size_t level = 0) {
    ChainState s;
    s.beta = rng.normal_vector(ws.p());
    s.w = rng.normal_vector(ws.n());
    s.tau2 = tau2;
    s.b_index = level;
    s.cpe = ws.cpe(s.beta, s.tau2, s.b_index);
    return s;
}

}  // namespace

TEST_SUITE("sampler") {

TEST_CASE("workspace cpe agrees with the direct blup computation") {
    Rng rng(1);
    auto spec = make_spec(12, 3, rng);
    const VectorXd z = rng.normal_vector(12);
    const GibbsWorkspace ws(spec, z);
    for (int rep = 0; rep < 50; ++rep) {
        const VectorXd beta = rng.normal_vector(3);
        const double tau2 = std::exp(2 * rng.normal());
        const auto level = static_cast<std::size_t>(rng.uniform() * 6);
        const double direct = cpe_blup(z, beta, tau2, spec.b_levels[level].decay, spec.sigma2, spec.x, spec.locs).value;
        CHECK(ws.cpe(beta, tau2, level) == doctest::Approx(direct).epsilon(1e-10));
    }
}

TEST_CASE("quadratic form and log determinant") {
    Rng rng(2);
    auto spec = make_spec(6, 1, rng);
    const GibbsWorkspace ws(spec, rng.normal_vector(6));
    for (std::size_t level = 0; level < ws.levels(); ++level) {
        const MatrixXd h = h_matrix(spec, level);
        const VectorXd w = rng.normal_vector(6);
        CHECK(ws.quadratic_form(w, level) == doctest::Approx(w.dot(h.inverse() * w)).epsilon(1e-9));
        CHECK(ws.log_det_h(level) == doctest::Approx(std::log(h.determinant())).epsilon(1e-9));
    }
}

TEST_CASE("initialization") {
    Rng rng(3);
    auto spec = make_spec(8, 2, rng);
    const VectorXd z = rng.normal_vector(8);
    const GibbsWorkspace ws(spec, z);
    SUBCASE("unconstrained accepts the first draw") {
        GibbsConfig config;
        Rng a(10), b(10);
        const auto s = init_state(ws, config, a);
        // the first prior draw, reproduced by hand from the same stream
        const VectorXd beta = std::sqrt(spec.beta_prior_var) * b.normal_vector(2);
        CHECK((s.beta - beta).norm() == 0.0);
        CHECK(std::isfinite(s.cpe));
    }
    SUBCASE("inadmissible kappa") {
        GibbsConfig config;
        config.kappa = 1e-12;
        config.max_rejections = 10;
        CHECK_THROWS_AS(init_state(ws, config, rng), InitializationExhausted);
    }
    SUBCASE("geometric number of attempts") {
        // prior-predictive CPE drawn by hand
        std::vector<double> cpes;
        Rng prior(44);
        for (int k = 0; k < 20000; ++k) {
            const VectorXd beta = std::sqrt(10.0) * prior.normal_vector(2);
            const double tau2 = 1.0 / prior.gamma(1.0, 1.0 / 0.01);
            const auto level = static_cast<std::size_t>(prior.uniform() * 6);
            cpes.push_back(ws.cpe(beta, tau2, level));
        }
        for (double d : {0.5, 0.05}) {
            GibbsConfig config;
            config.kappa = percentile(std::span<const double>(cpes), d);
            config.max_rejections = 1;  // budget of 10 whole-state attempts
            const double p_success = 1.0 - std::pow(1.0 - d, 10);
            int ok = 0;
            const int trials = 4000;
            for (int t = 0; t < trials; ++t) {
                Rng r(500, static_cast<std::uint64_t>(t));
                try {
                    const auto s = init_state(ws, config, r);
                    CHECK(s.cpe < config.kappa);
                    ++ok;
                } catch (const InitializationExhausted&) {
                }
            }
            const double se = std::sqrt(p_success * (1 - p_success) / trials);
            CHECK(std::abs(static_cast<double>(ok) / trials - p_success) < 3 * se + 2.0 / std::sqrt(20000.0));
        }
    }
}

TEST_CASE("w full conditional") {
    Rng rng(4);
    auto spec = make_spec(3, 2, rng);
    const VectorXd z = rng.normal_vector(3);
    SUBCASE("data-dominated limit") {
        auto s = spec;
        s.sigma2 = 1e-10;
        const GibbsWorkspace ws(s, z);
        const auto st = some_state(ws, rng, 1.0);
        CHECK((ws.w_mean(st) - (z - s.x * st.beta)).norm() < 1e-6);
    }
    SUBCASE("prior-dominated limit") {
        const GibbsWorkspace ws(spec, z);
        const auto st = some_state(ws, rng, 1e-12);
        CHECK(ws.w_mean(st).norm() < 1e-9);
    }
    SUBCASE("moments of 1e5 draws") {
        const GibbsWorkspace ws(spec, z);
        const auto st = some_state(ws, rng, 1.4, 2);
        const MatrixXd h = h_matrix(spec, 2);
        const MatrixXd cov = (MatrixXd::Identity(3, 3) / spec.sigma2 + h.inverse() / st.tau2).inverse();
        const VectorXd mean = cov * (z - spec.x * st.beta) / spec.sigma2;
        CHECK((ws.w_mean(st) - mean).norm() < 1e-10);
        CHECK((ws.w_covariance(st) - cov).norm() < 1e-10);

        const int g = 100000;
        MatrixXd draws(g, 3);
        for (int i = 0; i < g; ++i) {
            const auto d = sample_w_fullcond(st, ws, rng);
            CHECK_FALSE(d.stalled);
            draws.row(i) = d.value.transpose();
        }
        const VectorXd m = draws.colwise().mean().transpose();
        for (int j = 0; j < 3; ++j) CHECK(std::abs(m(j) - mean(j)) < 3 * std::sqrt(cov(j, j) / g));
        const MatrixXd c = draws.rowwise() - draws.colwise().mean();
        const MatrixXd s = c.transpose() * c / (g - 1);
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) {
                const double se = std::sqrt((cov(j, j) * cov(k, k) + cov(j, k) * cov(j, k)) / g);
                CHECK(std::abs(s(j, k) - cov(j, k)) < 4 * se);
            }
    }
}

TEST_CASE("beta full conditional") {
    Rng rng(5);
    auto spec = make_spec(10, 2, rng);
    const VectorXd z = rng.normal_vector(10);
    SUBCASE("no information in the design") {
        auto s = spec;
        s.x.setZero();
        const GibbsWorkspace ws(s, z);
        CHECK((ws.beta_covariance() - 10.0 * MatrixXd::Identity(2, 2)).norm() < 1e-12);
        CHECK(ws.beta_mean(rng.normal_vector(10)).norm() < 1e-12);
    }
    SUBCASE("unconstrained moments") {
        const GibbsWorkspace ws(spec, z);
        const auto st = some_state(ws, rng);
        const MatrixXd cov = (spec.x.transpose() * spec.x / spec.sigma2 + MatrixXd::Identity(2, 2) / 10.0).inverse();
        const VectorXd mean = cov * spec.x.transpose() * (z - st.w) / spec.sigma2;
        CHECK((ws.beta_mean(st.w) - mean).norm() < 1e-10);
        GibbsConfig config;
        const int g = 100000;
        VectorXd sum = VectorXd::Zero(2);
        std::size_t proposals = 0;
        for (int i = 0; i < g; ++i) {
            const auto d = sample_beta_fullcond(st, ws, config, rng);
            proposals += d.proposals;
            sum += d.value;
        }
        CHECK(proposals == static_cast<std::size_t>(g));
        const VectorXd m = sum / g;
        for (int j = 0; j < 2; ++j) CHECK(std::abs(m(j) - mean(j)) < 3 * std::sqrt(cov(j, j) / g));
    }
}

TEST_CASE("tau2 full conditional") {
    Rng rng(6);
    const Eigen::Index n = 5;
    auto spec = make_spec(n, 1, rng);
    const VectorXd z = rng.normal_vector(n);
    const GibbsWorkspace ws(spec, z);
    GibbsConfig config;
    SUBCASE("zero latent field") {
        auto st = some_state(ws, rng);
        st.w.setZero();
        const double shape = n / 2.0 + 1.0, rate = 0.01;
        double sum = 0.0;
        const int g = 1000000;
        for (int i = 0; i < g; ++i) sum += sample_tau2_fullcond(st, ws, config, rng).value;
        CHECK(sum / g == doctest::Approx(rate / (shape - 1)).epsilon(0.01));
    }
    SUBCASE("fixed latent field") {
        const auto st = some_state(ws, rng, 1.0, 3);
        const double shape = 1.0 + n / 2.0;
        const double rate = 0.01 + 0.5 * st.w.dot(h_matrix(spec, 3).inverse() * st.w);
        double sum = 0.0;
        const int g = 1000000;
        for (int i = 0; i < g; ++i) sum += sample_tau2_fullcond(st, ws, config, rng).value;
        CHECK(sum / g == doctest::Approx(rate / (shape - 1)).epsilon(0.01));
    }
    SUBCASE("binding kappa lowers acceptance") {
        const auto st = some_state(ws, rng, 1.0, 3);
        std::vector<double> c;
        for (int i = 0; i < 2000; ++i) c.push_back(ws.cpe(st.beta, sample_tau2_fullcond(st, ws, config, rng).value, 3));
        GibbsConfig tight;
        tight.kappa = std::max(percentile(std::span<const double>(c), 0.1), st.cpe + 1e-9);
        std::size_t proposals = 0, draws = 0;
        for (int i = 0; i < 2000; ++i) {
            const auto d = sample_tau2_fullcond(st, ws, tight, rng);
            proposals += d.proposals;
            ++draws;
            CHECK(ws.cpe(st.beta, d.value, 3) < tight.kappa);
        }
        CHECK(static_cast<double>(draws) / static_cast<double>(proposals) < 1.0);
    }
}

TEST_CASE("b full conditional") {
    Rng rng(7);
    const Eigen::Index n = 6;
    const VectorXd z = rng.normal_vector(n);
    GibbsConfig config;
    SUBCASE("single level") {
        auto spec = make_spec(n, 1, rng);
        spec.b_levels = {{12.0, 1.0}};
        const GibbsWorkspace ws(spec, z);
        const auto st = some_state(ws, rng);
        for (int i = 0; i < 100; ++i) CHECK(sample_b_fullcond(st, ws, config, rng).value == 0);
    }
    SUBCASE("zero prior mass is rejected") {
        auto spec = make_spec(n, 1, rng);
        spec.b_levels = {{0.01, 0.0}, {30.0, 1.0}};
        CHECK_THROWS_AS(GibbsWorkspace(spec, z), InvalidArgument);
    }
    SUBCASE("identical levels follow the prior masses") {
        auto spec = make_spec(n, 1, rng);
        spec.b_levels = {{3.0, 0.3}, {3.0, 0.7}};
        const GibbsWorkspace ws(spec, z);
        const auto st = some_state(ws, rng);
        const VectorXd lw = ws.b_log_weights(st.w, st.tau2);
        CHECK(std::exp(lw(1) - lw(0)) == doctest::Approx(0.7 / 0.3));
        const int g = 100000;
        int ones = 0;
        for (int i = 0; i < g; ++i) ones += static_cast<int>(sample_b_fullcond(st, ws, config, rng).value);
        CHECK(std::abs(static_cast<double>(ones) / g - 0.7) < 3 * std::sqrt(0.21 / g));
    }
    SUBCASE("six levels match exact masses") {
        auto spec = make_spec(n, 1, rng);
        const GibbsWorkspace ws(spec, z);
        const auto st = some_state(ws, rng, 0.6);
        std::vector<double> lp;
        for (std::size_t k = 0; k < 6; ++k)
            lp.push_back(oracle::normal_logpdf(st.w, VectorXd::Zero(n), st.tau2 * h_matrix(spec, k)) + std::log(1.0 / 6));
        const double mx = *std::max_element(lp.begin(), lp.end());
        double tot = 0.0;
        for (double& v : lp) tot += (v = std::exp(v - mx));
        const int g = 100000;
        std::vector<int> counts(6, 0);
        for (int i = 0; i < g; ++i) ++counts[sample_b_fullcond(st, ws, config, rng).value];
        for (std::size_t k = 0; k < 6; ++k) {
            const double p = lp[k] / tot;
            CHECK(std::abs(counts[k] / static_cast<double>(g) - p) < 3 * std::sqrt(p * (1 - p) / g) + 1e-12);
        }
    }
}

TEST_CASE("monotone acceptance in kappa") {
    Rng rng(8);
    auto spec = make_spec(10, 2, rng);
    const VectorXd z = rng.normal_vector(10);
    const GibbsWorkspace ws(spec, z);
    Rng init(80);
    const Chain base = run_gibbs(ws, GibbsConfig{600, 100, kInf, 1000}, init);
    const ChainState st = base.states.back();
    std::size_t prev_beta = 0, prev_tau2 = 0, prev_b = 0;
    for (double d : {1.0, 0.8, 0.6, 0.4, 0.2, 0.05}) {
        GibbsConfig config;
        config.kappa = std::max(kappa_from_percentile(base, d), st.cpe + 1e-9);
        config.max_rejections = 100000;
        std::size_t pb = 0, pt = 0, pbb = 0;
        for (int rep = 0; rep < 50; ++rep) {
            Rng a(900, static_cast<std::uint64_t>(rep)), b(901, static_cast<std::uint64_t>(rep)),
                c(902, static_cast<std::uint64_t>(rep));
            pb += sample_beta_fullcond(st, ws, config, a).proposals;
            pt += sample_tau2_fullcond(st, ws, config, b).proposals;
            pbb += sample_b_fullcond(st, ws, config, c).proposals;
        }
        CHECK(pb >= prev_beta);
        CHECK(pt >= prev_tau2);
        CHECK(pbb >= prev_b);
        prev_beta = pb;
        prev_tau2 = pt;
        prev_b = pbb;
    }
}

TEST_CASE("unconstrained chain matches gaussian conditioning") {
    Rng rng(9);
    const Eigen::Index n = 5;
    auto spec = make_spec(n, 2, rng, 0.3);
    spec.b_levels = {{4.0, 1.0}};
    spec.tau2_prior = DiscretePrior{{0.9}, {1.0}};
    const VectorXd z = spec.x * VectorXd::Constant(2, 0.5) + rng.normal_vector(n);
    const GibbsWorkspace ws(spec, z);
    Rng chain_rng(90);
    const Chain chain = run_gibbs(ws, GibbsConfig{21000, 1000, kInf, 1000}, chain_rng);
    CHECK(chain.stall_count == 0);
    CHECK(chain.beta_stats.acceptance_rate() == 1.0);
    CHECK(chain.tau2_stats.acceptance_rate() == 1.0);
    CHECK(chain.b_stats.acceptance_rate() == 1.0);
    const auto post = oracle::conjugate_y_posterior(spec.x, spec.beta_prior_var, 0.9, h_matrix(spec, 0), spec.sigma2, z);
    const MatrixXd y = latent_draws(chain, spec.x);
    for (Eigen::Index i = 0; i < n; ++i) {
        std::vector<double> col(y.col(i).data(), y.col(i).data() + y.rows());
        const auto est = oracle::batch_mean_se(col);
        CHECK(std::abs(est.mean - post.mean(i)) < 3 * est.se);
        std::vector<double> sq;
        for (double v : col) sq.push_back((v - post.mean(i)) * (v - post.mean(i)));
        const auto var = oracle::batch_mean_se(sq);
        CHECK(std::abs(var.mean - post.cov(i, i)) < 3 * var.se);
    }
}

TEST_CASE("truncated chain occupancy matches the exact posterior") {
    Rng rng(10);
    const Eigen::Index n = 3;
    auto spec = make_spec(n, 1, rng, 0.5);
    spec.b_levels = {{1.0, 0.5}, {6.0, 0.5}};
    spec.tau2_prior = DiscretePrior{{0.3, 2.0}, {0.5, 0.5}};
    const VectorXd z = VectorXd::LinSpaced(n, -0.8, 1.4);
    const GibbsWorkspace ws(spec, z);
    Rng m_rng(100);
    const Chain free_chain = run_gibbs(ws, GibbsConfig{6000, 1000, kInf, 1000}, m_rng);
    const double kappa = kappa_from_percentile(free_chain, 0.4);
    Rng t_rng(101);
    const Chain chain = run_gibbs(ws, GibbsConfig{101000, 1000, kappa, 10000}, t_rng,
                                  state_below(free_chain, kappa));
    CHECK(chain.stall_count == 0);
    const auto exact = oracle::truncated_cell_masses(spec.x, spec.locs.coords(), spec.beta_prior_var, spec.sigma2, z,
                                                     {0.3, 2.0}, {0.5, 0.5}, {1.0, 6.0}, {0.5, 0.5}, kappa);
    for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t k = 0; k < 2; ++k) {
            std::vector<double> ind;
            for (const auto& s : chain.states) ind.push_back(s.tau2 == (t == 0 ? 0.3 : 2.0) && s.b_index == k ? 1.0 : 0.0);
            const auto est = oracle::batch_mean_se(ind);
            INFO("cell ", t, ",", k, " chain ", est.mean, " exact ", exact[t][k], " se ", est.se);
            CHECK(std::abs(est.mean - exact[t][k]) < 3 * est.se + 1e-12);
        }
}

TEST_CASE("constraint invariant and determinism") {
    Rng rng(11);
    auto spec = make_spec(15, 2, rng);
    const VectorXd z = rng.normal_vector(15);
    const GibbsWorkspace ws(spec, z);
    Rng m_rng(110);
    const Chain free_chain = run_gibbs(ws, GibbsConfig{1500, 500, kInf, 1000}, m_rng);
    CHECK(free_chain.stall_count == 0);
    for (double d : {0.1, 0.5, 0.9}) {
        const double kappa = kappa_from_percentile(free_chain, d);
        Rng a(111), b(111);
        const GibbsConfig config{1500, 500, kappa, 1000};
        const Chain c1 = run_gibbs(ws, config, a, state_below(free_chain, kappa));
        const Chain c2 = run_gibbs(ws, config, b, state_below(free_chain, kappa));
        REQUIRE(c1.size() == 1000);
        bool below = true, same = true;
        for (std::size_t g = 0; g < c1.size(); ++g) {
            const auto& s = c1.states[g];
            const double fresh =
                cpe_blup(z, s.beta, s.tau2, spec.b_levels[s.b_index].decay, spec.sigma2, spec.x, spec.locs).value;
            below = below && fresh < kappa && s.cpe < kappa;
            same = same && s.beta == c2.states[g].beta && s.w == c2.states[g].w && s.tau2 == c2.states[g].tau2 &&
                   s.b_index == c2.states[g].b_index;
        }
        CHECK(below);
        CHECK(same);
    }
}

TEST_CASE("start state outside the constraint is rejected") {
    Rng rng(12);
    auto spec = make_spec(6, 1, rng);
    const GibbsWorkspace ws(spec, rng.normal_vector(6));
    const auto st = some_state(ws, rng);
    Rng r(1);
    CHECK_THROWS_AS(run_gibbs(ws, GibbsConfig{10, 0, st.cpe, 10}, r, st), InvalidArgument);
}

TEST_CASE("kappa from percentile") {
    Chain chain;
    for (int i = 100; i >= 1; --i) chain.cpe_trace.push_back(i);
    CHECK(kappa_from_percentile(chain, 0.1) == doctest::Approx(10.9));
    CHECK(kappa_from_percentile(chain, 1.0) == 100.0);
    CHECK(kappa_from_percentile(chain, 0.5) == doctest::Approx(50.5));
    CHECK_THROWS_AS(kappa_from_percentile(Chain{}, 0.5), InvalidArgument);
}

TEST_CASE("lowest-cpe state") {
    Rng rng(13);
    auto spec = make_spec(20, 3, rng);
    const VectorXd z = rng.normal_vector(20);
    const GibbsWorkspace ws(spec, z);
    CHECK_FALSE(min_cpe_state(ws, 1e-12).has_value());
    const auto s = min_cpe_state(ws, kInf);
    REQUIRE(s.has_value());
    CHECK(s->cpe == doctest::Approx(ws.cpe(s->beta, s->tau2, s->b_index)));
    for (int rep = 0; rep < 200; ++rep) {
        const auto t = some_state(ws, rng, std::exp(2 * rng.normal()), static_cast<std::size_t>(rng.uniform() * 6));
        CHECK(s->cpe <= t.cpe + 1e-9);
    }
}

}
