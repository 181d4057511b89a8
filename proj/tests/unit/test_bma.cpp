#include <doctest.h>

#include <cmath>
#include <numeric>

#include "cpetrunc/bma.hpp"
#include "cpetrunc/rng.hpp"
#include "cpetrunc/stat_core.hpp"
#include "oracles.hpp"

using namespace cpetrunc;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd random_covariates(Eigen::Index n, Rng& rng) {
    MatrixXd c(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) c.row(i) = rng.normal_vector(3).transpose();
    return c;
}

}  // namespace

TEST_SUITE("bma") {

TEST_CASE("subset designs") {
    Rng rng(1);
    const MatrixXd c = random_covariates(7, rng);
    const auto& flags = subset_flags();
    CHECK(subset_design(c, flags[0]).cols() == 1);
    CHECK(subset_design(c, flags[7]).cols() == 4);
    for (const auto& f : flags) {
        const MatrixXd d = subset_design(c, f);
        CHECK(d.col(0).isOnes());
        CHECK(d.cols() == 1 + f[0] + f[1] + f[2]);
    }
    const auto r = restricted_subset_prior();
    CHECK(std::accumulate(r.begin(), r.end(), 0.0) == doctest::Approx(1.0));
    CHECK(r[4] == 0.5);
    CHECK(r[7] == 0.5);
}

TEST_CASE("marginal likelihood") {
    SUBCASE("intercept only at z = 0") {
        const Eigen::Index n = 4;
        const CandidateModel m{1, MatrixXd::Ones(n, 1), 1.0};
        const double v = 2.0, s2 = 0.7;
        const MatrixXd cov = v * MatrixXd::Ones(n, n) + s2 * MatrixXd::Identity(n, n);
        CHECK(log_marginal_likelihood(VectorXd::Zero(n), m, v, s2) ==
              doctest::Approx(mvn_logpdf(VectorXd::Zero(n), VectorXd::Zero(n), cov)).epsilon(1e-12));
        CHECK(log_marginal_likelihood(VectorXd::Zero(n), m, v, s2) ==
              doctest::Approx(oracle::normal_logpdf(VectorXd::Zero(n), VectorXd::Zero(n), cov)).epsilon(1e-12));
    }
    SUBCASE("vanishing prior variance") {
        Rng rng(2);
        const MatrixXd x = subset_design(random_covariates(6, rng), subset_flags()[7]);
        const VectorXd z = rng.normal_vector(6);
        const double s2 = 1.3;
        const double noise_only = oracle::normal_logpdf(z, VectorXd::Zero(6), s2 * MatrixXd::Identity(6, 6));
        CHECK(log_marginal_likelihood(z, {8, x, 1.0}, 1e-12, s2) == doctest::Approx(noise_only).epsilon(1e-9));
    }
    SUBCASE("quadrature over beta") {
        Rng rng(3);
        const Eigen::Index n = 5;
        MatrixXd x(n, 2);
        x.col(0).setOnes();
        x.col(1) = rng.normal_vector(n);
        const VectorXd z = rng.normal_vector(n) + x * VectorXd::Constant(2, 0.4);
        const double v = 1.0, s2 = 1.0;
        const double h = 0.01, lim = 8.0;
        const int m = static_cast<int>(2 * lim / h);
        // log of the integral of N(z; X b, s2 I) N(b; 0, v I) over b
        double mx = -1e300;
        std::vector<double> terms;
        terms.reserve(static_cast<std::size_t>((m + 1) * (m + 1)));
        for (int i = 0; i <= m; ++i)
            for (int j = 0; j <= m; ++j) {
                const Eigen::Vector2d b(-lim + i * h, -lim + j * h);
                const double t = -0.5 * (z - x * b).squaredNorm() / s2 - 0.5 * n * std::log(2 * M_PI * s2) -
                                 0.5 * b.squaredNorm() / v - std::log(2 * M_PI * v);
                terms.push_back(t);
                mx = std::max(mx, t);
            }
        double sum = 0.0;
        for (double t : terms) sum += std::exp(t - mx);
        const double quad = mx + std::log(sum * h * h);
        CHECK(std::abs(log_marginal_likelihood(z, {1, x, 1.0}, v, s2) - quad) < 1e-4);
    }
}

TEST_CASE("posterior model weights") {
    Rng rng(4);
    const MatrixXd c = random_covariates(30, rng);
    const VectorXd z = 2.0 + c.col(0).array() * 1.5 + rng.normal_vector(30).array();
    SUBCASE("a single model takes all the weight") {
        const auto models = subset_models(c);
        const VectorXd w = bma_weights(z, {models[3]}, 10.0, 1.0);
        CHECK(w.size() == 1);
        CHECK(w(0) == doctest::Approx(1.0));
    }
    SUBCASE("identical models share equally") {
        const auto models = subset_models(c);
        const VectorXd w = bma_weights(z, {models[5], models[5], models[5]}, 10.0, 1.0);
        for (int k = 0; k < 3; ++k) CHECK(w(k) == doctest::Approx(1.0 / 3));
    }
    SUBCASE("weights follow the marginal likelihoods") {
        const auto models = subset_models(c);
        const VectorXd w = bma_weights(z, models, 10.0, 1.0);
        CHECK(w.sum() == doctest::Approx(1.0));
        for (int a = 0; a < 8; ++a)
            for (int b = 0; b < 8; ++b) {
                if (w(a) < 1e-200 || w(b) < 1e-200) continue;
                CHECK(std::log(w(a) / w(b)) ==
                      doctest::Approx(log_marginal_likelihood(z, models[a], 10.0, 1.0) -
                                      log_marginal_likelihood(z, models[b], 10.0, 1.0))
                          .epsilon(1e-8));
            }
    }
    SUBCASE("zero prior mass gives zero weight") {
        const auto models = subset_models(c, restricted_subset_prior());
        const VectorXd w = bma_weights(z, models, 10.0, 1.0);
        for (int k = 0; k < 8; ++k)
            if (k != 4 && k != 7) CHECK(w(k) == 0.0);
        CHECK(w(4) + w(7) == doctest::Approx(1.0));
    }
    SUBCASE("large log marginals do not overflow") {
        const VectorXd big = z * 1e3;
        const VectorXd w = bma_weights(big, subset_models(c), 10.0, 1e-4);
        CHECK(w.allFinite());
        CHECK(w.sum() == doctest::Approx(1.0));
    }
}

TEST_CASE("prediction") {
    Rng rng(5);
    const MatrixXd c = random_covariates(12, rng);
    const auto models = subset_models(c);
    const VectorXd z1 = rng.normal_vector(12), z2 = rng.normal_vector(12);
    SUBCASE("per-model mean is linear in z") {
        const VectorXd lhs = model_posterior_mean(2.0 * z1 - z2, models[6], 3.0, 0.8);
        const VectorXd rhs = 2.0 * model_posterior_mean(z1, models[6], 3.0, 0.8) - model_posterior_mean(z2, models[6], 3.0, 0.8);
        CHECK((lhs - rhs).norm() < 1e-10);
    }
    SUBCASE("per-model mean against the explicit form") {
        const MatrixXd& x = models[7].design;
        const MatrixXd k = 3.0 * x * x.transpose();
        const VectorXd direct = k * (k + 0.8 * MatrixXd::Identity(12, 12)).inverse() * z1;
        CHECK((model_posterior_mean(z1, models[7], 3.0, 0.8) - direct).norm() < 1e-9);
    }
    SUBCASE("two-model mixture") {
        const std::vector<CandidateModel> pair{models[0], models[7]};
        const VectorXd w = bma_weights(z1, pair, 3.0, 0.8);
        const VectorXd expected =
            w(0) * model_posterior_mean(z1, pair[0], 3.0, 0.8) + w(1) * model_posterior_mean(z1, pair[1], 3.0, 0.8);
        CHECK((bma_predict(z1, pair, 3.0, 0.8) - expected).norm() < 1e-12);
    }
}

}
