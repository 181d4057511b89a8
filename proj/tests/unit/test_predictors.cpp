#include <doctest.h>

#include <cmath>

#include "cpetrunc/errors.hpp"
#include "cpetrunc/predictors.hpp"

using namespace cpetrunc;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
    MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
    return m;
}

MatrixXd random_spd(Eigen::Index n, Rng& rng) {
    const MatrixXd m = random_matrix(n, n, rng);
    return m.transpose() * m + 0.5 * MatrixXd::Identity(n, n);
}

}  // namespace

TEST_SUITE("predictors") {

TEST_CASE("ols") {
    Rng rng(1);
    SUBCASE("intercept only gives the mean") {
        const VectorXd z = rng.normal_vector(7);
        const auto fit = ols_fit(MatrixXd::Ones(7, 1), z);
        CHECK((fit.fitted.array() - z.mean()).abs().maxCoeff() < 1e-12);
    }
    SUBCASE("column space is reproduced") {
        const MatrixXd x = random_matrix(9, 3, rng);
        const VectorXd z = x * VectorXd::LinSpaced(3, -1, 2);
        CHECK((ols_fit(x, z).fitted - z).norm() < 1e-10);
    }
    SUBCASE("normal equations") {
        const MatrixXd x = random_matrix(6, 2, rng);
        const VectorXd z = rng.normal_vector(6);
        const VectorXd oracle = x * (x.transpose() * x).inverse() * x.transpose() * z;
        const auto fit = ols_fit(x, z);
        CHECK((fit.fitted - oracle).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((ols_fit(x, fit.fitted).fitted - fit.fitted).cwiseAbs().maxCoeff() < 1e-10);
    }
    SUBCASE("rank deficiency") {
        MatrixXd x(4, 2);
        x << 1, 2, 1, 2, 1, 2, 1, 2;
        CHECK_THROWS_AS(ols_fit(x, VectorXd::Ones(4)), RankDeficient);
    }
}

TEST_CASE("blup") {
    Rng rng(2);
    SUBCASE("zero process covariance returns the prior mean") {
        const VectorXd mu = rng.normal_vector(4);
        const BlupInputs<double> in(mu, MatrixXd::Zero(4, 4), 1.0);
        CHECK((blup(rng.normal_vector(4), in) - mu).norm() < 1e-14);
    }
    SUBCASE("noiseless data are interpolated") {
        const BlupInputs<double> in(VectorXd::Zero(4), random_spd(4, rng), 0.0);
        const VectorXd z = rng.normal_vector(4);
        CHECK((blup(z, in) - z).norm() < 1e-10);
    }
    SUBCASE("explicit inverse") {
        const VectorXd mu = rng.normal_vector(4);
        const MatrixXd sy = random_spd(4, rng);
        const double s2 = 0.7;
        const VectorXd z = rng.normal_vector(4);
        const MatrixXd sz = sy + s2 * MatrixXd::Identity(4, 4);
        const VectorXd oracle = mu + sy * sz.inverse() * (z - mu);
        CHECK((blup(z, BlupInputs<double>(mu, sy, s2)) - oracle).cwiseAbs().maxCoeff() < 1e-10);
    }
    SUBCASE("linear in z for zero mean") {
        const BlupInputs<double> in(VectorXd::Zero(5), random_spd(5, rng), 1.3);
        const VectorXd z1 = rng.normal_vector(5), z2 = rng.normal_vector(5);
        const VectorXd lhs = blup(VectorXd(2.0 * z1 - 3.0 * z2), in);
        const VectorXd rhs = 2.0 * blup(z1, in) - 3.0 * blup(z2, in);
        CHECK((lhs - rhs).norm() < 1e-10);
    }
    SUBCASE("shrinks towards the mean") {
        for (double c : {0.1, 0.5, 0.9}) {
            const double s2 = 2.0;
            const MatrixXd sy = c / (1 - c) * s2 * MatrixXd::Identity(5, 5);
            const VectorXd mu = rng.normal_vector(5), z = rng.normal_vector(5);
            const VectorXd yhat = blup(z, BlupInputs<double>(mu, sy, s2));
            CHECK((yhat - mu).norm() <= (z - mu).norm() + 1e-12);
            CHECK((yhat - mu - c * (z - mu)).norm() < 1e-12);
        }
        const VectorXd mu = rng.normal_vector(5), z = rng.normal_vector(5);
        CHECK((blup(z, BlupInputs<double>(mu, random_spd(5, rng), 0.4)) - mu).norm() <= (z - mu).norm());
    }
}

TEST_CASE("kriging") {
    const auto locs = SpatialLocations<double>::from_points({{0, 0}, {1, 0}});
    VectorXd z(2);
    z << 1.0, 3.0;
    const auto mean = [](const auto&) { return 0.5; };
    const CovarianceSpec<double> spec{CovarianceFamily::exponential, 2.0, 1.5};
    SUBCASE("noiseless at an observed site") {
        Eigen::RowVector2d s0(1, 0);
        CHECK(kriging_point(s0, z, locs, mean, spec, 0.0) == doctest::Approx(3.0));
    }
    SUBCASE("far away reverts to the mean") {
        Eigen::RowVector2d s0(500, 500);
        CHECK(kriging_point(s0, z, locs, mean, spec, 0.2) == doctest::Approx(0.5));
    }
    SUBCASE("midpoint 2x2 system") {
        Eigen::RowVector2d s0(0.5, 0);
        const double s2 = 0.3, tau2 = 2.0, b = 1.5;
        const double c01 = tau2 * std::exp(-b), c0 = tau2 * std::exp(-b * 0.5);
        const double a = tau2 + s2;
        const double det = a * a - c01 * c01;
        const double r0 = z(0) - 0.5, r1 = z(1) - 0.5;
        const double w0 = (a * r0 - c01 * r1) / det, w1 = (-c01 * r0 + a * r1) / det;
        CHECK(kriging_point(s0, z, locs, mean, spec, s2) == doctest::Approx(0.5 + c0 * (w0 + w1)).epsilon(1e-12));
    }
}

TEST_CASE("posterior summary") {
    SUBCASE("single draw") {
        MatrixXd d(1, 2);
        d << 3.0, -1.0;
        const auto s = posterior_summary(d);
        CHECK(s.mean == d.row(0).transpose());
        CHECK(s.median == d.row(0).transpose());
        CHECK(s.sd.isZero());
    }
    SUBCASE("two draws") {
        MatrixXd d(2, 1);
        d << 0.0, 2.0;
        const auto s = posterior_summary(d);
        CHECK(s.mean(0) == 1.0);
        CHECK(s.median(0) == 1.0);
    }
    SUBCASE("symmetric set") {
        MatrixXd d(5, 1);
        d << -2, -1, 0, 1, 2;
        d.array() += 4.0;
        const auto s = posterior_summary(d);
        CHECK(s.median(0) == doctest::Approx(s.mean(0)));
    }
    SUBCASE("normal draws") {
        Rng rng(9);
        const int g = 10000;
        MatrixXd d(g, 1);
        for (int i = 0; i < g; ++i) d(i, 0) = 1.7 + 0.6 * rng.normal();
        const auto s = posterior_summary(d);
        CHECK(std::abs(s.mean(0) - 1.7) < 3 * 0.6 / std::sqrt(g));
        CHECK(s.sd(0) == doctest::Approx(0.6).epsilon(0.03));
    }
}

}
