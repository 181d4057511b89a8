#pragma once

// Estimates of prediction error: training error, Mallows' Cp, the covariance penalized
// error under the BLUP, K-fold cross-validation, WAIC, and the augmentation quantities
// showing that an untruncated Gaussian model is a CPE-truncated one with bound -2 log u.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "cpetrunc/errors.hpp"
#include "cpetrunc/predictors.hpp"
#include "cpetrunc/rng.hpp"
#include "cpetrunc/stat_core.hpp"

namespace cpetrunc {

enum class CriterionKind { training, cp, cpe_blup, kfold_cv, waic };

template <typename Scalar = double>
struct CriterionComponents {
    Scalar fit = Scalar(0);
    Scalar penalty = Scalar(0);
};

template <typename Scalar = double>
struct CriterionValue {
    Scalar value = Scalar(0);
    CriterionKind kind = CriterionKind::training;
    std::optional<CriterionComponents<Scalar>> components;
};

template <typename DerivedZ, typename DerivedF>
typename DerivedZ::Scalar training_error(const Eigen::MatrixBase<DerivedZ>& z,
                                         const Eigen::MatrixBase<DerivedF>& fitted) {
    if (z.size() != fitted.size()) throw InvalidArgument("training_error: length mismatch");
    return (z - fitted).squaredNorm();
}

/// Training error + 2 sigma2 p, p the number of nonzero coefficients.
template <typename DerivedZ, typename DerivedF>
CriterionValue<typename DerivedZ::Scalar> mallows_cp(const Eigen::MatrixBase<DerivedZ>& z,
                                                     const Eigen::MatrixBase<DerivedF>& fitted,
                                                     Eigen::Index p, typename DerivedZ::Scalar sigma2) {
    using Scalar = typename DerivedZ::Scalar;
    if (p < 0) throw InvalidArgument("mallows_cp: negative parameter count");
    if (!(sigma2 > Scalar(0))) throw InvalidArgument("mallows_cp: sigma2 must be > 0");
    const Scalar fit = training_error(z, fitted);
    const Scalar penalty = Scalar(2) * sigma2 * static_cast<Scalar>(p);
    return {fit + penalty, CriterionKind::cp, CriterionComponents<Scalar>{fit, penalty}};
}

/// ||z - yhat||^2 + 2 sigma2 trace(Sigma_Y Sigma_Z^{-1}) with yhat the BLUP.
template <typename Derived>
CriterionValue<typename Derived::Scalar> cpe_from_blup(const Eigen::MatrixBase<Derived>& z,
                                                       const BlupInputs<typename Derived::Scalar>& in) {
    using Scalar = typename Derived::Scalar;
    if (z.size() != in.size()) throw InvalidArgument("cpe_blup: data length mismatch");
    const auto factor = chol_factor(in.sigma_z());
    const VectorX<Scalar> resid = z - in.mu_y();
    const VectorX<Scalar> yhat = in.mu_y() + in.sigma_y() * factor.solve(resid);
    const Scalar fit = (z - yhat).squaredNorm();
    const Scalar edf = factor.solve(in.sigma_y()).trace();
    const Scalar penalty = Scalar(2) * in.sigma2() * edf;
    return {fit + penalty, CriterionKind::cpe_blup, CriterionComponents<Scalar>{fit, penalty}};
}

/**
 * CPE of the BLUP for the spatial model y ~ N(X beta, tau2 exp(-b D)), z | y ~ N(y, sigma2 I).
 * Depends on (beta, tau2, b, z) only, never on a latent draw of y.
 */
template <typename DerivedZ, typename DerivedB, typename DerivedX, typename DerivedD>
CriterionValue<typename DerivedZ::Scalar> cpe_blup(const Eigen::MatrixBase<DerivedZ>& z,
                                                   const Eigen::MatrixBase<DerivedB>& beta,
                                                   typename DerivedZ::Scalar tau2,
                                                   typename DerivedZ::Scalar decay,
                                                   typename DerivedZ::Scalar sigma2,
                                                   const Eigen::MatrixBase<DerivedX>& x,
                                                   const Eigen::MatrixBase<DerivedD>& distances) {
    using Scalar = typename DerivedZ::Scalar;
    if (!(sigma2 > Scalar(0))) throw InvalidArgument("cpe_blup: sigma2 must be > 0");
    if (x.cols() != beta.size()) throw InvalidArgument("cpe_blup: beta length does not match design");
    const BlupInputs<Scalar> in(x * beta, exp_covariance(distances, CovarianceSpec<Scalar>{
                                                                        CovarianceFamily::exponential,
                                                                        tau2, decay}),
                                sigma2);
    return cpe_from_blup(z, in);
}

template <typename DerivedZ, typename DerivedB, typename DerivedX>
CriterionValue<typename DerivedZ::Scalar> cpe_blup(const Eigen::MatrixBase<DerivedZ>& z,
                                                   const Eigen::MatrixBase<DerivedB>& beta,
                                                   typename DerivedZ::Scalar tau2,
                                                   typename DerivedZ::Scalar decay,
                                                   typename DerivedZ::Scalar sigma2,
                                                   const Eigen::MatrixBase<DerivedX>& x,
                                                   const SpatialLocations<typename DerivedZ::Scalar>& locs) {
    return cpe_blup(z, beta, tau2, decay, sigma2, x, distance_matrix(locs));
}

/// Fold index per observation: seeded shuffle, then contiguous blocks of near-equal size.
inline std::vector<Eigen::Index> kfold_assignment(Eigen::Index n, Eigen::Index k, std::uint64_t seed) {
    if (k < 2 || k > n) throw InvalidArgument("kfold: K must satisfy 2 <= K <= n");
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng rng(seed);
    for (std::size_t i = order.size() - 1; i > 0; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(i + 1));
        std::swap(order[i], order[std::min(j, i)]);
    }
    std::vector<Eigen::Index> fold(static_cast<std::size_t>(n));
    for (Eigen::Index pos = 0; pos < n; ++pos)
        fold[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])] = pos * k / n;
    return fold;
}

/**
 * Mean over folds of the within-fold mean squared validation error. fit_predict receives
 * (train indices, test indices) and returns predictions for the test indices. K = n is LOOCV.
 */
template <typename Derived, typename FitPredict>
CriterionValue<typename Derived::Scalar> kfold_cv_err(const Eigen::MatrixBase<Derived>& z,
                                                      Eigen::Index k, std::uint64_t seed,
                                                      FitPredict&& fit_predict) {
    using Scalar = typename Derived::Scalar;
    const auto fold = kfold_assignment(z.size(), k, seed);
    Scalar total = Scalar(0);
    for (Eigen::Index f = 0; f < k; ++f) {
        std::vector<Eigen::Index> train, test;
        for (Eigen::Index i = 0; i < z.size(); ++i)
            (fold[static_cast<std::size_t>(i)] == f ? test : train).push_back(i);
        const VectorX<Scalar> pred = fit_predict(std::span<const Eigen::Index>(train),
                                                 std::span<const Eigen::Index>(test));
        if (pred.size() != static_cast<Eigen::Index>(test.size()))
            throw InvalidArgument("kfold_cv_err: predictor returned wrong length");
        Scalar sse = Scalar(0);
        for (std::size_t t = 0; t < test.size(); ++t) {
            const Scalar e = z(test[t]) - pred(static_cast<Eigen::Index>(t));
            sse += e * e;
        }
        total += sse / static_cast<Scalar>(test.size());
    }
    return {total / static_cast<Scalar>(k), CriterionKind::kfold_cv, std::nullopt};
}

/**
 * WAIC = -2 sum_i [log mean_g exp(l_gi) - var_g(l_gi)] from a G x n pointwise
 * log-likelihood matrix (rows are chain states). Components: fit = -2 lppd, penalty = 2 pWAIC.
 */
template <typename Derived>
CriterionValue<typename Derived::Scalar> waic(const Eigen::MatrixBase<Derived>& loglik) {
    using Scalar = typename Derived::Scalar;
    const Eigen::Index g = loglik.rows();
    if (g < 2) throw InvalidArgument("waic: need at least two chain states");
    if (!loglik.allFinite()) throw InvalidArgument("waic: non-finite log-likelihood");
    Scalar lppd = Scalar(0), pwaic = Scalar(0);
    const Scalar log_g = std::log(static_cast<Scalar>(g));
    for (Eigen::Index i = 0; i < loglik.cols(); ++i) {
        const auto col = loglik.col(i);
        const Scalar mx = col.maxCoeff();
        lppd += mx + std::log((col.array() - mx).exp().sum()) - log_g;
        const Scalar mean = col.mean();
        pwaic += (col.array() - mean).square().sum() / static_cast<Scalar>(g - 1);
    }
    return {Scalar(-2) * (lppd - pwaic), CriterionKind::waic,
            CriterionComponents<Scalar>{Scalar(-2) * lppd, Scalar(2) * pwaic}};
}

template <typename Scalar = double>
struct AugmentationQuantities {
    Scalar r = Scalar(0);
    Scalar log_density = Scalar(0);    ///< log f(z | y, sigma2)
    Scalar log_augmented = Scalar(0);  ///< r log f + min(0, -cpe/2)
    Scalar augmented = Scalar(0);      ///< f^r min(1, exp(-cpe/2))
};

/// Bound on the CPE implied by a uniform auxiliary draw u.
template <typename Scalar>
Scalar kappa_star(Scalar u) {
    if (!(u > Scalar(0) && u <= Scalar(1))) throw InvalidArgument("kappa_star: u must be in (0, 1]");
    return Scalar(-2) * std::log(u);
}

/// r = cpe / (2 log f) + 1 and f^r min(1, exp(-cpe/2)), which equals f whenever cpe >= 0.
template <typename DerivedZ, typename DerivedY>
AugmentationQuantities<typename DerivedZ::Scalar> theorem1_quantities(
    const Eigen::MatrixBase<DerivedZ>& z, const Eigen::MatrixBase<DerivedY>& y,
    typename DerivedZ::Scalar sigma2, typename DerivedZ::Scalar cpe) {
    using Scalar = typename DerivedZ::Scalar;
    if (z.size() != y.size()) throw InvalidArgument("theorem1_quantities: length mismatch");
    if (!(sigma2 > Scalar(0))) throw InvalidArgument("theorem1_quantities: sigma2 must be > 0");
    const auto n = static_cast<Scalar>(z.size());
    AugmentationQuantities<Scalar> out;
    out.log_density = Scalar(-0.5) * (n * std::log(Scalar(2) * std::numbers::pi_v<Scalar> * sigma2) +
                                      (z - y).squaredNorm() / sigma2);
    if (out.log_density == Scalar(0))
        throw InvalidArgument("theorem1_quantities: log-density is zero, r undefined");
    out.r = cpe / (Scalar(2) * out.log_density) + Scalar(1);
    out.log_augmented = out.r * out.log_density + std::min(Scalar(0), Scalar(-0.5) * cpe);
    out.augmented = std::exp(out.log_augmented);
    return out;
}

}  // namespace cpetrunc
