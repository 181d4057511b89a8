#pragma once

// Point predictors: OLS projection, BLUP, simple kriging at a new site and
// coordinatewise posterior summaries of predictor draws.

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "cpetrunc/errors.hpp"
#include "cpetrunc/stat_core.hpp"

namespace cpetrunc {

template <typename Scalar = double>
struct OlsFit {
    VectorX<Scalar> fitted;
    VectorX<Scalar> coefficients;
};

/// X (X'X)^{-1} X' z, via column-pivoted QR. Throws RankDeficient if X lacks full column rank.
template <typename DerivedX, typename DerivedZ>
OlsFit<typename DerivedX::Scalar> ols_fit(const Eigen::MatrixBase<DerivedX>& x,
                                          const Eigen::MatrixBase<DerivedZ>& z) {
    using Scalar = typename DerivedX::Scalar;
    if (x.rows() != z.size()) throw InvalidArgument("ols_fit: design rows do not match data length");
    if (x.cols() > x.rows()) throw RankDeficient("ols_fit: more columns than rows");
    const MatrixX<Scalar> xm = x;
    Eigen::ColPivHouseholderQR<MatrixX<Scalar>> qr(xm);
    if (qr.rank() < xm.cols()) throw RankDeficient("ols_fit: design is rank deficient");
    OlsFit<Scalar> out;
    out.coefficients = qr.solve(VectorX<Scalar>(z));
    out.fitted = xm * out.coefficients;
    return out;
}

/// Prior mean and covariances for the BLUP. Sigma_Z is always Sigma_Y + sigma2 I.
template <typename Scalar = double>
class BlupInputs {
public:
    BlupInputs(VectorX<Scalar> mu_y, MatrixX<Scalar> sigma_y, Scalar sigma2)
        : mu_y_(std::move(mu_y)), sigma_y_(std::move(sigma_y)), sigma2_(sigma2) {
        if (sigma_y_.rows() != sigma_y_.cols() || sigma_y_.rows() != mu_y_.size())
            throw InvalidArgument("BlupInputs: dimension mismatch");
        if (sigma2_ < Scalar(0)) throw InvalidArgument("BlupInputs: sigma2 must be >= 0");
        sigma_z_ = sigma_y_;
        sigma_z_.diagonal().array() += sigma2_;
    }

    const VectorX<Scalar>& mu_y() const noexcept { return mu_y_; }
    const MatrixX<Scalar>& sigma_y() const noexcept { return sigma_y_; }
    const MatrixX<Scalar>& sigma_z() const noexcept { return sigma_z_; }
    Scalar sigma2() const noexcept { return sigma2_; }
    Eigen::Index size() const noexcept { return mu_y_.size(); }

private:
    VectorX<Scalar> mu_y_;
    MatrixX<Scalar> sigma_y_;
    MatrixX<Scalar> sigma_z_;
    Scalar sigma2_;
};

/// mu_Y + Sigma_Y Sigma_Z^{-1} (z - mu_Y).
template <typename Derived>
VectorX<typename Derived::Scalar> blup(const Eigen::MatrixBase<Derived>& z,
                                       const BlupInputs<typename Derived::Scalar>& in) {
    using Scalar = typename Derived::Scalar;
    if (z.size() != in.size()) throw InvalidArgument("blup: data length mismatch");
    const auto factor = chol_factor(in.sigma_z());
    const VectorX<Scalar> resid = z - in.mu_y();
    return in.mu_y() + in.sigma_y() * factor.solve(resid);
}

/**
 * Simple kriging at s0 under the exponential family:
 * mu(s0) + cov{Y(s0), z} Sigma_Z^{-1} (z - mu_Y). mean_fn maps a location row to its mean.
 */
template <typename Scalar, typename DerivedS, typename DerivedZ, typename MeanFn>
Scalar kriging_point(const Eigen::MatrixBase<DerivedS>& s0, const Eigen::MatrixBase<DerivedZ>& z,
                     const SpatialLocations<Scalar>& locs, MeanFn&& mean_fn,
                     const CovarianceSpec<Scalar>& spec, Scalar sigma2) {
    spec.validate();
    if (z.size() != locs.size()) throw InvalidArgument("kriging_point: data length mismatch");
    const Eigen::Index n = locs.size();
    VectorX<Scalar> mu(n);
    for (Eigen::Index i = 0; i < n; ++i) mu(i) = mean_fn(locs.point(i));
    const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> s0_row = s0.derived().reshaped().transpose();
    const BlupInputs<Scalar> in(mu, exp_covariance(distance_matrix(locs), spec), sigma2);
    const VectorX<Scalar> cross = exp_covariance(distances_to(s0_row, locs), spec);
    const auto factor = chol_factor(in.sigma_z());
    const VectorX<Scalar> resid = z - mu;
    return mean_fn(s0_row) + cross.dot(factor.solve(resid));
}

template <typename Scalar = double>
struct PosteriorSummary {
    VectorX<Scalar> mean;
    VectorX<Scalar> median;
    VectorX<Scalar> sd;
};

/// Coordinatewise mean, interpolated median and sd (divisor G-1) over draws stored one per row.
template <typename Derived>
PosteriorSummary<typename Derived::Scalar> posterior_summary(const Eigen::MatrixBase<Derived>& draws) {
    using Scalar = typename Derived::Scalar;
    const Eigen::Index g = draws.rows();
    if (g == 0) throw InvalidArgument("posterior_summary: no samples");
    PosteriorSummary<Scalar> out;
    out.mean = draws.colwise().mean().transpose();
    out.median.resize(draws.cols());
    out.sd.resize(draws.cols());
    for (Eigen::Index j = 0; j < draws.cols(); ++j) {
        const VectorX<Scalar> col = draws.col(j);
        out.median(j) = percentile(col, Scalar(0.5));
        out.sd(j) = g > 1 ? std::sqrt((col.array() - out.mean(j)).square().sum() /
                                      static_cast<Scalar>(g - 1))
                          : Scalar(0);
    }
    return out;
}

}  // namespace cpetrunc
