#pragma once

// Shared numeric substrate: distances, exponential covariance, Cholesky with a single
// jitter retry, Gaussian and inverse-gamma sampling, percentiles and SNR calibration.
// Everything is templated on the scalar type and accepts Eigen expressions.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cpetrunc/errors.hpp"
#include "cpetrunc/rng.hpp"

namespace cpetrunc {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// n points in R^d, stored one point per row.
template <typename Scalar = double>
class SpatialLocations {
public:
    SpatialLocations() = default;

    explicit SpatialLocations(MatrixX<Scalar> coords) : coords_(std::move(coords)) {
        if (coords_.rows() < 1 || coords_.cols() < 1)
            throw InvalidArgument("SpatialLocations: need at least one point of dimension >= 1");
        if (!coords_.allFinite())
            throw InvalidArgument("SpatialLocations: non-finite coordinate");
    }

    static SpatialLocations from_points(const std::vector<std::vector<Scalar>>& points) {
        if (points.empty()) throw InvalidArgument("SpatialLocations: no points");
        const auto dim = static_cast<Eigen::Index>(points.front().size());
        MatrixX<Scalar> coords(static_cast<Eigen::Index>(points.size()), dim);
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (static_cast<Eigen::Index>(points[i].size()) != dim)
                throw InvalidArgument("SpatialLocations: point " + std::to_string(i) +
                                      " has dimension " + std::to_string(points[i].size()) +
                                      ", expected " + std::to_string(dim));
            for (Eigen::Index j = 0; j < dim; ++j)
                coords(static_cast<Eigen::Index>(i), j) = points[i][static_cast<std::size_t>(j)];
        }
        return SpatialLocations(std::move(coords));
    }

    Eigen::Index size() const noexcept { return coords_.rows(); }
    Eigen::Index dimension() const noexcept { return coords_.cols(); }
    const MatrixX<Scalar>& coords() const noexcept { return coords_; }
    auto point(Eigen::Index i) const { return coords_.row(i); }

private:
    MatrixX<Scalar> coords_;
};

enum class CovarianceFamily { exponential };

/// C[i][j] = scale * exp(-decay * ||s_i - s_j||).
template <typename Scalar = double>
struct CovarianceSpec {
    CovarianceFamily family = CovarianceFamily::exponential;
    Scalar scale = Scalar(1);
    Scalar decay = Scalar(1);

    void validate() const {
        if (!(scale > Scalar(0))) throw InvalidArgument("CovarianceSpec: scale (tau^2) must be > 0");
        if (!(decay > Scalar(0))) throw InvalidArgument("CovarianceSpec: decay (b) must be > 0");
    }
};

/// Observed z with its known noise variance.
template <typename Scalar = double>
struct DataVector {
    VectorX<Scalar> z;
    Scalar sigma2 = Scalar(1);

    void validate() const {
        if (!z.allFinite()) throw InvalidArgument("DataVector: non-finite entry");
        if (!(sigma2 > Scalar(0))) throw InvalidArgument("DataVector: sigma2 must be > 0");
    }
};

template <typename Scalar>
MatrixX<Scalar> distance_matrix(const SpatialLocations<Scalar>& locs) {
    const Eigen::Index n = locs.size();
    MatrixX<Scalar> d = MatrixX<Scalar>::Zero(n, n);
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = j + 1; i < n; ++i) {
            d(i, j) = (locs.point(i) - locs.point(j)).norm();
            d(j, i) = d(i, j);
        }
    return d;
}

/// Distances from one point to every location.
template <typename Scalar, typename Derived>
VectorX<Scalar> distances_to(const Eigen::MatrixBase<Derived>& s0, const SpatialLocations<Scalar>& locs) {
    if (s0.size() != locs.dimension())
        throw InvalidArgument("distances_to: point dimension does not match locations");
    VectorX<Scalar> out(locs.size());
    for (Eigen::Index i = 0; i < locs.size(); ++i)
        out(i) = (locs.point(i) - s0.derived().reshaped().transpose()).norm();
    return out;
}

template <typename Derived>
MatrixX<typename Derived::Scalar> exp_covariance(const Eigen::MatrixBase<Derived>& distances,
                                                 const CovarianceSpec<typename Derived::Scalar>& spec) {
    spec.validate();
    if ((distances.array() < 0).any()) throw InvalidArgument("exp_covariance: negative distance");
    return spec.scale * (-spec.decay * distances.array()).exp().matrix();
}

template <typename Scalar>
struct CholeskyFactor {
    Eigen::LLT<MatrixX<Scalar>> llt;
    Scalar log_det = Scalar(0);
    /// Diagonal jitter that was added, zero when the first attempt succeeded.
    Scalar jitter = Scalar(0);

    MatrixX<Scalar> lower() const { return llt.matrixL(); }
    Eigen::Index size() const { return llt.rows(); }

    template <typename Rhs>
    auto solve(const Eigen::MatrixBase<Rhs>& rhs) const {
        return llt.solve(rhs);
    }
};

/**
 * LL' factorization with log-determinant. On failure one retry is made with
 * 1e-8 * mean(diag) added to the diagonal; a second failure throws NotPositiveDefinite.
 */
template <typename Derived>
CholeskyFactor<typename Derived::Scalar> chol_factor(const Eigen::MatrixBase<Derived>& a) {
    using Scalar = typename Derived::Scalar;
    if (a.rows() != a.cols()) throw InvalidArgument("chol_factor: matrix is not square");
    CholeskyFactor<Scalar> out;
    MatrixX<Scalar> m = a;
    if (!m.allFinite()) throw NotPositiveDefinite("chol_factor: non-finite entry");
    out.llt.compute(m);
    if (out.llt.info() != Eigen::Success) {
        const Scalar mean_diag = m.diagonal().mean();
        if (!(mean_diag > Scalar(0)))
            throw NotPositiveDefinite("chol_factor: nonpositive mean diagonal");
        out.jitter = Scalar(1e-8) * mean_diag;
        m.diagonal().array() += out.jitter;
        out.llt.compute(m);
        if (out.llt.info() != Eigen::Success)
            throw NotPositiveDefinite("chol_factor: matrix not positive definite after jitter");
    }
    const auto& l = out.llt.matrixLLT();
    out.log_det = Scalar(2) * l.diagonal().array().log().sum();
    return out;
}

template <typename DerivedX, typename DerivedM>
typename DerivedX::Scalar mvn_logpdf(const Eigen::MatrixBase<DerivedX>& x,
                                     const Eigen::MatrixBase<DerivedM>& mean,
                                     const CholeskyFactor<typename DerivedX::Scalar>& cov_factor) {
    using Scalar = typename DerivedX::Scalar;
    if (x.size() != mean.size() || x.size() != cov_factor.size())
        throw InvalidArgument("mvn_logpdf: dimension mismatch");
    const VectorX<Scalar> a = cov_factor.llt.matrixL().solve(VectorX<Scalar>(x - mean));
    const auto n = static_cast<Scalar>(x.size());
    return Scalar(-0.5) * (n * std::log(Scalar(2) * std::numbers::pi_v<Scalar>) +
                           cov_factor.log_det + a.squaredNorm());
}

template <typename DerivedX, typename DerivedM, typename DerivedC>
typename DerivedX::Scalar mvn_logpdf(const Eigen::MatrixBase<DerivedX>& x,
                                     const Eigen::MatrixBase<DerivedM>& mean,
                                     const Eigen::MatrixBase<DerivedC>& cov) {
    return mvn_logpdf(x, mean, chol_factor(cov));
}

/// mean + L xi with xi standard normal.
template <typename DerivedM, typename DerivedC>
VectorX<typename DerivedM::Scalar> sample_mvn(const Eigen::MatrixBase<DerivedM>& mean,
                                              const Eigen::MatrixBase<DerivedC>& cov, Rng& rng) {
    using Scalar = typename DerivedM::Scalar;
    if (mean.size() != cov.rows()) throw InvalidArgument("sample_mvn: dimension mismatch");
    const auto factor = chol_factor(cov);
    const VectorX<Scalar> xi = rng.normal_vector(mean.size()).template cast<Scalar>();
    return mean + factor.llt.matrixL() * xi;
}

/// Draw with density proportional to x^(-shape-1) exp(-rate/x).
template <typename Scalar = double>
Scalar sample_inverse_gamma(Scalar shape, Scalar rate, Rng& rng) {
    if (!(shape > Scalar(0)) || !(rate > Scalar(0)))
        throw InvalidArgument("sample_inverse_gamma: shape and rate must be > 0");
    return Scalar(1) / static_cast<Scalar>(rng.gamma(static_cast<double>(shape),
                                                     1.0 / static_cast<double>(rate)));
}

/// Linearly interpolated order statistic at h = (m-1) d, for d in (0, 1].
template <typename Scalar>
Scalar percentile(std::span<const Scalar> values, Scalar d) {
    if (values.empty()) throw InvalidArgument("percentile: empty input");
    if (!(d > Scalar(0) && d <= Scalar(1))) throw InvalidArgument("percentile: d must be in (0, 1]");
    std::vector<Scalar> sorted(values.begin(), values.end());
    for (const Scalar v : sorted)
        if (!std::isfinite(v)) throw InvalidArgument("percentile: non-finite value");
    std::sort(sorted.begin(), sorted.end());
    const Scalar h = static_cast<Scalar>(sorted.size() - 1) * d;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = static_cast<std::size_t>(std::ceil(h));
    const Scalar frac = h - static_cast<Scalar>(lo);
    if (lo == hi) return sorted[lo];
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

template <typename Derived>
typename Derived::Scalar percentile(const Eigen::DenseBase<Derived>& values, typename Derived::Scalar d) {
    using Scalar = typename Derived::Scalar;
    const VectorX<Scalar> v = values.derived().reshaped();
    return percentile(std::span<const Scalar>(v.data(), static_cast<std::size_t>(v.size())), d);
}

/// sigma^2 such that sample-variance(L) / sigma^2 = snr.
template <typename Derived>
typename Derived::Scalar snr_to_sigma2(const Eigen::MatrixBase<Derived>& signal,
                                       typename Derived::Scalar snr) {
    using Scalar = typename Derived::Scalar;
    if (signal.size() < 2) throw InvalidArgument("snr_to_sigma2: need n >= 2");
    if (!(snr > Scalar(0))) throw InvalidArgument("snr_to_sigma2: SNR must be > 0");
    const Scalar mean = signal.mean();
    const Scalar var = (signal.array() - mean).square().sum() / static_cast<Scalar>(signal.size() - 1);
    if (!(var > Scalar(0))) throw InvalidArgument("snr_to_sigma2: signal has zero variance");
    return var / snr;
}

}  // namespace cpetrunc
