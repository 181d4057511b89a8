#include "cpetrunc/bma.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "cpetrunc/errors.hpp"

namespace cpetrunc {

namespace {

void check_params(const Eigen::VectorXd& z, const CandidateModel& model, double v, double sigma2) {
    if (!(sigma2 > 0.0)) throw InvalidArgument("bma: sigma2 must be > 0");
    if (!(v > 0.0)) throw InvalidArgument("bma: prior variance must be > 0");
    if (model.design.rows() != z.size()) throw InvalidArgument("bma: design rows do not match data length");
}

/// Cholesky of X'X + (sigma2 / v) I, the p x p system shared by the evidence and the posterior mean.
Eigen::LLT<Eigen::MatrixXd> ridge_system(const Eigen::MatrixXd& x, double v, double sigma2) {
    Eigen::MatrixXd a = x.transpose() * x;
    a.diagonal().array() += sigma2 / v;
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) throw NotPositiveDefinite("bma: ridge system not positive definite");
    return llt;
}

}  // namespace

const std::array<std::array<bool, 3>, 8>& subset_flags() {
    static const std::array<std::array<bool, 3>, 8> flags{{
        {false, false, false},
        {true, false, false},
        {false, true, false},
        {false, false, true},
        {true, true, false},
        {true, false, true},
        {false, true, true},
        {true, true, true},
    }};
    return flags;
}

Eigen::MatrixXd subset_design(const Eigen::MatrixXd& covariates, const std::array<bool, 3>& flags) {
    if (covariates.cols() != 3) throw InvalidArgument("subset_design: expected three covariate columns");
    Eigen::Index p = 1;
    for (const bool f : flags) p += f ? 1 : 0;
    Eigen::MatrixXd x(covariates.rows(), p);
    x.col(0).setOnes();
    Eigen::Index c = 1;
    for (Eigen::Index j = 0; j < 3; ++j)
        if (flags[static_cast<std::size_t>(j)]) x.col(c++) = covariates.col(j);
    return x;
}

std::vector<CandidateModel> subset_models(const Eigen::MatrixXd& covariates, const std::vector<double>& prior_masses) {
    if (!prior_masses.empty() && prior_masses.size() != 8)
        throw InvalidArgument("subset_models: need eight prior masses");
    std::vector<CandidateModel> out;
    out.reserve(8);
    for (std::size_t b = 0; b < 8; ++b)
        out.push_back({static_cast<int>(b + 1), subset_design(covariates, subset_flags()[b]),
                       prior_masses.empty() ? 1.0 / 8.0 : prior_masses[b]});
    return out;
}

std::vector<double> restricted_subset_prior() { return {0, 0, 0, 0, 0.5, 0, 0, 0.5}; }

double log_marginal_likelihood(const Eigen::VectorXd& z, const CandidateModel& model, double v, double sigma2) {
    check_params(z, model, v, sigma2);
    // Woodbury and the determinant lemma on sigma2 I + v X X':
    //   log|.| = n log sigma2 + log|I + (v / sigma2) X'X|
    //   z'(.)^{-1} z = (z'z - z'X (X'X + sigma2/v I)^{-1} X'z) / sigma2
    const auto& x = model.design;
    const auto n = static_cast<double>(z.size());
    const auto llt = ridge_system(x, v, sigma2);
    const Eigen::VectorXd xtz = x.transpose() * z;
    const double quad = (z.squaredNorm() - xtz.dot(llt.solve(xtz))) / sigma2;
    // |I + (v/sigma2) X'X| = (v/sigma2)^p |X'X + (sigma2/v) I|
    const double log_det_small = 2.0 * llt.matrixLLT().diagonal().array().log().sum() +
                                 static_cast<double>(x.cols()) * std::log(v / sigma2);
    const double log_det = n * std::log(sigma2) + log_det_small;
    return -0.5 * (n * std::log(2.0 * std::numbers::pi) + log_det + quad);
}

Eigen::VectorXd bma_weights(const Eigen::VectorXd& z, const std::vector<CandidateModel>& models, double v,
                            double sigma2) {
    if (models.empty()) throw InvalidArgument("bma_weights: no models");
    Eigen::VectorXd lw(static_cast<Eigen::Index>(models.size()));
    for (std::size_t b = 0; b < models.size(); ++b) {
        const auto& m = models[b];
        if (m.prior_mass < 0.0) throw InvalidArgument("bma_weights: negative prior mass");
        lw(static_cast<Eigen::Index>(b)) = m.prior_mass > 0.0
                                               ? log_marginal_likelihood(z, m, v, sigma2) + std::log(m.prior_mass)
                                               : -std::numeric_limits<double>::infinity();
    }
    const double mx = lw.maxCoeff();
    if (!std::isfinite(mx)) throw InvalidArgument("bma_weights: all prior masses are zero");
    Eigen::VectorXd w = (lw.array() - mx).unaryExpr([](double t) { return std::exp(t); });
    return w / w.sum();
}

Eigen::VectorXd model_posterior_mean(const Eigen::VectorXd& z, const CandidateModel& model, double v,
                                     double sigma2) {
    check_params(z, model, v, sigma2);
    // v X X' (v X X' + sigma2 I)^{-1} z = X (X'X + sigma2/v I)^{-1} X' z
    const auto& x = model.design;
    return x * ridge_system(x, v, sigma2).solve(x.transpose() * z);
}

Eigen::VectorXd bma_predict(const Eigen::VectorXd& z, const std::vector<CandidateModel>& models, double v,
                            double sigma2) {
    const Eigen::VectorXd w = bma_weights(z, models, v, sigma2);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(z.size());
    for (std::size_t b = 0; b < models.size(); ++b) {
        const double wb = w(static_cast<Eigen::Index>(b));
        if (wb > 0.0) out += wb * model_posterior_mean(z, models[b], v, sigma2);
    }
    return out;
}

}  // namespace cpetrunc
