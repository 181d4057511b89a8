#pragma once

// Bayesian model averaging over covariate subsets of a Gaussian linear model with
// beta ~ N(0, v I) and known noise variance.

#include <array>
#include <vector>

#include <Eigen/Dense>

namespace cpetrunc {

struct CandidateModel {
    int index = 1;
    Eigen::MatrixXd design;
    double prior_mass = 1.0;
};

/// Inclusion flags (delta1, delta2, delta3) for models b = 1..8, in the usual subset order.
const std::array<std::array<bool, 3>, 8>& subset_flags();

/// [1, x1 d1, x2 d2, x3 d3] with excluded columns dropped.
Eigen::MatrixXd subset_design(const Eigen::MatrixXd& covariates, const std::array<bool, 3>& flags);

/// All eight subset models with the given prior masses (uniform when empty).
std::vector<CandidateModel> subset_models(const Eigen::MatrixXd& covariates,
                                          const std::vector<double>& prior_masses = {});

/// Mass 1/2 on models 5 and 8, zero elsewhere.
std::vector<double> restricted_subset_prior();

/// log N(z; 0, v X X' + sigma2 I).
double log_marginal_likelihood(const Eigen::VectorXd& z, const CandidateModel& model, double v, double sigma2);

/// Posterior model probabilities; zero prior mass gives zero weight.
Eigen::VectorXd bma_weights(const Eigen::VectorXd& z, const std::vector<CandidateModel>& models, double v,
                            double sigma2);

/// E[y | z, b] = v X X' (v X X' + sigma2 I)^{-1} z.
Eigen::VectorXd model_posterior_mean(const Eigen::VectorXd& z, const CandidateModel& model, double v,
                                     double sigma2);

/// sum_b weight_b E[y | z, b].
Eigen::VectorXd bma_predict(const Eigen::VectorXd& z, const std::vector<CandidateModel>& models, double v,
                            double sigma2);

}  // namespace cpetrunc
