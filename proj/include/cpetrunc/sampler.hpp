#pragma once

// Constrained Gibbs sampler for the spatial model
//
//   z | y        ~ N(y, sigma2 I) restricted to {CPE(z, yhat(theta, b)) < kappa}
//   y            = X beta + w,   w | tau2, b ~ N(0, tau2 H(b)),  H(b) = exp(-b D)
//   beta         ~ N(0, v I)
//   tau2         ~ IG(shape, rate)   (or a discrete prior on a grid)
//   b            ~ pi(b) on a finite set of decay levels
//
// Each block is drawn from its unconstrained full conditional and accepted only when the
// CPE of the resulting state is below kappa. A block that exhausts its rejection budget
// keeps its current (constraint-satisfying) value and counts as a stall.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "cpetrunc/rng.hpp"
#include "cpetrunc/stat_core.hpp"

namespace cpetrunc {

struct DecayLevel {
    double decay = 1.0;
    double prior_mass = 1.0;
};

/// Equal prior mass on each decay value.
std::vector<DecayLevel> uniform_decay_levels(const std::vector<double>& decays);

/// Decay grid {10, 15, ..., 35} with mass 1/6 each.
std::vector<DecayLevel> default_decay_levels();

struct InverseGammaPrior {
    double shape = 1.0;
    double rate = 0.01;
};

/// Finite prior on tau2; a single value with mass one fixes tau2.
struct DiscretePrior {
    std::vector<double> values;
    std::vector<double> masses;
};

using Tau2Prior = std::variant<InverseGammaPrior, DiscretePrior>;

struct ModelSpec {
    Eigen::MatrixXd x;
    SpatialLocations<double> locs;
    double sigma2 = 1.0;
    std::vector<DecayLevel> b_levels = default_decay_levels();
    double beta_prior_var = 10.0;
    Tau2Prior tau2_prior = InverseGammaPrior{};

    void validate() const;
};

struct ChainState {
    Eigen::VectorXd beta;
    Eigen::VectorXd w;
    double tau2 = 1.0;
    std::size_t b_index = 0;
    double cpe = 0.0;
};

struct GibbsConfig {
    int total_iterations = 12000;
    int burn_in = 2000;
    double kappa = std::numeric_limits<double>::infinity();
    int max_rejections = 1000;

    void validate() const;
    bool truncated() const noexcept { return kappa != std::numeric_limits<double>::infinity(); }
};

/// Proposal bookkeeping for one block.
struct BlockStats {
    std::size_t proposals = 0;
    std::size_t accepted = 0;
    std::size_t stalls = 0;

    double acceptance_rate() const noexcept {
        return proposals == 0 ? 1.0 : static_cast<double>(accepted) / static_cast<double>(proposals);
    }
    void merge(const BlockStats& other) noexcept {
        proposals += other.proposals;
        accepted += other.accepted;
        stalls += other.stalls;
    }
};

struct Chain {
    std::vector<ChainState> states;  ///< post burn-in
    std::vector<double> cpe_trace;
    std::size_t stall_count = 0;
    BlockStats w_stats, beta_stats, tau2_stats, b_stats;
    double kappa = std::numeric_limits<double>::infinity();

    bool empty() const noexcept { return states.empty(); }
    std::size_t size() const noexcept { return states.size(); }
};

/**
 * Per-(spec, z) precomputation shared by all blocks of a chain. For every decay level it
 * holds the spectral decomposition H(b) = U diag(lambda) U', U'z, U'X and log|H(b)|, so
 * the CPE of a candidate state costs O(n p) and the w draw O(n^2).
 */
class GibbsWorkspace {
public:
    GibbsWorkspace(ModelSpec spec, Eigen::VectorXd z);

    const ModelSpec& spec() const noexcept { return spec_; }
    const Eigen::VectorXd& z() const noexcept { return z_; }
    Eigen::Index n() const noexcept { return z_.size(); }
    Eigen::Index p() const noexcept { return spec_.x.cols(); }
    std::size_t levels() const noexcept { return levels_.size(); }
    double decay(std::size_t level) const { return spec_.b_levels.at(level).decay; }

    /// CPE of the BLUP at (beta, tau2, b); the value the sampler caches and constrains.
    double cpe(const Eigen::VectorXd& beta, double tau2, std::size_t level) const;

    /// beta minimizing the CPE at fixed (tau2, b): weighted least squares in the eigenbasis.
    Eigen::VectorXd cpe_minimizing_beta(double tau2, std::size_t level) const;

    /// w' H(b)^{-1} w.
    double quadratic_form(const Eigen::VectorXd& w, std::size_t level) const;
    double log_det_h(std::size_t level) const { return levels_.at(level).log_det; }

    /// Full-conditional moments of w (covariance returned dense, for checks).
    Eigen::VectorXd w_mean(const ChainState& state) const;
    Eigen::MatrixXd w_covariance(const ChainState& state) const;
    /// Full-conditional moments of beta.
    Eigen::VectorXd beta_mean(const Eigen::VectorXd& w) const;
    Eigen::MatrixXd beta_covariance() const;

    /// Draw from the w full conditional N(mu_w, Sigma_w).
    Eigen::VectorXd sample_w_conditional(const ChainState& state, Rng& rng) const;
    /// Draw w ~ N(0, tau2 H(b)).
    Eigen::VectorXd sample_w_prior(double tau2, std::size_t level, Rng& rng) const;
    /// Draw beta ~ N(mean, Sigma_beta).
    Eigen::VectorXd sample_beta_given_mean(const Eigen::VectorXd& mean, Rng& rng) const;

    /// Log of the b full-conditional weights (unnormalized), including log prior mass.
    Eigen::VectorXd b_log_weights(const Eigen::VectorXd& w, double tau2) const;
    /// Log of the discrete tau2 full-conditional weights (unnormalized).
    Eigen::VectorXd tau2_grid_log_weights(const Eigen::VectorXd& w, std::size_t level) const;

private:
    struct Level {
        Eigen::VectorXd lambda;
        Eigen::MatrixXd u;
        Eigen::VectorXd uz;
        Eigen::MatrixXd ux;
        double log_det = 0.0;
    };

    ModelSpec spec_;
    Eigen::VectorXd z_;
    std::vector<Level> levels_;
    Eigen::LLT<Eigen::MatrixXd> beta_precision_;
    Eigen::MatrixXd xt_;
};

template <typename T>
struct BlockDraw {
    T value;
    double cpe = 0.0;
    std::size_t proposals = 0;
    bool stalled = false;
};

/// Whole-state draw from the prior, repeated until cpe < kappa (at most 10 * max_rejections).
ChainState init_state(const GibbsWorkspace& ws, const GibbsConfig& config, Rng& rng);

BlockDraw<Eigen::VectorXd> sample_w_fullcond(const ChainState& state, const GibbsWorkspace& ws, Rng& rng);
BlockDraw<Eigen::VectorXd> sample_beta_fullcond(const ChainState& state, const GibbsWorkspace& ws,
                                                const GibbsConfig& config, Rng& rng);
BlockDraw<double> sample_tau2_fullcond(const ChainState& state, const GibbsWorkspace& ws,
                                       const GibbsConfig& config, Rng& rng);
BlockDraw<std::size_t> sample_b_fullcond(const ChainState& state, const GibbsWorkspace& ws,
                                         const GibbsConfig& config, Rng& rng);

/**
 * Systematic scan w -> beta -> tau2 -> b. If `start` is given it must satisfy the
 * constraint and is used instead of init_state.
 */
Chain run_gibbs(const GibbsWorkspace& ws, const GibbsConfig& config, Rng& rng,
                const std::optional<ChainState>& start = std::nullopt);

/// d-th percentile of the chain's CPE trace.
double kappa_from_percentile(const Chain& untruncated, double d);

/// Lowest-CPE state over the decay levels and a log grid of tau2 (beta in closed form, w at its
/// conditional mean); empty when that minimum is not below kappa.
std::optional<ChainState> min_cpe_state(const GibbsWorkspace& ws, double kappa);

/// Latest stored state whose CPE is strictly below kappa, if any.
std::optional<ChainState> state_below(const Chain& chain, double kappa);

/// y = X beta + w for every stored state, one row per state.
Eigen::MatrixXd latent_draws(const Chain& chain, const Eigen::MatrixXd& x);

/// log N(z_i; y_i, sigma2) for every stored state (rows) and observation (columns).
Eigen::MatrixXd pointwise_loglik(const Chain& chain, const Eigen::MatrixXd& x, const Eigen::VectorXd& z,
                                 double sigma2);

}  // namespace cpetrunc
