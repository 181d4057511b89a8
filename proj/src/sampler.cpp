#include "cpetrunc/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "cpetrunc/errors.hpp"

namespace cpetrunc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Index drawn with probabilities proportional to exp(log_weights).
std::size_t draw_categorical(const Eigen::VectorXd& log_weights, Rng& rng) {
    const double mx = log_weights.maxCoeff();
    if (!std::isfinite(mx)) throw InvalidArgument("categorical draw: all weights are zero");
    const Eigen::VectorXd w = (log_weights.array() - mx).unaryExpr([](double t) { return std::exp(t); });
    const double u = rng.uniform() * w.sum();
    double acc = 0.0;
    for (Eigen::Index k = 0; k < w.size(); ++k) {
        acc += w(k);
        if (u < acc) return static_cast<std::size_t>(k);
    }
    // u landed on the rounding gap at the top; take the last positive weight.
    for (Eigen::Index k = w.size() - 1; k >= 0; --k)
        if (w(k) > 0.0) return static_cast<std::size_t>(k);
    return 0;
}

Eigen::VectorXd log_masses(const std::vector<DecayLevel>& levels) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(levels.size()));
    for (std::size_t k = 0; k < levels.size(); ++k)
        out(static_cast<Eigen::Index>(k)) = std::log(levels[k].prior_mass);
    return out;
}

double draw_tau2_prior(const Tau2Prior& prior, Rng& rng) {
    if (const auto* ig = std::get_if<InverseGammaPrior>(&prior))
        return sample_inverse_gamma(ig->shape, ig->rate, rng);
    const auto& grid = std::get<DiscretePrior>(prior);
    Eigen::VectorXd lw(static_cast<Eigen::Index>(grid.values.size()));
    for (std::size_t g = 0; g < grid.values.size(); ++g)
        lw(static_cast<Eigen::Index>(g)) = std::log(grid.masses[g]);
    return grid.values[draw_categorical(lw, rng)];
}

void check_masses(const std::vector<double>& masses, const char* what) {
    double total = 0.0;
    for (const double m : masses) {
        if (!(m > 0.0)) throw InvalidArgument(std::string(what) + ": prior masses must be positive");
        total += m;
    }
    if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument(std::string(what) + ": prior masses must sum to 1");
}

}  // namespace

std::vector<DecayLevel> uniform_decay_levels(const std::vector<double>& decays) {
    std::vector<DecayLevel> out;
    out.reserve(decays.size());
    for (const double b : decays) out.push_back({b, 1.0 / static_cast<double>(decays.size())});
    return out;
}

std::vector<DecayLevel> default_decay_levels() { return uniform_decay_levels({10, 15, 20, 25, 30, 35}); }

void ModelSpec::validate() const {
    if (x.rows() != locs.size()) throw InvalidArgument("ModelSpec: design rows do not match locations");
    if (!x.allFinite()) throw InvalidArgument("ModelSpec: non-finite design entry");
    if (!(sigma2 > 0.0)) throw InvalidArgument("ModelSpec: sigma2 must be > 0");
    if (!(beta_prior_var > 0.0)) throw InvalidArgument("ModelSpec: beta prior variance must be > 0");
    if (b_levels.empty()) throw InvalidArgument("ModelSpec: no decay levels");
    std::vector<double> masses;
    for (const auto& level : b_levels) {
        if (!(level.decay > 0.0)) throw InvalidArgument("ModelSpec: decay levels must be > 0");
        masses.push_back(level.prior_mass);
    }
    check_masses(masses, "ModelSpec b prior");
    if (const auto* ig = std::get_if<InverseGammaPrior>(&tau2_prior)) {
        if (!(ig->shape > 0.0) || !(ig->rate > 0.0))
            throw InvalidArgument("ModelSpec: tau2 prior shape and rate must be > 0");
    } else {
        const auto& grid = std::get<DiscretePrior>(tau2_prior);
        if (grid.values.empty() || grid.values.size() != grid.masses.size())
            throw InvalidArgument("ModelSpec: discrete tau2 prior needs matching values and masses");
        for (const double v : grid.values)
            if (!(v > 0.0)) throw InvalidArgument("ModelSpec: tau2 grid values must be > 0");
        check_masses(grid.masses, "ModelSpec tau2 prior");
    }
}

void GibbsConfig::validate() const {
    if (total_iterations < 1) throw InvalidArgument("GibbsConfig: total_iterations must be >= 1");
    if (burn_in < 0 || burn_in >= total_iterations)
        throw InvalidArgument("GibbsConfig: need 0 <= burn_in < total_iterations");
    if (!(kappa > 0.0)) throw InvalidArgument("GibbsConfig: kappa must be > 0");
    if (max_rejections < 1) throw InvalidArgument("GibbsConfig: max_rejections must be >= 1");
}

GibbsWorkspace::GibbsWorkspace(ModelSpec spec, Eigen::VectorXd z) : spec_(std::move(spec)), z_(std::move(z)) {
    spec_.validate();
    if (z_.size() != spec_.x.rows()) throw InvalidArgument("GibbsWorkspace: data length does not match design");
    if (!z_.allFinite()) throw InvalidArgument("GibbsWorkspace: non-finite data");

    const Eigen::MatrixXd dist = distance_matrix(spec_.locs);
    levels_.reserve(spec_.b_levels.size());
    for (const auto& b : spec_.b_levels) {
        const Eigen::MatrixXd h = exp_covariance(dist, CovarianceSpec<double>{CovarianceFamily::exponential, 1.0, b.decay});
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h);
        if (eig.info() != Eigen::Success) throw NotPositiveDefinite("GibbsWorkspace: eigensolver failed");
        Level level;
        level.lambda = eig.eigenvalues();
        if (level.lambda.minCoeff() <= 0.0) {
            // same single-jitter policy as chol_factor
            level.lambda.array() += 1e-8 * h.diagonal().mean();
            if (level.lambda.minCoeff() <= 0.0)
                throw NotPositiveDefinite("GibbsWorkspace: H(b) not positive definite for b = " +
                                          std::to_string(b.decay));
        }
        level.u = eig.eigenvectors();
        level.uz = level.u.transpose() * z_;
        level.ux = level.u.transpose() * spec_.x;
        level.log_det = level.lambda.array().log().sum();
        levels_.push_back(std::move(level));
    }

    Eigen::MatrixXd precision = spec_.x.transpose() * spec_.x / spec_.sigma2;
    precision.diagonal().array() += 1.0 / spec_.beta_prior_var;
    beta_precision_.compute(precision);
    if (beta_precision_.info() != Eigen::Success)
        throw NotPositiveDefinite("GibbsWorkspace: beta precision not positive definite");
    xt_ = spec_.x.transpose();
}

double GibbsWorkspace::cpe(const Eigen::VectorXd& beta, double tau2, std::size_t level) const {
    const Level& l = levels_.at(level);
    const double s2 = spec_.sigma2;
    double fit = 0.0, edf = 0.0;
    const Eigen::VectorXd r = l.uz - l.ux * beta;
    for (Eigen::Index k = 0; k < r.size(); ++k) {
        const double q = tau2 * l.lambda(k);
        const double shrink = s2 / (q + s2);
        fit += shrink * shrink * r(k) * r(k);
        edf += q / (q + s2);
    }
    return fit + 2.0 * s2 * edf;
}

Eigen::VectorXd GibbsWorkspace::cpe_minimizing_beta(double tau2, std::size_t level) const {
    const Level& l = levels_.at(level);
    const double s2 = spec_.sigma2;
    const Eigen::ArrayXd shrink = s2 / (tau2 * l.lambda.array() + s2);
    const Eigen::MatrixXd wx = shrink.matrix().asDiagonal() * l.ux;
    const Eigen::VectorXd wz = (shrink * l.uz.array()).matrix();
    return wx.colPivHouseholderQr().solve(wz);
}

double GibbsWorkspace::quadratic_form(const Eigen::VectorXd& w, std::size_t level) const {
    const Level& l = levels_.at(level);
    const Eigen::VectorXd uw = l.u.transpose() * w;
    return (uw.array().square() / l.lambda.array()).sum();
}

Eigen::VectorXd GibbsWorkspace::w_mean(const ChainState& state) const {
    const Level& l = levels_.at(state.b_index);
    const double s2 = spec_.sigma2;
    const Eigen::ArrayXd v = 1.0 / (1.0 / s2 + 1.0 / (state.tau2 * l.lambda.array()));
    const Eigen::VectorXd m = (v * (l.uz - l.ux * state.beta).array() / s2).matrix();
    return l.u * m;
}

Eigen::MatrixXd GibbsWorkspace::w_covariance(const ChainState& state) const {
    const Level& l = levels_.at(state.b_index);
    const double s2 = spec_.sigma2;
    const Eigen::VectorXd v = (1.0 / (1.0 / s2 + 1.0 / (state.tau2 * l.lambda.array()))).matrix();
    return l.u * v.asDiagonal() * l.u.transpose();
}

Eigen::VectorXd GibbsWorkspace::beta_mean(const Eigen::VectorXd& w) const {
    return beta_precision_.solve(xt_ * (z_ - w) / spec_.sigma2);
}

Eigen::MatrixXd GibbsWorkspace::beta_covariance() const {
    return beta_precision_.solve(Eigen::MatrixXd::Identity(p(), p()));
}

Eigen::VectorXd GibbsWorkspace::sample_w_conditional(const ChainState& state, Rng& rng) const {
    const Level& l = levels_.at(state.b_index);
    const double s2 = spec_.sigma2;
    const Eigen::ArrayXd v = 1.0 / (1.0 / s2 + 1.0 / (state.tau2 * l.lambda.array()));
    const Eigen::ArrayXd xi = rng.normal_vector(n()).array();
    const Eigen::ArrayXd coef = v * (l.uz - l.ux * state.beta).array() / s2 + v.sqrt() * xi;
    return l.u * coef.matrix();
}

Eigen::VectorXd GibbsWorkspace::sample_w_prior(double tau2, std::size_t level, Rng& rng) const {
    const Level& l = levels_.at(level);
    const Eigen::VectorXd xi = rng.normal_vector(n());
    return l.u * (xi.array() * (tau2 * l.lambda.array()).sqrt()).matrix();
}

Eigen::VectorXd GibbsWorkspace::sample_beta_given_mean(const Eigen::VectorXd& mean, Rng& rng) const {
    const Eigen::VectorXd xi = rng.normal_vector(p());
    return mean + beta_precision_.matrixU().solve(xi);
}

Eigen::VectorXd GibbsWorkspace::b_log_weights(const Eigen::VectorXd& w, double tau2) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(levels_.size()));
    const Eigen::VectorXd lp = log_masses(spec_.b_levels);
    for (std::size_t k = 0; k < levels_.size(); ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        out(kk) = -quadratic_form(w, k) / (2.0 * tau2) - 0.5 * levels_[k].log_det + lp(kk);
    }
    return out;
}

Eigen::VectorXd GibbsWorkspace::tau2_grid_log_weights(const Eigen::VectorXd& w, std::size_t level) const {
    const auto& grid = std::get<DiscretePrior>(spec_.tau2_prior);
    const double qf = quadratic_form(w, level);
    const double half_n = 0.5 * static_cast<double>(n());
    Eigen::VectorXd out(static_cast<Eigen::Index>(grid.values.size()));
    for (std::size_t g = 0; g < grid.values.size(); ++g) {
        const double t = grid.values[g];
        out(static_cast<Eigen::Index>(g)) = std::log(grid.masses[g]) - half_n * std::log(t) - qf / (2.0 * t);
    }
    return out;
}

ChainState init_state(const GibbsWorkspace& ws, const GibbsConfig& config, Rng& rng) {
    config.validate();
    const auto& spec = ws.spec();
    const std::size_t budget = 10 * static_cast<std::size_t>(config.max_rejections);
    Eigen::VectorXd lp = log_masses(spec.b_levels);
    const double beta_sd = std::sqrt(spec.beta_prior_var);
    for (std::size_t attempt = 1; attempt <= budget; ++attempt) {
        ChainState s;
        s.beta = beta_sd * rng.normal_vector(ws.p());
        s.tau2 = draw_tau2_prior(spec.tau2_prior, rng);
        s.b_index = draw_categorical(lp, rng);
        s.cpe = ws.cpe(s.beta, s.tau2, s.b_index);
        if (s.cpe < config.kappa) {
            s.w = ws.sample_w_prior(s.tau2, s.b_index, rng);
            return s;
        }
    }
    throw InitializationExhausted("init_state: no prior draw satisfied CPE < kappa = " +
                                      std::to_string(config.kappa) + " in " + std::to_string(budget) +
                                      " attempts",
                                  budget);
}

BlockDraw<Eigen::VectorXd> sample_w_fullcond(const ChainState& state, const GibbsWorkspace& ws, Rng& rng) {
    // The BLUP-form CPE does not involve w, so the constraint never binds for this block.
    return {ws.sample_w_conditional(state, rng), state.cpe, 1, false};
}

BlockDraw<Eigen::VectorXd> sample_beta_fullcond(const ChainState& state, const GibbsWorkspace& ws,
                                                const GibbsConfig& config, Rng& rng) {
    const Eigen::VectorXd mean = ws.beta_mean(state.w);
    BlockDraw<Eigen::VectorXd> out{state.beta, state.cpe, 0, false};
    for (int attempt = 0; attempt < config.max_rejections; ++attempt) {
        Eigen::VectorXd proposal = ws.sample_beta_given_mean(mean, rng);
        ++out.proposals;
        const double c = ws.cpe(proposal, state.tau2, state.b_index);
        if (c < config.kappa) {
            out.value = std::move(proposal);
            out.cpe = c;
            return out;
        }
    }
    out.stalled = true;
    return out;
}

BlockDraw<double> sample_tau2_fullcond(const ChainState& state, const GibbsWorkspace& ws,
                                       const GibbsConfig& config, Rng& rng) {
    const auto& prior = ws.spec().tau2_prior;
    const auto* ig = std::get_if<InverseGammaPrior>(&prior);
    double shape = 0.0, rate = 0.0;
    Eigen::VectorXd grid_lw;
    if (ig != nullptr) {
        shape = ig->shape + 0.5 * static_cast<double>(ws.n());
        rate = ig->rate + 0.5 * ws.quadratic_form(state.w, state.b_index);
    } else {
        grid_lw = ws.tau2_grid_log_weights(state.w, state.b_index);
    }
    BlockDraw<double> out{state.tau2, state.cpe, 0, false};
    for (int attempt = 0; attempt < config.max_rejections; ++attempt) {
        const double proposal = ig != nullptr
                                    ? sample_inverse_gamma(shape, rate, rng)
                                    : std::get<DiscretePrior>(prior).values[draw_categorical(grid_lw, rng)];
        ++out.proposals;
        const double c = ws.cpe(state.beta, proposal, state.b_index);
        if (c < config.kappa) {
            out.value = proposal;
            out.cpe = c;
            return out;
        }
    }
    out.stalled = true;
    return out;
}

BlockDraw<std::size_t> sample_b_fullcond(const ChainState& state, const GibbsWorkspace& ws,
                                         const GibbsConfig& config, Rng& rng) {
    const Eigen::VectorXd lw = ws.b_log_weights(state.w, state.tau2);
    BlockDraw<std::size_t> out{state.b_index, state.cpe, 0, false};
    for (int attempt = 0; attempt < config.max_rejections; ++attempt) {
        const std::size_t proposal = draw_categorical(lw, rng);
        ++out.proposals;
        const double c = ws.cpe(state.beta, state.tau2, proposal);
        if (c < config.kappa) {
            out.value = proposal;
            out.cpe = c;
            return out;
        }
    }
    out.stalled = true;
    return out;
}

namespace {

template <typename T>
void record(BlockStats& stats, const BlockDraw<T>& draw) {
    stats.proposals += draw.proposals;
    if (draw.stalled)
        ++stats.stalls;
    else
        ++stats.accepted;
}

}  // namespace

Chain run_gibbs(const GibbsWorkspace& ws, const GibbsConfig& config, Rng& rng,
                const std::optional<ChainState>& start) {
    config.validate();
    ChainState state;
    if (start) {
        state = *start;
        if (state.b_index >= ws.levels() || state.beta.size() != ws.p() || state.w.size() != ws.n())
            throw InvalidArgument("run_gibbs: start state does not match the model");
        state.cpe = ws.cpe(state.beta, state.tau2, state.b_index);
        if (!(state.cpe < config.kappa))
            throw InvalidArgument("run_gibbs: start state violates CPE < kappa");
    } else {
        state = init_state(ws, config, rng);
    }

    Chain chain;
    chain.kappa = config.kappa;
    const auto kept = static_cast<std::size_t>(config.total_iterations - config.burn_in);
    chain.states.reserve(kept);
    chain.cpe_trace.reserve(kept);

    for (int it = 0; it < config.total_iterations; ++it) {
        auto w = sample_w_fullcond(state, ws, rng);
        record(chain.w_stats, w);
        state.w = std::move(w.value);

        auto beta = sample_beta_fullcond(state, ws, config, rng);
        record(chain.beta_stats, beta);
        state.beta = std::move(beta.value);
        state.cpe = beta.cpe;

        const auto tau2 = sample_tau2_fullcond(state, ws, config, rng);
        record(chain.tau2_stats, tau2);
        state.tau2 = tau2.value;
        state.cpe = tau2.cpe;

        const auto b = sample_b_fullcond(state, ws, config, rng);
        record(chain.b_stats, b);
        state.b_index = b.value;
        state.cpe = b.cpe;

        if (it >= config.burn_in) {
            chain.states.push_back(state);
            chain.cpe_trace.push_back(state.cpe);
        }
    }
    chain.stall_count = chain.w_stats.stalls + chain.beta_stats.stalls + chain.tau2_stats.stalls +
                        chain.b_stats.stalls;
    return chain;
}

double kappa_from_percentile(const Chain& untruncated, double d) {
    if (untruncated.cpe_trace.empty()) throw InvalidArgument("kappa_from_percentile: empty CPE trace");
    return percentile(std::span<const double>(untruncated.cpe_trace), d);
}

std::optional<ChainState> min_cpe_state(const GibbsWorkspace& ws, double kappa) {
    ChainState best;
    best.cpe = std::numeric_limits<double>::infinity();
    for (std::size_t level = 0; level < ws.levels(); ++level) {
        for (int k = -40; k <= 40; ++k) {
            const double tau2 = std::pow(10.0, k / 10.0);
            Eigen::VectorXd beta = ws.cpe_minimizing_beta(tau2, level);
            const double c = ws.cpe(beta, tau2, level);
            if (c < best.cpe) {
                best.beta = std::move(beta);
                best.tau2 = tau2;
                best.b_index = level;
                best.cpe = c;
            }
        }
    }
    if (!(best.cpe < kappa)) return std::nullopt;
    best.w = ws.w_mean(best);
    return best;
}

std::optional<ChainState> state_below(const Chain& chain, double kappa) {
    for (auto it = chain.states.rbegin(); it != chain.states.rend(); ++it)
        if (it->cpe < kappa) return *it;
    return std::nullopt;
}

Eigen::MatrixXd latent_draws(const Chain& chain, const Eigen::MatrixXd& x) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(chain.size()), x.rows());
    for (std::size_t g = 0; g < chain.size(); ++g) {
        const auto& s = chain.states[g];
        out.row(static_cast<Eigen::Index>(g)) = (x * s.beta + s.w).transpose();
    }
    return out;
}

Eigen::MatrixXd pointwise_loglik(const Chain& chain, const Eigen::MatrixXd& x, const Eigen::VectorXd& z,
                                 double sigma2) {
    const Eigen::MatrixXd y = latent_draws(chain, x);
    const double c = -0.5 * std::log(2.0 * std::numbers::pi * sigma2);
    return (c - (y.rowwise() - z.transpose()).array().square() / (2.0 * sigma2)).matrix();
}

}  // namespace cpetrunc
