#pragma once

#include <cstdint>
#include <limits>
#include <random>

#include <Eigen/Dense>

namespace cpetrunc {

/// SplitMix64 finalizer; a bijection on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Key of the stream addressed by (base seed, replicate index, chain position).
constexpr std::uint64_t stream_key(std::uint64_t seed, std::uint64_t replicate = 0,
                                   std::uint64_t chain = 0) noexcept {
    std::uint64_t k = mix64(seed);
    k = mix64(k ^ (replicate * 0xD1B54A32D192ED03ULL));
    k = mix64(k ^ (chain * 0x8CB92BA72F3D8DD7ULL));
    return k;
}

/**
 * Counter-based 64-bit generator. Draw k of a stream is mix64(key + k * golden), so a
 * stream is fully determined by its key and position and streams never share state.
 * Satisfies UniformRandomBitGenerator.
 */
class StreamEngine {
public:
    using result_type = std::uint64_t;

    StreamEngine() = default;
    explicit StreamEngine(std::uint64_t key) noexcept : key_(key) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
        ++counter_;
        return mix64(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
    }

    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t position() const noexcept { return counter_; }

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

/// Random source handed explicitly to every sampling routine.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t replicate = 0, std::uint64_t chain = 0)
        : engine_(stream_key(seed, replicate, chain)) {}

    double normal() { return normal_(engine_); }

    /// Uniform on [0, 1).
    double uniform() { return std::generate_canonical<double, 53>(engine_); }

    /// Gamma with the given shape and scale (mean shape * scale).
    double gamma(double shape, double scale) {
        return std::gamma_distribution<double>(shape, scale)(engine_);
    }

    Eigen::VectorXd normal_vector(Eigen::Index n) {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v(i) = normal();
        return v;
    }

    /// Independent child stream; does not advance this stream.
    Rng split(std::uint64_t sub) const { return Rng(FromKey{}, mix64(engine_.key() ^ mix64(sub + 1))); }

    StreamEngine& engine() noexcept { return engine_; }

private:
    struct FromKey {};
    Rng(FromKey, std::uint64_t key) : engine_(key) {}

    StreamEngine engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace cpetrunc
