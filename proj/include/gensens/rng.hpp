#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>

namespace gensens {

/// Keyed random stream. The engine is seeded from (seed, index, stream) through
/// std::seed_seq, so replicate i draws the same numbers whether it runs first,
/// last, or on another thread.
class KeyedRng {
public:
    KeyedRng(std::uint64_t seed, std::uint64_t index, std::uint64_t stream = 0) {
        std::seed_seq seq{lo(seed), hi(seed), lo(index), hi(index), lo(stream), hi(stream)};
        engine_.seed(seq);
    }

    std::mt19937_64& engine() { return engine_; }

    /// Uniform integer in [0, bound) by rejection; avoids the implementation
    /// defined std::uniform_int_distribution so indices are portable.
    std::size_t index(std::size_t bound) {
        const std::uint64_t b = bound;
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % b;
        std::uint64_t draw;
        do {
            draw = engine_();
        } while (draw >= limit);
        return static_cast<std::size_t>(draw % b);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    bool bernoulli(double p) { return uniform() < p; }

    double normal() { return normal_(engine_); }

private:
    static std::uint32_t lo(std::uint64_t v) { return static_cast<std::uint32_t>(v); }
    static std::uint32_t hi(std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); }

    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

} // namespace gensens
