#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace hrf {

/// splitmix64 step; used for seeding and for deriving per-item streams.
constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// xoshiro256** with an explicit 64-bit seed and a Box-Muller normal sampler.
///
/// Uniform draws are bit-reproducible everywhere. Normal draws go through
/// std::log, std::sqrt, std::cos and std::sin, so they inherit whatever
/// last-ulp differences the platform libm has; on a fixed toolchain they are
/// deterministic.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed = 0) noexcept { reseed(seed); }

    void reseed(std::uint64_t seed) noexcept {
        std::uint64_t sm = seed;
        for (auto& word : s_) word = splitmix64(sm);
        has_spare_ = false;
        spare_ = 0.0;
    }

    /// Independent stream for item `index` of a batch seeded with `seed`.
    static Rng stream(std::uint64_t seed, std::uint64_t index) noexcept {
        std::uint64_t sm = seed ^ 0x6a09e667f3bcc909ULL;
        std::uint64_t a = splitmix64(sm);
        sm = a ^ (index * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL);
        return Rng(splitmix64(sm));
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Rejection-free multiply-shift; bias < 2^-64 * n.
    std::uint64_t index(std::uint64_t n) noexcept {
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>((*this)()) * n) >> 64);
    }

    /// Standard normal via Box-Muller; the second variate is cached.
    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    bool operator==(const Rng&) const = default;

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t s_[4]{};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace hrf
