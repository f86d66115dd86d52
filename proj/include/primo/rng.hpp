#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace primo {

/// splitmix64, used only to expand a 64-bit seed into xoshiro state.
inline std::uint64_t splitmix64(std::uint64_t& state) noexcept
{
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// xoshiro256** with portable derived distributions.
///
/// Every stream in the library comes from this generator so that a seed
/// fixes all data, initialisation, and Monte-Carlo draws bit-for-bit.
/// The standard library distributions are deliberately not used because
/// their algorithms are implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) noexcept { reseed(seed); }

    void reseed(std::uint64_t seed) noexcept
    {
        std::uint64_t sm = seed;
        for (auto& word : state_)
            word = splitmix64(sm);
        has_spare_ = false;
    }

    /// Independent child stream; `stream` labels the purpose (data, init, ...).
    [[nodiscard]] Rng fork(std::uint64_t stream) const noexcept
    {
        std::uint64_t sm = state_[0] ^ (state_[3] * 0x2545f4914f6cdd1dULL) ^ stream;
        return Rng{splitmix64(sm) ^ stream};
    }

    std::uint64_t next_u64() noexcept
    {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n) by rejection (no modulo bias).
    std::uint64_t below(std::uint64_t n) noexcept
    {
        if (n <= 1)
            return 0;
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t r;
        do {
            r = next_u64();
        } while (r >= limit);
        return r % n;
    }

    bool bernoulli(double p) noexcept { return uniform() < p; }

    /// Standard normal via Box-Muller; the second variate is cached.
    double normal() noexcept
    {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0)
            u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

    /// Index drawn from an unnormalised non-negative weight vector.
    template <class Range>
    std::size_t categorical(const Range& weights) noexcept
    {
        double total = 0.0;
        for (double w : weights)
            total += w;
        double u = uniform() * total;
        std::size_t i = 0;
        std::size_t last = 0;
        for (double w : weights) {
            if (w > 0.0)
                last = i;
            if (u < w)
                return i;
            u -= w;
            ++i;
        }
        return last;
    }

    /// Fisher-Yates.
    template <class Vec>
    void shuffle(Vec& v) noexcept
    {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = below(i);
            using std::swap;
            swap(v[i - 1], v[j]);
        }
    }

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

    std::array<std::uint64_t, 4> state_{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace primo
