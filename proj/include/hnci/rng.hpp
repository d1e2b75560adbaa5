#pragma once

#include <cmath>
#include <cstdint>

namespace hnci {

// xoshiro256++ with splitmix64 seeding. Self-contained so that streams are
// identical across standard libraries and platforms; every Monte Carlo draw
// gets its own substream keyed by (seed, tag...), which makes results
// independent of thread scheduling.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& w : s_) w = splitmix64(x);
        have_cached_ = false;
    }

    static Rng substream(std::uint64_t seed, std::uint64_t tag0, std::uint64_t tag1 = 0,
                         std::uint64_t tag2 = 0) {
        std::uint64_t x = seed;
        std::uint64_t h = splitmix64(x);
        x = h ^ (tag0 + 0x9e3779b97f4a7c15ULL);
        h = splitmix64(x);
        x = h ^ (tag1 + 0xbf58476d1ce4e5b9ULL);
        h = splitmix64(x);
        x = h ^ (tag2 + 0x94d049bb133111ebULL);
        return Rng(splitmix64(x));
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    // Marsaglia polar method; the spare deviate is cached per stream.
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u, v, q;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            q = u * u + v * v;
        } while (q >= 1.0 || q == 0.0);
        const double f = std::sqrt(-2.0 * std::log(q) / q);
        cached_ = v * f;
        have_cached_ = true;
        return u * f;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    static std::uint64_t splitmix64(std::uint64_t& x) {
        std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t s_[4];
    double cached_ = 0.0;
    bool have_cached_ = false;
};

} // namespace hnci
