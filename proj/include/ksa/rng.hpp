#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace ksa {

// Deterministic generator used everywhere randomness is needed. Outputs are a
// pure function of the seed, independent of platform or standard-library
// distribution internals, so fixed-seed runs stay byte-identical.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // splitmix warmup so nearby seeds decorrelate
        next_u64();
        next_u64();
    }

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // uniform integer in [0, bound)
    std::uint64_t uniform_int(std::uint64_t bound) {
        return next_u64() % bound;
    }

    // standard normal via Box-Muller (one value per call; pairs not cached so
    // the stream position is easy to reason about)
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double two_pi = 6.283185307179586476925286766559;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void fill_normal(std::vector<T>& v, double mean, double stddev) {
        for (auto& x : v) x = static_cast<T>(normal(mean, stddev));
    }

private:
    std::uint64_t state_;
};

}  // namespace ksa
