#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

#include "latsync/error.hpp"

namespace latsync {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derives an independent stream seed from (seed, tag, index). Used so that
// scenario generation, parameter init, latency draws etc. never share a stream.
inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char ch : tag) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ULL;
    }
    return splitmix64(seed ^ splitmix64(h) ^ splitmix64(index * 0x9e3779b97f4a7c15ULL + 1));
}

// Deterministic RNG. mt19937_64 output is fully specified by the standard;
// the distributions below are hand-rolled because the std:: distribution
// objects are implementation-defined and would break cross-toolchain
// reproducibility of seeds.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t raw() { return gen_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive on both ends.
    int uniform_int(int lo, int hi) {
        if (hi < lo) throw Error(msg("uniform_int: empty range [", lo, ",", hi, "]"));
        const std::uint64_t span = static_cast<std::uint64_t>(hi) - static_cast<std::uint64_t>(lo) + 1;
        return lo + static_cast<int>(gen_() % span);
    }

    // Box-Muller, no caching so draw counts stay predictable.
    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log1p(-u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Continuous exponential draw; mean 0 degenerates to the constant 0.
    double exponential(double mean) {
        if (mean < 0.0) throw ConfigError(msg("exponential: negative mean ", mean));
        if (mean == 0.0) return 0.0;
        return -mean * std::log1p(-uniform());
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace latsync
