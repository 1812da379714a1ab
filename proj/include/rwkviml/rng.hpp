#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace iml {

// std::uniform_real_distribution and friends are not guaranteed to produce
// the same stream across standard libraries, so the scaling here is done by
// hand on top of mt19937_64. Sequences are then identical on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] via rejection-free modulo of a wide draw;
    // bias is below 2^-64 * range, irrelevant for test-scale ranges.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(gen_() % range);
    }

    // Box-Muller; one value per call keeps the draw count predictable.
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

private:
    std::mt19937_64 gen_;
};

// Stateless per-(seed, step) stream: resuming from a checkpoint replays the
// exact same draws without serializing generator state.
inline Rng step_rng(std::uint64_t seed, std::uint64_t step, std::uint64_t stream) {
    // splitmix-style mixing of the three keys
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (step + 1) + 0xbf58476d1ce4e5b9ULL * (stream + 1);
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return Rng(z);
}

}  // namespace iml
