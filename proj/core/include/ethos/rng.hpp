#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace ethos {

// splitmix64; used to derive independent sub-stream seeds from a base seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

// Deterministic random source. Distributions are hand-rolled on top of
// mt19937_64 so that results do not depend on the standard library's
// unspecified distribution algorithms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 bits of randomness.
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n); rejection sampled, n > 0.
    std::uint64_t below(std::uint64_t n);

    // Standard normal via Marsaglia polar method (cached spare).
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    double lognormal(double mu, double sigma);

    // Fisher-Yates with our own bounded draws.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace ethos
