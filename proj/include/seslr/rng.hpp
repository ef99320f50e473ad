#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace seslr {

/// Deterministic random source. Every experiment draws from one top-level
/// seed fanned out into named sub-streams (data, init, reservoir, replay,
/// dropout, noise) so that each component can be replayed in isolation.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal(double mean = 0.0, double stddev = 1.0);

    /// Uniform index in [0, n). Unbiased (Lemire's method).
    size_t index(size_t n);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
    }

    /// Stable sub-seed for a named stream.
    static uint64_t derive(uint64_t seed, std::string_view stream);

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace seslr
