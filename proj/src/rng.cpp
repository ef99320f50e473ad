#include "seslr/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace seslr {

double Rng::normal(double mean, double stddev) {
    // Box-Muller with explicit spare caching, so the draw sequence is
    // fully defined by this class and not by the standard library.
    if (have_spare_) {
        have_spare_ = false;
        return mean + stddev * spare_;
    }
    double u1;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return mean + stddev * r * std::cos(a);
}

size_t Rng::index(size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::index: n must be positive");
    uint64_t range = static_cast<uint64_t>(n);
    uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * range;
    uint64_t low = static_cast<uint64_t>(m);
    if (low < range) {
        uint64_t threshold = (0 - range) % range;
        while (low < threshold) {
            x = next_u64();
            m = static_cast<__uint128_t>(x) * range;
            low = static_cast<uint64_t>(m);
        }
    }
    return static_cast<size_t>(m >> 64);
}

uint64_t Rng::derive(uint64_t seed, std::string_view stream) {
    // fnv-1a over the stream name, then a splitmix64 finalizer over the sum
    uint64_t h = 1469598103934665603ull;
    for (char c : stream) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    uint64_t z = seed + 0x9e3779b97f4a7c15ull + h;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace seslr
