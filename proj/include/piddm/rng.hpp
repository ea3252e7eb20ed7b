#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace piddm {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
inline std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}
}  // namespace detail

// Counter-based random stream: the k-th draw is a pure function of
// (seed, k), so identical seeds give identical streams on any platform
// and child streams can be handed to parallel workers.
class RngSource {
public:
    explicit RngSource(std::uint64_t seed) noexcept
        : base_(detail::splitmix64(seed ^ 0x6a09e667f3bcc909ULL)), counter_(0) {}

    std::uint64_t counter() const noexcept { return counter_; }

    std::uint64_t next_u64() noexcept {
        return detail::splitmix64(base_ + 0x9e3779b97f4a7c15ULL * ++counter_);
    }

    // uniform in [0, 1)
    double uniform() noexcept {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller (cosine branch); consumes two uniforms.
    double normal() noexcept {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    std::vector<double> normal_vec(std::size_t n) {
        std::vector<double> out(n);
        for (double& v : out) v = normal();
        return out;
    }

    // Independent derived stream; deterministic in (parent seed, idx).
    RngSource child(std::uint64_t idx) const noexcept {
        RngSource r(0);
        r.base_ = detail::splitmix64(base_ ^ detail::splitmix64(idx ^ 0x5851f42d4c957f2dULL));
        r.counter_ = 0;
        return r;
    }

    RngSource child(std::string_view name) const noexcept {
        return child(detail::fnv1a64(name));
    }

private:
    std::uint64_t base_;
    std::uint64_t counter_;
};

inline std::vector<double> sample_noise(std::size_t shape, RngSource& rng) {
    if (shape == 0) throw std::invalid_argument("sample_noise: empty shape");
    return rng.normal_vec(shape);
}

}  // namespace piddm
