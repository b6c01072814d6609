#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>

namespace grape {

// splitmix64 stream with a Box-Muller gaussian on top. Hand-rolled instead of
// <random> so that generated models and plans are byte-identical across
// platforms and standard-library versions.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform integer in [0, n)
    std::size_t below(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

    double gaussian() {
        double u = uniform();
        if (u <= 0.0) {
            u = 0x1.0p-53;
        }
        const double v = uniform();
        return std::sqrt(-2.0 * std::log(u)) * std::cos(kTwoPi * v);
    }

  private:
    static constexpr double kTwoPi = 6.28318530717958647692;
    std::uint64_t state_;
};

}  // namespace grape
