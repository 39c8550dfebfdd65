#pragma once

#include <cmath>
#include <cstdint>

#include "linearsr/tensor.hpp"

namespace linearsr {

/// Deterministic counter-based generator: splitmix64 over (seed, counter).
/// Every draw hashes seed^state, so streams forked with distinct seeds are
/// independent and a given (seed, draw index) always yields the same value.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), counter_(0) {}

    std::uint64_t next_u64() {
        std::uint64_t z = seed_ + (++counter_) * 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (no cached second value: keeps the
    /// draw count deterministic regardless of call pattern).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

    /// Independent substream; `stream` distinguishes forks from the same parent.
    Rng fork(std::uint64_t stream) {
        std::uint64_t z = seed_ ^ (0xA0761D6478BD642Full * (stream + 1)) ^ next_u64();
        return Rng(z);
    }

    template <typename T>
    Tensor<T> normal_tensor(std::vector<std::size_t> shape, double stddev = 1.0) {
        Tensor<T> t(std::move(shape));
        for (auto& x : t.data) x = static_cast<T>(normal() * stddev);
        return t;
    }

    template <typename T>
    Tensor<T> uniform_tensor(std::vector<std::size_t> shape, double lo = 0.0, double hi = 1.0) {
        Tensor<T> t(std::move(shape));
        for (auto& x : t.data) x = static_cast<T>(uniform(lo, hi));
        return t;
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }
    void restore(std::uint64_t counter) { counter_ = counter; }

private:
    std::uint64_t seed_;
    std::uint64_t counter_;
};

} // namespace linearsr
