#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "bridgeflow/matrix.hpp"

namespace bridgeflow {

// Deterministic RNG with hand-rolled distributions. std::*_distribution is
// implementation-defined, so we derive everything from raw mt19937_64 output
// to keep sampled sequences stable across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next() { return gen_(); }

    // Uniform on [0, 1) with 53-bit resolution.
    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Box-Muller; one normal per call, the sine branch is discarded.
    double normal() {
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Unbiased integer in [0, n) via Lemire's multiply-shift rejection.
    std::uint64_t uniform_index(std::uint64_t n) {
        if (n == 0) return 0;
        while (true) {
            const std::uint64_t x = gen_();
            const unsigned __int128 m = static_cast<unsigned __int128>(x) * n;
            const std::uint64_t lo = static_cast<std::uint64_t>(m);
            if (lo >= n || lo >= (-n) % n) return static_cast<std::uint64_t>(m >> 64);
        }
    }

    Matrix normal_matrix(Index rows, Index cols) {
        Matrix m(rows, cols);
        for (Index i = 0; i < rows; ++i)
            for (Index j = 0; j < cols; ++j) m(i, j) = normal();
        return m;
    }

    Vector uniform_vector(Index n, double lo = 0.0, double hi = 1.0) {
        Vector v(n);
        for (Index i = 0; i < n; ++i) v[i] = uniform(lo, hi);
        return v;
    }

    // Independent child stream; distinct tags give decorrelated streams.
    Rng fork(std::uint64_t tag) {
        return Rng(splitmix(gen_() ^ (tag * 0x9e3779b97f4a7c15ULL)));
    }

private:
    static std::uint64_t splitmix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    std::mt19937_64 gen_;
};

}  // namespace bridgeflow
