#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mimlite/util.hpp"

namespace mimlite {

// Deterministic random source.  All stochastic behaviour in the library flows
// through this class so that a run is reproducible from its seed alone,
// independent of platform or standard-library distribution internals
// (std::*_distribution is not bit-stable across implementations, so the
// transforms below are written out explicitly).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    // Child stream whose sequence is independent of draws taken from this one.
    // Used to give optional components (e.g. auxiliary heads) their own stream
    // so enabling them does not shift initialisation of everything else.
    Rng derive(const std::string& label) const {
        std::uint64_t h = fnv1a(label, seed_ ^ kFnvOffset);
        return Rng(h);
    }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) {
        // Rejection sampling to avoid modulo bias.
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    // Standard normal via Box-Muller (one value per pair; the partner draw is
    // discarded to keep the state advance rate independent of call pattern).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Normal clipped to +/-2 standard deviations by rejection.
    double trunc_normal(double mean, double stddev) {
        double z = normal();
        while (z < -2.0 || z > 2.0) z = normal();
        return mean + stddev * z;
    }

    // In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // First k elements of a random permutation of [0, n).
    std::vector<int> permutation(int n) {
        std::vector<int> idx(n);
        for (int i = 0; i < n; ++i) idx[i] = i;
        shuffle(idx);
        return idx;
    }

    Mat normal_matrix(int rows, int cols, double mean, double stddev) {
        Mat m(rows, cols);
        for (int c = 0; c < cols; ++c)
            for (int r = 0; r < rows; ++r) m(r, c) = normal(mean, stddev);
        return m;
    }

    Mat trunc_normal_matrix(int rows, int cols, double mean, double stddev) {
        Mat m(rows, cols);
        for (int c = 0; c < cols; ++c)
            for (int r = 0; r < rows; ++r) m(r, c) = trunc_normal(mean, stddev);
        return m;
    }

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_;
};

}  // namespace mimlite
