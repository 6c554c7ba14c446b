#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "aptlab/tensor.hpp"

namespace aptlab {

// Deterministic RNG. All distribution transforms are hand-rolled on top of
// mt19937_64 so that streams are bit-identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // Derive an independent stream for a named sub-purpose.
    static Rng derive(std::uint64_t seed, std::uint64_t stream) {
        // splitmix64 mix of (seed, stream)
        std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return Rng(z ^ (z >> 31));
    }

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal(double mean = 0.0, double stddev = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mean + stddev * spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        has_spare_ = true;
        return mean + stddev * u * m;
    }

    int uniform_int(int n) {  // [0, n)
        return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
    }

    Tensor gaussian_tensor(Shape s, double mean, double stddev) {
        Tensor t(std::move(s));
        for (auto& x : t.v) x = normal(mean, stddev);
        return t;
    }

    Tensor uniform_tensor(Shape s, double lo, double hi) {
        Tensor t(std::move(s));
        for (auto& x : t.v) x = uniform(lo, hi);
        return t;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = next_u64() % i;
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace aptlab
