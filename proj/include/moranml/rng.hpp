#pragma once

// Reproducible random streams.
//
// Every stochastic step draws from its own std::mt19937_64 stream whose seed
// is derived from a master seed and a label:
//
//   stream_seed(master, "beta1")       = splitmix64(master ^ fnv1a64("beta1"))
//   stream_seed(master, "tree", index) = splitmix64(stream_seed(master, "tree") + index)
//
// The engine's output sequence is fixed by the standard; the distribution
// transforms below are written out so results do not depend on the standard
// library implementation.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace moranml {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

constexpr std::uint64_t stream_seed(std::uint64_t master, std::string_view label) {
    return splitmix64(master ^ fnv1a64(label));
}

constexpr std::uint64_t stream_seed(std::uint64_t master, std::string_view label, std::uint64_t index) {
    return splitmix64(stream_seed(master, label) + index);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    Rng(std::uint64_t master, std::string_view label) : engine_(stream_seed(master, label)) {}
    Rng(std::uint64_t master, std::string_view label, std::uint64_t index)
        : engine_(stream_seed(master, label, index)) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; the second variate is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * M_PI * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    /// Uniform integer on [0, bound) by rejection; bound > 0.
    std::uint64_t below(std::uint64_t bound) {
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
        std::uint64_t x = 0;
        do {
            x = engine_();
        } while (x >= limit);
        return x % bound;
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// k distinct indices from [0, n), in sampled order.
    std::vector<std::ptrdiff_t> sample_without_replacement(std::ptrdiff_t n, std::ptrdiff_t k) {
        std::vector<std::ptrdiff_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::ptrdiff_t{0});
        for (std::ptrdiff_t i = 0; i < k; ++i) {
            const auto j = i + static_cast<std::ptrdiff_t>(below(static_cast<std::uint64_t>(n - i)));
            std::swap(idx[i], idx[j]);
        }
        idx.resize(k);
        return idx;
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace moranml
