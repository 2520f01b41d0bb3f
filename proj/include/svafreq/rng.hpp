#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace svafreq {

/// Seeded generator whose output is identical on every platform.
///
/// std::mt19937_64 is fully specified by the standard, but the std::*_distribution
/// adaptors are not, so all draws go through the helpers below.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform integer in [0, bound). bound must be positive.
    std::uint64_t below(std::uint64_t bound);

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform();

    /// Standard normal via Box-Muller.
    double normal();

    bool bernoulli(double p) { return uniform() < p; }

    template <class T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    template <class T>
    void shuffle(std::vector<T>& items) { shuffle(std::span<T>(items)); }

    /// k distinct indices from [0, n), sorted ascending (Floyd's algorithm).
    std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Child seed for a named stage: first 8 bytes of SHA-256("<master>/<name>").
std::uint64_t derive_seed(std::uint64_t master, std::string_view name);

} // namespace svafreq
