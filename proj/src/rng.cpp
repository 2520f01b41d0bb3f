#include "svafreq/rng.hpp"

#include "svafreq/hash.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace svafreq {

std::uint64_t Rng::below(std::uint64_t bound) {
    if (bound == 0) {
        throw std::invalid_argument("Rng::below: bound must be positive");
    }
    // Rejection sampling on the top of the range removes modulo bias.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x = engine_();
    while (x >= limit) {
        x = engine_();
    }
    return x % bound;
}

double Rng::uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) {
        u1 = uniform();
    }
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

std::vector<std::size_t> Rng::sample_indices(std::size_t n, std::size_t k) {
    if (k > n) {
        throw std::invalid_argument("Rng::sample_indices: k exceeds population");
    }
    std::unordered_set<std::size_t> chosen;
    chosen.reserve(k * 2);
    for (std::size_t j = n - k; j < n; ++j) {
        const auto t = static_cast<std::size_t>(below(j + 1));
        if (!chosen.insert(t).second) {
            chosen.insert(j);
        }
    }
    std::vector<std::size_t> out(chosen.begin(), chosen.end());
    std::sort(out.begin(), out.end());
    return out;
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view name) {
    const std::string hex = sha256_hex(std::to_string(master) + "/" + std::string(name));
    return std::stoull(hex.substr(0, 16), nullptr, 16);
}

} // namespace svafreq
