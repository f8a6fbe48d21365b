#pragma once

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace dgrd {

/// xoshiro256** generator seeded through splitmix64.
///
/// Child streams are derived from (seed, label) only, never from the current
/// stream position, so a child is the same no matter how many values were
/// drawn from the parent. Parallel tasks each take their own child; a single
/// stream must not be shared across threads.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed = 0);

    std::uint64_t seed() const noexcept { return seed_; }

    SeededRng child(std::string_view label) const;
    SeededRng child(std::uint64_t index) const;

    std::uint64_t next_u64() noexcept;
    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() noexcept;
    /// Standard normal via Box-Muller; the second variate is cached.
    double normal() noexcept;
    /// Uniform integer in [0, n), unbiased.
    std::uint64_t below(std::uint64_t n) noexcept;
    bool bernoulli(double p) noexcept { return uniform() < p; }

private:
    std::uint64_t seed_;
    std::uint64_t s_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state) noexcept;
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

/// Fisher-Yates shuffle driven by SeededRng (std::shuffle is not portable).
template <class T>
void shuffle(std::vector<T>& items, SeededRng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.below(i));
        std::swap(items[i - 1], items[j]);
    }
}

}  // namespace dgrd
