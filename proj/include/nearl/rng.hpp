#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace nearl {

// Seeded generator used for every random draw in the project.
//
// Engine: std::mt19937_64, whose output sequence is fixed by the C++
// standard. Uniform doubles take the top 53 bits of one engine word; normals
// use the Box-Muller transform (both outputs of a pair are consumed in
// order). Integer draws use rejection sampling. None of this depends on the
// standard library's distribution classes, whose output is
// implementation-defined.
//
// Streams: stream(key) derives an independent generator from (seed, key) via
// FNV-1a and SplitMix64, so that adding or reordering draws in one stream
// never perturbs another.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t seed() const noexcept { return seed_; }

    Rng stream(std::string_view key) const;

    std::uint64_t next_u64();
    // Uniform in [0, 1).
    double uniform();
    double normal();
    // Uniform integer in [0, bound); bound must be positive.
    std::uint64_t below(std::uint64_t bound);

    // In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;
std::uint64_t fnv1a64(std::string_view bytes) noexcept;
std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t basis) noexcept;

}  // namespace nearl
