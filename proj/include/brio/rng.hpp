#pragma once

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace brio {

/// Counter-based generator: the n-th output is a SplitMix64 finalisation of
/// seed + n * golden-ratio increment, so (seed, counter) pins the stream on
/// every platform. Callers own their generators; there is no global state.
class Rng {
public:
    static constexpr std::string_view algorithm = "splitmix64-counter";

    explicit Rng(std::uint64_t seed, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    /// Standard normal via Box-Muller; consumes two draws.
    double normal();
    /// Uniform integer in [0, n); n > 0.
    std::uint64_t below(std::uint64_t n);
    bool bernoulli(double p) { return uniform() < p; }

    /// Independent generator for a named sub-stream.
    Rng fork(std::uint64_t stream) const;

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    std::uint64_t seed_;
    std::uint64_t counter_;
};

std::uint64_t mix64(std::uint64_t z);

}  // namespace brio
