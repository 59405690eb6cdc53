#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "pvp/tensor.hpp"

namespace pvp {

/// 64-bit FNV-1a, used to turn names into RNG stream ids.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

/// Counter-based generator: output k of stream s under seed is mix(seed, s, k).
/// Any (seed, stream) pair can be re-created anywhere, so parallel producers
/// stay reproducible without sharing state.
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept : seed_(seed), stream_(stream) {}
    CounterRng(std::uint64_t seed, std::string_view stream_name) noexcept
        : CounterRng(seed, fnv1a64(stream_name)) {}

    std::uint64_t next_u64() noexcept;
    /// Uniform in [0, 1) with 53 bits of precision.
    double uniform() noexcept;
    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t uniform_index(std::uint64_t n) noexcept;
    /// Standard normal via Box-Muller (one draw per pair of uniforms).
    double normal() noexcept;

    std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
};

/// Derives a child stream id from a parent id and an index.
std::uint64_t substream(std::uint64_t stream, std::uint64_t index) noexcept;

/// Tensor of i.i.d. Gaussian samples. Throws ParameterError on std < 0 or an empty shape.
Tensor gaussian_init(const Shape& shape, double mean, double std, std::uint64_t seed, std::uint64_t stream = 0);

/// In-place Fisher-Yates shuffle of 0..n-1.
std::vector<std::size_t> shuffled_indices(std::size_t n, CounterRng& rng);

}  // namespace pvp
