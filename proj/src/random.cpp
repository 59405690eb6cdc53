#include "pvp/random.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "pvp/error.hpp"

namespace pvp {
namespace {

constexpr std::uint64_t splitmix(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) {
    std::uint64_t h = basis;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t substream(std::uint64_t stream, std::uint64_t index) noexcept {
    return splitmix(stream ^ splitmix(index + 0x632be59bd9b4e019ULL));
}

std::uint64_t CounterRng::next_u64() noexcept {
    const std::uint64_t key = splitmix(seed_ ^ splitmix(stream_));
    return splitmix(key + splitmix(counter_++));
}

double CounterRng::uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t CounterRng::uniform_index(std::uint64_t n) noexcept {
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
}

double CounterRng::normal() noexcept {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Tensor gaussian_init(const Shape& shape, double mean, double std, std::uint64_t seed, std::uint64_t stream) {
    if (!(std >= 0.0)) throw ParameterError("gaussian_init: std must be non-negative");
    if (shape.empty()) throw ParameterError("gaussian_init: shape must be non-empty");
    Tensor t(shape);
    CounterRng rng(seed, stream);
    for (auto& v : t.data()) v = mean + std * rng.normal();
    return t;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, CounterRng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform_index(i));
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

}  // namespace pvp
