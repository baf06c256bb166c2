#pragma once

// Counter-based random numbers. Every stochastic quantity in the library is a
// pure function of (seed, stream, counter), so results never depend on thread
// scheduling or call order.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

namespace roughpde {

/// SplitMix64 finalizer; used to derive independent stream keys.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Derives a child seed from a base seed and a tuple of indices.
template <typename... Ix>
constexpr std::uint64_t derive_seed(std::uint64_t base, Ix... ix) noexcept {
    std::uint64_t s = mix64(base);
    ((s = mix64(s ^ (static_cast<std::uint64_t>(ix) + 0x632BE59BD9B4E019ULL))), ...);
    return s;
}

/// Philox4x32-10 (Salmon et al., SC'11). Keyed by a 64-bit seed, indexed by a
/// 128-bit counter.
class Philox4x32 {
public:
    using Block = std::array<std::uint32_t, 4>;

    explicit constexpr Philox4x32(std::uint64_t seed) noexcept
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

    constexpr Block operator()(std::uint64_t ctr_lo, std::uint64_t ctr_hi = 0) const noexcept {
        Block c{static_cast<std::uint32_t>(ctr_lo), static_cast<std::uint32_t>(ctr_lo >> 32),
                static_cast<std::uint32_t>(ctr_hi), static_cast<std::uint32_t>(ctr_hi >> 32)};
        std::uint32_t k0 = key_[0];
        std::uint32_t k1 = key_[1];
        for (int round = 0; round < 10; ++round) {
            const std::uint64_t p0 = std::uint64_t{kM0} * c[0];
            const std::uint64_t p1 = std::uint64_t{kM1} * c[2];
            c = {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k0, static_cast<std::uint32_t>(p1),
                 static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k1, static_cast<std::uint32_t>(p0)};
            k0 += kW0;
            k1 += kW1;
        }
        return c;
    }

private:
    static constexpr std::uint32_t kM0 = 0xD2511F53u;
    static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kW0 = 0x9E3779B9u;
    static constexpr std::uint32_t kW1 = 0xBB67AE85u;
    std::array<std::uint32_t, 2> key_;
};

/// Standard normal variates indexed by position in a stream.
///
/// Variates 2k and 2k+1 come from one Philox block through Box-Muller, so
/// `fill` and repeated `at` calls agree bit for bit.
class NormalStream {
public:
    explicit constexpr NormalStream(std::uint64_t seed) noexcept : gen_(seed) {}

    std::array<double, 2> pair(std::uint64_t k) const noexcept {
        const auto b = gen_(k);
        const double u1 = to_unit((std::uint64_t{b[0]} << 32) | b[1]);
        const double u2 = to_unit((std::uint64_t{b[2]} << 32) | b[3]);
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        return {r * std::cos(a), r * std::sin(a)};
    }

    double at(std::uint64_t i) const noexcept { return pair(i / 2)[i % 2]; }

    /// Writes variates [first, first + out.size()) scaled by `scale`.
    void fill(std::span<double> out, double scale = 1.0, std::uint64_t first = 0) const noexcept {
        std::size_t i = 0;
        std::uint64_t pos = first;
        if (pos % 2 == 1 && i < out.size()) {
            out[i++] = scale * at(pos++);
        }
        for (; i + 1 < out.size(); i += 2, pos += 2) {
            const auto p = pair(pos / 2);
            out[i] = scale * p[0];
            out[i + 1] = scale * p[1];
        }
        if (i < out.size()) out[i] = scale * at(pos);
    }

private:
    // (x >> 11 + 0.5) * 2^-53 lies strictly inside (0, 1).
    static double to_unit(std::uint64_t x) noexcept {
        return (static_cast<double>(x >> 11) + 0.5) * 0x1.0p-53;
    }

    Philox4x32 gen_;
};

}  // namespace roughpde
