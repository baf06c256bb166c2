#pragma once

#include <cstdint>
#include <cstring>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <string_view>

namespace roughpde {

/// Incremental FNV-1a (64 bit) over raw bytes. Used to fingerprint inputs in
/// reports and cache keys; not a cryptographic hash.
class Fnv1a {
public:
    Fnv1a& bytes(const void* data, std::size_t n) noexcept {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            state_ ^= p[i];
            state_ *= 0x100000001B3ULL;
        }
        return *this;
    }
    Fnv1a& add(std::span<const double> xs) noexcept { return bytes(xs.data(), xs.size_bytes()); }
    Fnv1a& add(std::string_view s) noexcept { return bytes(s.data(), s.size()); }
    template <typename T>
        requires std::is_arithmetic_v<T>
    Fnv1a& add(T v) noexcept {
        return bytes(&v, sizeof v);
    }
    std::uint64_t value() const noexcept { return state_; }
    std::string hex() const { return to_hex(state_); }

    static std::string to_hex(std::uint64_t v) {
        std::ostringstream os;
        os << std::hex << std::setw(16) << std::setfill('0') << v;
        return os.str();
    }

private:
    std::uint64_t state_ = 0xCBF29CE484222325ULL;
};

}  // namespace roughpde
