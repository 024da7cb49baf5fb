#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nusa {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

std::string to_hex(ByteView bytes);

/// Accepts upper- or lowercase digits; throws InvalidInput on odd length or bad digit.
Bytes from_hex(std::string_view hex);

template <std::size_t N>
std::array<std::uint8_t, N> fixed_from_hex(std::string_view hex);

inline ByteView as_bytes(std::string_view s) noexcept {
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

inline std::string as_string(ByteView b) {
    return {reinterpret_cast<const char*>(b.data()), b.size()};
}

/// Constant-time equality for secrets of equal length.
bool constant_time_equal(ByteView a, ByteView b) noexcept;

} // namespace nusa

#include "nusa/error.hpp"

namespace nusa {

template <std::size_t N>
std::array<std::uint8_t, N> fixed_from_hex(std::string_view hex) {
    const Bytes raw = from_hex(hex);
    if (raw.size() != N) {
        fail(ErrorCode::InvalidInput, "expected " + std::to_string(N) + " bytes of hex, got " +
                                          std::to_string(raw.size()));
    }
    std::array<std::uint8_t, N> out{};
    std::copy(raw.begin(), raw.end(), out.begin());
    return out;
}

} // namespace nusa
