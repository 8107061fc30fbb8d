#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace acnbp {

using Bytes = std::vector<std::uint8_t>;
using Hash32 = std::array<std::uint8_t, 32>;

inline constexpr Hash32 kZeroHash{};

std::string hex_encode(std::span<const std::uint8_t> data);
Bytes hex_decode(std::string_view hex);  // throws std::invalid_argument on bad input

inline std::string hex_encode(const Hash32& h) {
    return hex_encode(std::span<const std::uint8_t>(h.data(), h.size()));
}

inline Bytes to_bytes(std::string_view s) {
    return Bytes(s.begin(), s.end());
}

inline Bytes concat(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    Bytes out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

inline Hash32 to_hash32(std::span<const std::uint8_t> data) {
    if (data.size() != 32) throw std::invalid_argument("expected 32 bytes");
    Hash32 h;
    std::copy(data.begin(), data.end(), h.begin());
    return h;
}

}  // namespace acnbp
