#pragma once

// Test-only reference implementation of SHA3-256 (Keccak-f[1600], rate 136,
// domain padding 0x06). Deliberately independent of the library's crypto
// backend so hashes are checked by two routes.

#include <array>
#include <cstdint>
#include <cstring>
#include <span>
#include <vector>

namespace refsha3 {

namespace detail {

inline std::uint64_t rotl64(std::uint64_t v, unsigned n) {
    return n == 0 ? v : (v << n) | (v >> (64 - n));
}

inline void keccak_f1600(std::array<std::uint64_t, 25>& a) {
    static constexpr std::uint64_t kRC[24] = {
        0x0000000000000001ULL, 0x0000000000008082ULL, 0x800000000000808aULL,
        0x8000000080008000ULL, 0x000000000000808bULL, 0x0000000080000001ULL,
        0x8000000080008081ULL, 0x8000000000008009ULL, 0x000000000000008aULL,
        0x0000000000000088ULL, 0x0000000080008009ULL, 0x000000008000000aULL,
        0x000000008000808bULL, 0x800000000000008bULL, 0x8000000000008089ULL,
        0x8000000000008003ULL, 0x8000000000008002ULL, 0x8000000000000080ULL,
        0x000000000000800aULL, 0x800000008000000aULL, 0x8000000080008081ULL,
        0x8000000000008080ULL, 0x0000000080000001ULL, 0x8000000080008008ULL};
    static constexpr unsigned kRho[5][5] = {{0, 36, 3, 41, 18},
                                            {1, 44, 10, 45, 2},
                                            {62, 6, 43, 15, 61},
                                            {28, 55, 25, 21, 56},
                                            {27, 20, 39, 8, 14}};
    for (int round = 0; round < 24; ++round) {
        // theta
        std::uint64_t c[5], d[5];
        for (int x = 0; x < 5; ++x) {
            c[x] = a[x] ^ a[x + 5] ^ a[x + 10] ^ a[x + 15] ^ a[x + 20];
        }
        for (int x = 0; x < 5; ++x) {
            d[x] = c[(x + 4) % 5] ^ rotl64(c[(x + 1) % 5], 1);
        }
        for (int x = 0; x < 5; ++x) {
            for (int y = 0; y < 5; ++y) a[x + 5 * y] ^= d[x];
        }
        // rho + pi
        std::uint64_t b[25];
        for (int x = 0; x < 5; ++x) {
            for (int y = 0; y < 5; ++y) {
                b[y + 5 * ((2 * x + 3 * y) % 5)] = rotl64(a[x + 5 * y], kRho[x][y]);
            }
        }
        // chi
        for (int x = 0; x < 5; ++x) {
            for (int y = 0; y < 5; ++y) {
                a[x + 5 * y] = b[x + 5 * y] ^ (~b[(x + 1) % 5 + 5 * y] & b[(x + 2) % 5 + 5 * y]);
            }
        }
        // iota
        a[0] ^= kRC[round];
    }
}

}  // namespace detail

inline std::array<std::uint8_t, 32> sha3_256(std::span<const std::uint8_t> data) {
    constexpr size_t kRate = 136;
    std::array<std::uint64_t, 25> state{};
    std::array<std::uint8_t, kRate> block{};
    size_t offset = 0;

    auto absorb_block = [&]() {
        for (size_t i = 0; i < kRate / 8; ++i) {
            std::uint64_t lane = 0;
            for (int b = 0; b < 8; ++b) {
                lane |= static_cast<std::uint64_t>(block[8 * i + b]) << (8 * b);
            }
            state[i] ^= lane;
        }
        detail::keccak_f1600(state);
        block.fill(0);
        offset = 0;
    };

    for (std::uint8_t byte : data) {
        block[offset++] = byte;
        if (offset == kRate) absorb_block();
    }
    // pad10*1 with SHA-3 domain bits: 0x06 ... 0x80
    block[offset] ^= 0x06;
    block[kRate - 1] ^= 0x80;
    absorb_block();

    std::array<std::uint8_t, 32> out{};
    for (size_t i = 0; i < 4; ++i) {
        for (int b = 0; b < 8; ++b) {
            out[8 * i + b] = static_cast<std::uint8_t>(state[i] >> (8 * b));
        }
    }
    return out;
}

inline std::array<std::uint8_t, 32> sha3_256(const std::vector<std::uint8_t>& data) {
    return sha3_256(std::span<const std::uint8_t>(data.data(), data.size()));
}

// Reference HMAC over the reference hash (block size 136 for SHA3-256).
inline std::array<std::uint8_t, 32> hmac_sha3_256(std::span<const std::uint8_t> key,
                                                  std::span<const std::uint8_t> msg) {
    constexpr size_t kBlock = 136;
    std::vector<std::uint8_t> k(key.begin(), key.end());
    if (k.size() > kBlock) {
        auto h = sha3_256(std::span<const std::uint8_t>(k.data(), k.size()));
        k.assign(h.begin(), h.end());
    }
    k.resize(kBlock, 0);
    std::vector<std::uint8_t> inner(kBlock);
    std::vector<std::uint8_t> outer(kBlock);
    for (size_t i = 0; i < kBlock; ++i) {
        inner[i] = k[i] ^ 0x36;
        outer[i] = k[i] ^ 0x5c;
    }
    inner.insert(inner.end(), msg.begin(), msg.end());
    auto ih = sha3_256(std::span<const std::uint8_t>(inner.data(), inner.size()));
    outer.insert(outer.end(), ih.begin(), ih.end());
    return sha3_256(std::span<const std::uint8_t>(outer.data(), outer.size()));
}

}  // namespace refsha3
