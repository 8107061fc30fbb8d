#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "acnbp/bytes.hpp"
#include "acnbp/crypto.hpp"

namespace acnbp {

// Hash-based deterministic generator with named streams. Draws on one stream
// never perturb another, so adding an adversary on one link leaves every
// other link's randomness unchanged.
class DetRng {
public:
    DetRng(std::uint64_t seed, std::string stream) : seed_(seed), stream_(std::move(stream)) {}

    DetRng split(std::string_view child) const {
        return DetRng(seed_, stream_ + "/" + std::string(child));
    }

    Bytes next_bytes(size_t n) {
        Bytes out;
        out.reserve(n);
        while (out.size() < n) {
            Hash32 block = next_block();
            size_t take = std::min(n - out.size(), block.size());
            out.insert(out.end(), block.begin(), block.begin() + take);
        }
        return out;
    }

    std::uint64_t next_u64() {
        Hash32 block = next_block();
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(block[i]) << (8 * i);
        return v;
    }

    // Uniform in [0,1).
    double next_unit() {
        return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
    }

    // Uniform integer in [lo, hi], inclusive.
    std::int64_t next_in(std::int64_t lo, std::int64_t hi) {
        if (hi <= lo) return lo;
        std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(next_u64() % range);
    }

    bool next_bernoulli(double p) {
        if (p <= 0.0) return false;
        if (p >= 1.0) return true;
        return next_unit() < p;
    }

private:
    Hash32 next_block() {
        std::string material = std::to_string(seed_) + "|" + stream_ + "|" + std::to_string(counter_++);
        return crypto::sha3_256(material);
    }

    std::uint64_t seed_;
    std::string stream_;
    std::uint64_t counter_ = 0;
};

}  // namespace acnbp
