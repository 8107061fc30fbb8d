#include "acnbp/crypto.hpp"

#include <openssl/evp.h>
#include <openssl/hmac.h>

#include <cassert>
#include <cstring>

namespace acnbp::crypto {

namespace {

struct MdCtx {
    EVP_MD_CTX* ctx;
    MdCtx() : ctx(EVP_MD_CTX_new()) {
        if (!ctx) throw std::bad_alloc();
    }
    ~MdCtx() { EVP_MD_CTX_free(ctx); }
    MdCtx(const MdCtx&) = delete;
    MdCtx& operator=(const MdCtx&) = delete;
};

struct Pkey {
    EVP_PKEY* key = nullptr;
    explicit Pkey(EVP_PKEY* k) : key(k) {}
    ~Pkey() { EVP_PKEY_free(key); }
    Pkey(const Pkey&) = delete;
    Pkey& operator=(const Pkey&) = delete;
    explicit operator bool() const { return key != nullptr; }
};

}  // namespace

Hash32 sha3_256(std::span<const std::uint8_t> data) {
    Hash32 out{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha3_256(), nullptr) != 1 ||
        len != out.size()) {
        throw std::runtime_error("SHA3-256 digest failed");
    }
    return out;
}

Hash32 sha3_256(std::string_view data) {
    return sha3_256(std::span<const std::uint8_t>(
        reinterpret_cast<const std::uint8_t*>(data.data()), data.size()));
}

Hash32 hash_chain_step(const Hash32& prev_hash, std::span<const std::uint8_t> body) {
    Bytes buf;
    buf.reserve(prev_hash.size() + body.size());
    buf.insert(buf.end(), prev_hash.begin(), prev_hash.end());
    buf.insert(buf.end(), body.begin(), body.end());
    return sha3_256(buf);
}

Hash32 hmac_sha3_256(std::span<const std::uint8_t> key, std::span<const std::uint8_t> msg) {
    Hash32 out{};
    unsigned int len = 0;
    if (!HMAC(EVP_sha3_256(), key.data(), static_cast<int>(key.size()), msg.data(), msg.size(),
              out.data(), &len) ||
        len != out.size()) {
        throw std::runtime_error("HMAC-SHA3-256 failed");
    }
    return out;
}

Hash32 derive_session_key(std::span<const std::uint8_t> shared_secret,
                          std::span<const std::uint8_t> nonce_r,
                          std::span<const std::uint8_t> nonce_p) {
    if (shared_secret.empty() || nonce_r.empty() || nonce_p.empty()) {
        throw DomainError(Err::MalformedKey, "derive_session_key inputs must be nonempty");
    }
    return hmac_sha3_256(shared_secret, concat(nonce_r, nonce_p));
}

namespace {

class Ed25519Scheme final : public SignatureScheme {
public:
    std::string id() const override { return "ed25519"; }

    KeyPair keypair_from_seed(std::span<const std::uint8_t> seed32) const override {
        if (seed32.size() != kKeySize) {
            throw DomainError(Err::MalformedKey, "seed must be 32 bytes");
        }
        Pkey sk(EVP_PKEY_new_raw_private_key(EVP_PKEY_ED25519, nullptr, seed32.data(),
                                             seed32.size()));
        if (!sk) throw std::runtime_error("ed25519 key construction failed");
        Bytes pub(kKeySize);
        size_t publen = pub.size();
        if (EVP_PKEY_get_raw_public_key(sk.key, pub.data(), &publen) != 1 || publen != kKeySize) {
            throw std::runtime_error("ed25519 public key extraction failed");
        }
        return KeyPair{std::move(pub), Bytes(seed32.begin(), seed32.end()), id()};
    }

    Bytes sign(std::span<const std::uint8_t> secret_key,
               std::span<const std::uint8_t> payload) const override {
        if (secret_key.size() != kKeySize) {
            throw DomainError(Err::MalformedKey, "secret key must be 32 bytes");
        }
        Pkey sk(EVP_PKEY_new_raw_private_key(EVP_PKEY_ED25519, nullptr, secret_key.data(),
                                             secret_key.size()));
        if (!sk) throw std::runtime_error("ed25519 key construction failed");
        MdCtx ctx;
        if (EVP_DigestSignInit(ctx.ctx, nullptr, nullptr, nullptr, sk.key) != 1) {
            throw std::runtime_error("ed25519 sign init failed");
        }
        Bytes sig(kSignatureSize);
        size_t siglen = sig.size();
        if (EVP_DigestSign(ctx.ctx, sig.data(), &siglen, payload.data(), payload.size()) != 1 ||
            siglen != kSignatureSize) {
            throw std::runtime_error("ed25519 sign failed");
        }
        return sig;
    }

    bool verify(std::span<const std::uint8_t> public_key,
                std::span<const std::uint8_t> payload,
                std::span<const std::uint8_t> signature) const override {
        if (public_key.size() != kKeySize) {
            throw DomainError(Err::MalformedKey, "public key must be 32 bytes");
        }
        if (signature.size() != kSignatureSize) return false;
        Pkey pk(EVP_PKEY_new_raw_public_key(EVP_PKEY_ED25519, nullptr, public_key.data(),
                                            public_key.size()));
        if (!pk) return false;
        MdCtx ctx;
        if (EVP_DigestVerifyInit(ctx.ctx, nullptr, nullptr, nullptr, pk.key) != 1) return false;
        return EVP_DigestVerify(ctx.ctx, signature.data(), signature.size(), payload.data(),
                                payload.size()) == 1;
    }
};

}  // namespace

const SignatureScheme& default_scheme() {
    static const Ed25519Scheme scheme;
    return scheme;
}

KeyPair keypair_from_seed(std::span<const std::uint8_t> seed32) {
    return default_scheme().keypair_from_seed(seed32);
}

KeyPair keypair_from_label(std::string_view label) {
    Hash32 seed = sha3_256(label);
    return keypair_from_seed(seed);
}

Bytes sign(const KeyPair& kp, std::span<const std::uint8_t> payload) {
    return default_scheme().sign(kp.secret_key, payload);
}

bool verify(std::span<const std::uint8_t> public_key, std::span<const std::uint8_t> payload,
            std::span<const std::uint8_t> signature) {
    return default_scheme().verify(public_key, payload, signature);
}

EcdhKeyPair x25519_from_seed(std::span<const std::uint8_t> seed32) {
    if (seed32.size() != kKeySize) {
        throw DomainError(Err::MalformedKey, "seed must be 32 bytes");
    }
    Pkey sk(EVP_PKEY_new_raw_private_key(EVP_PKEY_X25519, nullptr, seed32.data(), seed32.size()));
    if (!sk) throw std::runtime_error("x25519 key construction failed");
    Bytes pub(kKeySize);
    size_t publen = pub.size();
    if (EVP_PKEY_get_raw_public_key(sk.key, pub.data(), &publen) != 1 || publen != kKeySize) {
        throw std::runtime_error("x25519 public key extraction failed");
    }
    return EcdhKeyPair{std::move(pub), Bytes(seed32.begin(), seed32.end())};
}

Bytes x25519_shared(std::span<const std::uint8_t> my_secret,
                    std::span<const std::uint8_t> peer_public) {
    if (my_secret.size() != kKeySize || peer_public.size() != kKeySize) {
        throw DomainError(Err::MalformedKey, "x25519 keys must be 32 bytes");
    }
    Pkey sk(EVP_PKEY_new_raw_private_key(EVP_PKEY_X25519, nullptr, my_secret.data(),
                                         my_secret.size()));
    Pkey pk(EVP_PKEY_new_raw_public_key(EVP_PKEY_X25519, nullptr, peer_public.data(),
                                        peer_public.size()));
    if (!sk || !pk) throw std::runtime_error("x25519 key construction failed");
    EVP_PKEY_CTX* ctx = EVP_PKEY_CTX_new(sk.key, nullptr);
    if (!ctx) throw std::bad_alloc();
    Bytes shared(kKeySize);
    size_t outlen = shared.size();
    bool ok = EVP_PKEY_derive_init(ctx) == 1 && EVP_PKEY_derive_set_peer(ctx, pk.key) == 1 &&
              EVP_PKEY_derive(ctx, shared.data(), &outlen) == 1 && outlen == kKeySize;
    EVP_PKEY_CTX_free(ctx);
    if (!ok) throw std::runtime_error("x25519 derive failed");
    return shared;
}

static int leading_zero_bits(const Hash32& h) {
    int bits = 0;
    for (std::uint8_t b : h) {
        if (b == 0) {
            bits += 8;
            continue;
        }
        for (int i = 7; i >= 0; --i) {
            if (b & (1u << i)) return bits;
            ++bits;
        }
    }
    return bits;
}

bool verify_pow(std::span<const std::uint8_t> challenge, std::span<const std::uint8_t> nonce,
                int difficulty_bits) {
    if (difficulty_bits < 0 || difficulty_bits > 24) return false;
    Hash32 h = sha3_256(concat(challenge, nonce));
    return leading_zero_bits(h) >= difficulty_bits;
}

Bytes proof_of_work(std::span<const std::uint8_t> challenge, int difficulty_bits) {
    if (difficulty_bits < 0 || difficulty_bits > 24) {
        throw std::invalid_argument("difficulty_bits out of [0,24]");
    }
    // Counter search from zero: deterministic for a fixed challenge.
    for (std::uint64_t counter = 0;; ++counter) {
        Bytes nonce(8);
        for (int i = 0; i < 8; ++i) nonce[i] = static_cast<std::uint8_t>(counter >> (8 * i));
        if (verify_pow(challenge, nonce, difficulty_bits)) return nonce;
    }
}

}  // namespace acnbp::crypto
