#pragma once

#include <memory>
#include <span>
#include <string>

#include "acnbp/bytes.hpp"
#include "acnbp/errors.hpp"

namespace acnbp::crypto {

inline constexpr size_t kKeySize = 32;
inline constexpr size_t kSignatureSize = 64;

Hash32 sha3_256(std::span<const std::uint8_t> data);
Hash32 sha3_256(std::string_view data);

// SHA3-256(prev_hash || body). prev_hash must be 32 bytes.
Hash32 hash_chain_step(const Hash32& prev_hash, std::span<const std::uint8_t> body);

Hash32 hmac_sha3_256(std::span<const std::uint8_t> key, std::span<const std::uint8_t> msg);

// HMAC-SHA3(shared_secret, nonce_r || nonce_p). All inputs must be nonempty.
Hash32 derive_session_key(std::span<const std::uint8_t> shared_secret,
                          std::span<const std::uint8_t> nonce_r,
                          std::span<const std::uint8_t> nonce_p);

struct KeyPair {
    Bytes public_key;   // 32 bytes
    Bytes secret_key;   // 32 bytes (seed form)
    std::string scheme_id;
};

// Pluggable signature scheme. Signing must be deterministic for a fixed
// (secret, message) pair; verification is the scheme's own oracle.
class SignatureScheme {
public:
    virtual ~SignatureScheme() = default;
    virtual std::string id() const = 0;
    virtual KeyPair keypair_from_seed(std::span<const std::uint8_t> seed32) const = 0;
    // Throws DomainError{MalformedKey} on wrong-length keys.
    virtual Bytes sign(std::span<const std::uint8_t> secret_key,
                       std::span<const std::uint8_t> payload) const = 0;
    virtual bool verify(std::span<const std::uint8_t> public_key,
                        std::span<const std::uint8_t> payload,
                        std::span<const std::uint8_t> signature) const = 0;
};

// Default scheme: Ed25519 (256-bit, deterministic).
const SignatureScheme& default_scheme();

KeyPair keypair_from_seed(std::span<const std::uint8_t> seed32);
// Convenience: derive the 32-byte seed as SHA3-256 of a text label.
KeyPair keypair_from_label(std::string_view label);

Bytes sign(const KeyPair& kp, std::span<const std::uint8_t> payload);
bool verify(std::span<const std::uint8_t> public_key,
            std::span<const std::uint8_t> payload,
            std::span<const std::uint8_t> signature);

// Ephemeral X25519 agreement for session key establishment.
struct EcdhKeyPair {
    Bytes public_key;  // 32 bytes
    Bytes secret_key;  // 32 bytes
};
EcdhKeyPair x25519_from_seed(std::span<const std::uint8_t> seed32);
Bytes x25519_shared(std::span<const std::uint8_t> my_secret,
                    std::span<const std::uint8_t> peer_public);

// Proof of work: find/verify a nonce with SHA3-256(challenge || nonce)
// carrying at least `difficulty_bits` leading zero bits. difficulty in [0,24].
Bytes proof_of_work(std::span<const std::uint8_t> challenge, int difficulty_bits);
bool verify_pow(std::span<const std::uint8_t> challenge,
                std::span<const std::uint8_t> nonce, int difficulty_bits);

}  // namespace acnbp::crypto
