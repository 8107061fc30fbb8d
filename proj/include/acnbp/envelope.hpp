#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "acnbp/canonical.hpp"
#include "acnbp/core_model.hpp"
#include "acnbp/crypto.hpp"

namespace acnbp {

enum class MsgType {
    CD_QUERY,
    CD_RESPONSE,
    SSR,
    SSO,
    SSE_INIT,
    SSE_CONFIRM,
    SSA_ACCEPT,
    SSA_REJECT,
    BC,
    EXEC_REQUEST,
    EXEC_RESULT,
    COMMIT,
    ABORT,
    DCU,
};

const char* to_string(MsgType t);
Result<MsgType> msg_type_from_string(std::string_view s);

inline constexpr size_t kNonceSize = 16;
inline constexpr size_t kSessionIdSize = 16;
inline constexpr std::int64_t kDefaultReplayWindowMs = 300000;

struct SignedEnvelope {
    AgentId sender;
    AgentId recipient;
    Bytes session_id;        // 16 bytes
    MsgType msg_type = MsgType::CD_QUERY;
    Bytes body;              // canonical bytes of the body value
    Bytes nonce;             // 16 bytes
    std::int64_t timestamp_ms = 0;
    std::uint64_t seq = 0;   // per (sender, session) monotone
    Bytes signature;         // over canonical encoding of all prior fields

    json preimage_json() const;
    Bytes preimage() const { return canonical::encode_bytes(preimage_json()); }
    Result<json> body_json() const;
    Hash32 hash() const;  // over the full signed envelope
};

void to_json(json& j, const SignedEnvelope& v);
void from_json(const json& j, SignedEnvelope& v);

SignedEnvelope make_envelope(const crypto::KeyPair& sender_keys, AgentId sender, AgentId recipient,
                             Bytes session_id, MsgType msg_type, const json& body, Bytes nonce,
                             std::int64_t timestamp_ms, std::uint64_t seq);

bool verify_envelope(const SignedEnvelope& env, std::span<const std::uint8_t> sender_public);

// Nonce/timestamp/sequence replay defense. One window per receiving agent;
// mutations are not internally synchronized.
class ReplayWindow {
public:
    explicit ReplayWindow(std::int64_t window_ms = kDefaultReplayWindowMs)
        : window_ms_(window_ms) {}

    // Accept iff |now - timestamp| <= window, (sender, nonce) unseen, and
    // seq > last accepted seq for (sender, session). Accepting records the
    // nonce and advances the sequence floor.
    Status check(const SignedEnvelope& env, std::int64_t now_ms);

    // Validation without recording; callers that may still reject the
    // message on protocol grounds record only after truly accepting it.
    Status peek(const SignedEnvelope& env, std::int64_t now_ms) const;
    void record_accept(const SignedEnvelope& env);

    void forget_session(const AgentId& sender, const Bytes& session_id);
    size_t evict_expired(std::int64_t now_ms);

    std::int64_t window_ms() const { return window_ms_; }
    size_t seen_count() const { return seen_.size(); }

private:
    std::int64_t window_ms_;
    std::map<std::string, std::int64_t> seen_;                 // sender|nonce -> expiry
    std::map<std::string, std::uint64_t> last_seq_;            // sender|session -> seq
};

// Symmetric channel sealing for post-establishment bodies: SHA3 keystream
// XOR, then HMAC-SHA3 over iv||ciphertext (encrypt-then-mac).
json seal_payload(std::span<const std::uint8_t> session_key, const json& plaintext,
                  const Bytes& iv);
Result<json> open_payload(std::span<const std::uint8_t> session_key, const json& sealed);

}  // namespace acnbp
