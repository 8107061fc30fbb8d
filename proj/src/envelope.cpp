#include "acnbp/envelope.hpp"


namespace acnbp {

const char* to_string(MsgType t) {
    switch (t) {
        case MsgType::CD_QUERY: return "CD_QUERY";
        case MsgType::CD_RESPONSE: return "CD_RESPONSE";
        case MsgType::SSR: return "SSR";
        case MsgType::SSO: return "SSO";
        case MsgType::SSE_INIT: return "SSE_INIT";
        case MsgType::SSE_CONFIRM: return "SSE_CONFIRM";
        case MsgType::SSA_ACCEPT: return "SSA_ACCEPT";
        case MsgType::SSA_REJECT: return "SSA_REJECT";
        case MsgType::BC: return "BC";
        case MsgType::EXEC_REQUEST: return "EXEC_REQUEST";
        case MsgType::EXEC_RESULT: return "EXEC_RESULT";
        case MsgType::COMMIT: return "COMMIT";
        case MsgType::ABORT: return "ABORT";
        case MsgType::DCU: return "DCU";
    }
    return "UNKNOWN";
}

Result<MsgType> msg_type_from_string(std::string_view s) {
    static const std::map<std::string_view, MsgType> table = {
        {"CD_QUERY", MsgType::CD_QUERY},       {"CD_RESPONSE", MsgType::CD_RESPONSE},
        {"SSR", MsgType::SSR},                 {"SSO", MsgType::SSO},
        {"SSE_INIT", MsgType::SSE_INIT},       {"SSE_CONFIRM", MsgType::SSE_CONFIRM},
        {"SSA_ACCEPT", MsgType::SSA_ACCEPT},   {"SSA_REJECT", MsgType::SSA_REJECT},
        {"BC", MsgType::BC},                   {"EXEC_REQUEST", MsgType::EXEC_REQUEST},
        {"EXEC_RESULT", MsgType::EXEC_RESULT}, {"COMMIT", MsgType::COMMIT},
        {"ABORT", MsgType::ABORT},             {"DCU", MsgType::DCU},
    };
    auto it = table.find(s);
    if (it == table.end()) {
        return Result<MsgType>::failure(Err::ParseError, "unknown msg type '" + std::string(s) + "'");
    }
    return it->second;
}

json SignedEnvelope::preimage_json() const {
    return json{{"body", hex_encode(body)},
                {"msg_type", to_string(msg_type)},
                {"nonce", hex_encode(nonce)},
                {"recipient", recipient},
                {"sender", sender},
                {"seq", seq},
                {"session_id", hex_encode(session_id)},
                {"timestamp_ms", timestamp_ms}};
}

Result<json> SignedEnvelope::body_json() const {
    return canonical::parse(std::string_view(reinterpret_cast<const char*>(body.data()), body.size()));
}

Hash32 SignedEnvelope::hash() const {
    json full = preimage_json();
    full["signature"] = hex_encode(signature);
    return crypto::sha3_256(canonical::encode(full));
}

void to_json(json& j, const SignedEnvelope& v) {
    j = v.preimage_json();
    j["signature"] = hex_encode(v.signature);
}

void from_json(const json& j, SignedEnvelope& v) {
    j.at("sender").get_to(v.sender);
    j.at("recipient").get_to(v.recipient);
    v.session_id = hex_decode(j.at("session_id").get<std::string>());
    auto mt = msg_type_from_string(j.at("msg_type").get<std::string>());
    if (!mt) throw DomainError(Err::ParseError, mt.error().detail);
    v.msg_type = *mt;
    v.body = hex_decode(j.at("body").get<std::string>());
    v.nonce = hex_decode(j.at("nonce").get<std::string>());
    j.at("timestamp_ms").get_to(v.timestamp_ms);
    j.at("seq").get_to(v.seq);
    v.signature = hex_decode(j.at("signature").get<std::string>());
}

SignedEnvelope make_envelope(const crypto::KeyPair& sender_keys, AgentId sender, AgentId recipient,
                             Bytes session_id, MsgType msg_type, const json& body, Bytes nonce,
                             std::int64_t timestamp_ms, std::uint64_t seq) {
    SignedEnvelope env;
    env.sender = std::move(sender);
    env.recipient = std::move(recipient);
    env.session_id = std::move(session_id);
    env.msg_type = msg_type;
    env.body = canonical::encode_bytes(body);
    env.nonce = std::move(nonce);
    env.timestamp_ms = timestamp_ms;
    env.seq = seq;
    env.signature = crypto::sign(sender_keys, env.preimage());
    return env;
}

bool verify_envelope(const SignedEnvelope& env, std::span<const std::uint8_t> sender_public) {
    if (sender_public.size() != crypto::kKeySize) return false;
    if (env.session_id.size() != kSessionIdSize || env.nonce.size() != kNonceSize) return false;
    return crypto::verify(sender_public, env.preimage(), env.signature);
}

static std::string seen_key(const AgentId& sender, const Bytes& nonce) {
    return canonical::encode(json(sender)) + "|" + hex_encode(nonce);
}

static std::string seq_key(const AgentId& sender, const Bytes& session_id) {
    return canonical::encode(json(sender)) + "|" + hex_encode(session_id);
}

Status ReplayWindow::peek(const SignedEnvelope& env, std::int64_t now_ms) const {
    std::int64_t age = now_ms - env.timestamp_ms;
    if (age > window_ms_ || age < -window_ms_) {
        return Status::failure(Err::StaleTimestamp,
                               "timestamp " + std::to_string(env.timestamp_ms) + " outside window at " +
                                   std::to_string(now_ms));
    }
    if (seen_.contains(seen_key(env.sender, env.nonce))) {
        return Status::failure(Err::DuplicateNonce, "nonce " + hex_encode(env.nonce) + " already seen");
    }
    auto it = last_seq_.find(seq_key(env.sender, env.session_id));
    if (it != last_seq_.end() && env.seq <= it->second) {
        return Status::failure(Err::NonMonotoneSequence,
                               "seq " + std::to_string(env.seq) + " <= last " + std::to_string(it->second));
    }
    return ok_status();
}

void ReplayWindow::record_accept(const SignedEnvelope& env) {
    seen_[seen_key(env.sender, env.nonce)] = env.timestamp_ms + window_ms_;
    std::string sk = seq_key(env.sender, env.session_id);
    auto it = last_seq_.find(sk);
    if (it == last_seq_.end() || env.seq > it->second) last_seq_[sk] = env.seq;
}

Status ReplayWindow::check(const SignedEnvelope& env, std::int64_t now_ms) {
    Status s = peek(env, now_ms);
    if (s.ok()) record_accept(env);
    return s;
}

void ReplayWindow::forget_session(const AgentId& sender, const Bytes& session_id) {
    last_seq_.erase(seq_key(sender, session_id));
}

size_t ReplayWindow::evict_expired(std::int64_t now_ms) {
    size_t evicted = 0;
    for (auto it = seen_.begin(); it != seen_.end();) {
        if (it->second < now_ms) {
            it = seen_.erase(it);
            ++evicted;
        } else {
            ++it;
        }
    }
    return evicted;
}

static Bytes keystream(std::span<const std::uint8_t> key, const Bytes& iv, size_t n) {
    Bytes out;
    out.reserve(n);
    std::uint64_t block = 0;
    while (out.size() < n) {
        Bytes material(key.begin(), key.end());
        material.insert(material.end(), iv.begin(), iv.end());
        for (int i = 0; i < 8; ++i) material.push_back(static_cast<std::uint8_t>(block >> (8 * i)));
        Hash32 h = crypto::sha3_256(material);
        size_t take = std::min(n - out.size(), h.size());
        out.insert(out.end(), h.begin(), h.begin() + take);
        ++block;
    }
    return out;
}

json seal_payload(std::span<const std::uint8_t> session_key, const json& plaintext,
                  const Bytes& iv) {
    Bytes pt = canonical::encode_bytes(plaintext);
    Bytes ks = keystream(session_key, iv, pt.size());
    for (size_t i = 0; i < pt.size(); ++i) pt[i] ^= ks[i];
    Hash32 mac = crypto::hmac_sha3_256(session_key, concat(iv, pt));
    return json{{"ct", hex_encode(pt)}, {"iv", hex_encode(iv)}, {"mac", hex_encode(mac)}};
}

Result<json> open_payload(std::span<const std::uint8_t> session_key, const json& sealed) {
    if (!sealed.is_object() || !sealed.contains("ct") || !sealed.contains("iv") ||
        !sealed.contains("mac")) {
        return Result<json>::failure(Err::KeyConfirmationFailed, "sealed payload malformed");
    }
    Bytes ct, iv, mac;
    try {
        ct = hex_decode(sealed.at("ct").get<std::string>());
        iv = hex_decode(sealed.at("iv").get<std::string>());
        mac = hex_decode(sealed.at("mac").get<std::string>());
    } catch (const std::exception& e) {
        return Result<json>::failure(Err::KeyConfirmationFailed, e.what());
    }
    Hash32 expect = crypto::hmac_sha3_256(session_key, concat(iv, ct));
    if (mac.size() != expect.size() || !std::equal(expect.begin(), expect.end(), mac.begin())) {
        return Result<json>::failure(Err::KeyConfirmationFailed, "mac mismatch");
    }
    Bytes ks = keystream(session_key, iv, ct.size());
    for (size_t i = 0; i < ct.size(); ++i) ct[i] ^= ks[i];
    auto parsed = canonical::parse(std::string_view(reinterpret_cast<const char*>(ct.data()), ct.size()));
    if (!parsed) {
        return Result<json>::failure(Err::KeyConfirmationFailed, "plaintext not parseable");
    }
    return parsed;
}

}  // namespace acnbp
