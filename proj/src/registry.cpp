#include "acnbp/registry.hpp"

#include <algorithm>

#include "acnbp/crypto.hpp"

namespace acnbp {

void to_json(json& j, const RegistrationReceipt& v) {
    j = json{{"agent_id", v.agent_id},
             {"record_hash", hex_encode(v.record_hash)},
             {"registered_at", v.registered_at}};
}

Bytes Registry::registration_challenge(const AgentId& id) {
    std::string material = "acnbp-registration|" + canonical::encode(json(id));
    Hash32 h = crypto::sha3_256(material);
    return Bytes(h.begin(), h.end());
}

Result<RegistrationReceipt> Registry::register_agent(const Anri& anri, const Certificate& cert,
                                                     const Bytes& pow_nonce) {
    using R = Result<RegistrationReceipt>;
    std::int64_t now = clock_->now_ms();

    auto& bucket = buckets_.try_emplace(anri.id, TokenBucket{config_.bucket_capacity,
                                                             config_.bucket_refill_per_sec,
                                                             config_.bucket_capacity, now})
                       .first->second;
    if (!bucket.try_consume(now)) {
        return R::failure(Err::RateLimited, "registration budget exhausted for " + anri.id.name);
    }

    if (!crypto::verify_pow(registration_challenge(anri.id), pow_nonce,
                            config_.pow_difficulty_bits)) {
        return R::failure(Err::PowRejected, "proof of work below difficulty " +
                                                std::to_string(config_.pow_difficulty_bits));
    }

    if (auto s = validate_structure(anri); !s) {
        return R::failure(Err::CapabilityValidationError, s.error().detail);
    }

    if (cert != anri.security.cert || cert.subject != anri.id ||
        cert.public_key != anri.security.public_key || !verify_certificate(cert, ca_root_)) {
        return R::failure(Err::CredentialFailure, "certificate does not chain to the registry CA");
    }

    if (!crypto::verify(anri.security.public_key, canonical::encode_bytes(anri.preimage_json()),
                        anri.signature)) {
        return R::failure(Err::SignatureInvalid, "ANRI self-signature failed");
    }

    if (auto it = records_.find(anri.id); it != records_.end() && is_live(it->second)) {
        return R::failure(Err::DuplicateRegistration, anri.id.name + " already registered");
    }

    // registered_at is inside the signed preimage, so the stored value must
    // be the one the signature covers; require it to match the registry clock.
    if (anri.metadata.registered_at != now) {
        return R::failure(Err::SignatureInvalid,
                          "registered_at " + std::to_string(anri.metadata.registered_at) +
                              " does not match registry clock " + std::to_string(now));
    }
    records_[anri.id] = anri;

    RegistrationReceipt receipt;
    receipt.agent_id = anri.id;
    receipt.record_hash = crypto::sha3_256(canonical::encode(json(anri)));
    receipt.registered_at = now;
    return receipt;
}

std::vector<Anri> Registry::query(const CapabilityQuery& q, size_t limit) const {
    struct Scored {
        double similarity;
        const Anri* record;
    };
    std::vector<Scored> hits;
    for (const auto& [id, record] : records_) {
        if (!is_live(record)) continue;
        if (!verify_anri(record, ca_root_)) continue;
        double best = -1.0;
        for (const auto& cap : record.capabilities) {
            MatchResult m = match_capability(q, cap);
            if (m.matched) best = std::max(best, m.similarity);
        }
        if (best >= 0.0) hits.push_back({best, &record});
    }
    std::sort(hits.begin(), hits.end(), [](const Scored& a, const Scored& b) {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        return a.record->id < b.record->id;
    });
    if (hits.size() > limit) hits.resize(limit);
    std::vector<Anri> out;
    out.reserve(hits.size());
    for (const Scored& s : hits) out.push_back(*s.record);
    return out;
}

Anri Registry::renewed_record(const Anri& current, std::int64_t new_ttl_ms, std::int64_t now_ms) {
    Anri updated = current;
    updated.metadata.ttl_ms = new_ttl_ms;
    updated.metadata.registered_at = now_ms;
    return updated;
}

Status Registry::renew(const AgentId& id, const Bytes& new_signature, std::int64_t new_ttl_ms) {
    auto it = records_.find(id);
    if (it == records_.end()) return Status::failure(Err::UnknownAgent, id.name);
    Anri updated = renewed_record(it->second, new_ttl_ms, clock_->now_ms());
    if (!crypto::verify(it->second.security.public_key,
                        canonical::encode_bytes(updated.preimage_json()), new_signature)) {
        return Status::failure(Err::SignatureInvalid, "renewal not signed by the record key");
    }
    updated.signature = new_signature;
    it->second = std::move(updated);
    return ok_status();
}

json Registry::revocation_preimage(const AgentId& id) {
    return json{{"action", "revoke"}, {"agent", id}};
}

Status Registry::revoke(const AgentId& id, const Bytes& signed_revocation) {
    auto it = records_.find(id);
    if (it == records_.end()) return Status::failure(Err::UnknownAgent, id.name);
    if (!crypto::verify(it->second.security.public_key,
                        canonical::encode_bytes(revocation_preimage(id)), signed_revocation)) {
        return Status::failure(Err::SignatureInvalid, "revocation not signed by the record key");
    }
    records_.erase(it);
    buckets_.erase(id);
    return ok_status();
}

Anri Registry::reputation_updated_record(const Anri& current, double new_reputation) {
    Anri updated = current;
    updated.metadata.reputation = new_reputation;
    return updated;
}

Status Registry::update_reputation(const AgentId& id, double new_reputation,
                                   const Bytes& new_signature) {
    auto it = records_.find(id);
    if (it == records_.end()) return Status::failure(Err::UnknownAgent, id.name);
    Anri updated = reputation_updated_record(it->second, new_reputation);
    if (!crypto::verify(it->second.security.public_key,
                        canonical::encode_bytes(updated.preimage_json()), new_signature)) {
        return Status::failure(Err::SignatureInvalid, "update not signed by the record key");
    }
    updated.signature = new_signature;
    it->second = std::move(updated);
    return ok_status();
}

std::optional<Anri> Registry::lookup(const AgentId& id) const {
    auto it = records_.find(id);
    if (it == records_.end() || !is_live(it->second)) return std::nullopt;
    return it->second;
}

size_t Registry::live_count() const {
    size_t n = 0;
    for (const auto& [id, record] : records_) {
        if (is_live(record)) ++n;
    }
    return n;
}

json Registry::snapshot() const {
    json records = json::array();
    for (const auto& [id, record] : records_) records.push_back(record);
    return json{{"ca_root", hex_encode(ca_root_)},
                {"exported_at", clock_->now_ms()},
                {"records", records}};
}

Result<Registry> Registry::from_snapshot(const json& snap, ClockHandle clock) {
    try {
        Registry reg(hex_decode(snap.at("ca_root").get<std::string>()), std::move(clock));
        for (const auto& rec : snap.at("records")) {
            Anri record = rec.get<Anri>();
            reg.records_[record.id] = std::move(record);
        }
        return reg;
    } catch (const std::exception& e) {
        return Result<Registry>::failure(Err::SchemaViolation, e.what());
    }
}

}  // namespace acnbp
