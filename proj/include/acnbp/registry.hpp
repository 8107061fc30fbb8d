#pragma once

#include <map>
#include <optional>
#include <vector>

#include "acnbp/clock.hpp"
#include "acnbp/core_model.hpp"

namespace acnbp {

// Per-agent admission budget, refilled continuously on the virtual clock.
struct TokenBucket {
    double capacity = 5.0;
    double refill_per_sec = 1.0;
    double tokens = 5.0;
    std::int64_t last_ms = 0;

    bool try_consume(std::int64_t now_ms) {
        double elapsed_s = static_cast<double>(now_ms - last_ms) / 1000.0;
        if (elapsed_s > 0) {
            tokens = std::min(capacity, tokens + elapsed_s * refill_per_sec);
            last_ms = now_ms;
        }
        if (tokens >= 1.0) {
            tokens -= 1.0;
            return true;
        }
        return false;
    }
};

struct RegistrationReceipt {
    AgentId agent_id;
    Hash32 record_hash{};
    std::int64_t registered_at = 0;
};

void to_json(json& j, const RegistrationReceipt& v);

struct RegistryConfig {
    int pow_difficulty_bits = 12;
    double bucket_capacity = 5.0;
    double bucket_refill_per_sec = 1.0;
};

// The Agent Name Service: signed registration with admission control,
// capability queries, renewal/revocation, reputation updates. Single node;
// mutations are serialized by the caller.
class Registry {
public:
    Registry(Bytes ca_root, ClockHandle clock, RegistryConfig config = {})
        : ca_root_(std::move(ca_root)), clock_(std::move(clock)), config_(config) {}

    // Admission order: rate limit (every attempt costs a token), proof of
    // work, structural capability validation, certificate chain, ANRI
    // self-signature, duplicate liveness. Failure leaves records untouched.
    Result<RegistrationReceipt> register_agent(const Anri& anri, const Certificate& cert,
                                               const Bytes& pow_nonce);

    // Live, verified records with a matching capability, ordered by best
    // similarity descending then AgentId ascending; at most `limit`.
    std::vector<Anri> query(const CapabilityQuery& q, size_t limit) const;

    Status renew(const AgentId& id, const Bytes& new_signature, std::int64_t new_ttl_ms);
    Status revoke(const AgentId& id, const Bytes& signed_revocation);

    // DCU path: replace the record's metadata.reputation, re-signed by the
    // agent key (same trust shape as renew).
    Status update_reputation(const AgentId& id, double new_reputation, const Bytes& new_signature);

    std::optional<Anri> lookup(const AgentId& id) const;
    size_t live_count() const;

    static Bytes registration_challenge(const AgentId& id);
    // Caller-side helpers producing the exact preimages the registry checks.
    static Anri renewed_record(const Anri& current, std::int64_t new_ttl_ms, std::int64_t now_ms);
    static Anri reputation_updated_record(const Anri& current, double new_reputation);
    static json revocation_preimage(const AgentId& id);

    const Bytes& ca_root() const { return ca_root_; }
    int pow_difficulty() const { return config_.pow_difficulty_bits; }
    std::int64_t now_ms() const { return clock_->now_ms(); }

    json snapshot() const;
    static Result<Registry> from_snapshot(const json& snap, ClockHandle clock);

private:
    bool is_live(const Anri& record) const {
        return record.metadata.registered_at + record.metadata.ttl_ms >= clock_->now_ms();
    }

    Bytes ca_root_;
    ClockHandle clock_;
    RegistryConfig config_;
    std::map<AgentId, Anri> records_;
    std::map<AgentId, TokenBucket> buckets_;
};

}  // namespace acnbp
