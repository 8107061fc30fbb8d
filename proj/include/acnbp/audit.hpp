#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "acnbp/canonical.hpp"
#include "acnbp/core_model.hpp"

namespace acnbp {

struct AuditRecord {
    std::uint64_t index = 0;
    std::int64_t time_ms = 0;
    AgentId actor;
    std::string event;
    Bytes body;          // canonical bytes of the event payload
    Hash32 prev_hash{};  // 32 zero bytes for record 0
    Hash32 hash{};       // hash_chain_step(prev_hash, canonical fields)

    // The chained content: everything except prev_hash/hash.
    json content_json() const;
};

void to_json(json& j, const AuditRecord& v);
void from_json(const json& j, AuditRecord& v);

struct ChainCheck {
    bool ok = true;
    std::uint64_t first_bad_index = 0;  // meaningful when !ok
};

// Append-only hash-chained event log. Appends are not internally
// synchronized; verification may run on a copy.
class AuditLog {
public:
    const AuditRecord& append(std::int64_t time_ms, const AgentId& actor, std::string event,
                              Bytes body);
    const AuditRecord& append(std::int64_t time_ms, const AgentId& actor, std::string event,
                              const json& body) {
        return append(time_ms, actor, std::move(event), canonical::encode_bytes(body));
    }

    Hash32 head() const { return records_.empty() ? kZeroHash : records_.back().hash; }
    size_t size() const { return records_.size(); }
    const std::vector<AuditRecord>& records() const { return records_; }

    ChainCheck verify() const { return verify_chain(records_); }
    static ChainCheck verify_chain(std::span<const AuditRecord> records);

    // Length-prefixed canonical records (4-byte big-endian length + bytes).
    void save(const std::filesystem::path& path) const;
    static Result<AuditLog> load(const std::filesystem::path& path);

private:
    std::vector<AuditRecord> records_;
};

}  // namespace acnbp
