#include "acnbp/audit.hpp"

#include <fstream>

#include "acnbp/crypto.hpp"

namespace acnbp {

json AuditRecord::content_json() const {
    return json{{"actor", actor},
                {"body", hex_encode(body)},
                {"event", event},
                {"index", index},
                {"time_ms", time_ms}};
}

void to_json(json& j, const AuditRecord& v) {
    j = v.content_json();
    j["prev_hash"] = hex_encode(v.prev_hash);
    j["hash"] = hex_encode(v.hash);
}

void from_json(const json& j, AuditRecord& v) {
    j.at("index").get_to(v.index);
    j.at("time_ms").get_to(v.time_ms);
    j.at("actor").get_to(v.actor);
    j.at("event").get_to(v.event);
    v.body = hex_decode(j.at("body").get<std::string>());
    v.prev_hash = to_hash32(hex_decode(j.at("prev_hash").get<std::string>()));
    v.hash = to_hash32(hex_decode(j.at("hash").get<std::string>()));
}

const AuditRecord& AuditLog::append(std::int64_t time_ms, const AgentId& actor, std::string event,
                                    Bytes body) {
    AuditRecord rec;
    rec.index = records_.size();
    rec.time_ms = time_ms;
    rec.actor = actor;
    rec.event = std::move(event);
    rec.body = std::move(body);
    rec.prev_hash = head();
    rec.hash = crypto::hash_chain_step(rec.prev_hash, canonical::encode_bytes(rec.content_json()));
    records_.push_back(std::move(rec));
    return records_.back();
}

ChainCheck AuditLog::verify_chain(std::span<const AuditRecord> records) {
    Hash32 prev = kZeroHash;
    for (size_t i = 0; i < records.size(); ++i) {
        const AuditRecord& rec = records[i];
        if (rec.index != i || rec.prev_hash != prev) return {false, i};
        Hash32 expect = crypto::hash_chain_step(prev, canonical::encode_bytes(rec.content_json()));
        if (rec.hash != expect) return {false, i};
        prev = rec.hash;
    }
    return {true, 0};
}

void AuditLog::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open audit file for write: " + path.string());
    for (const AuditRecord& rec : records_) {
        std::string bytes = canonical::encode(json(rec));
        std::uint32_t len = static_cast<std::uint32_t>(bytes.size());
        char hdr[4] = {static_cast<char>(len >> 24), static_cast<char>(len >> 16),
                       static_cast<char>(len >> 8), static_cast<char>(len)};
        out.write(hdr, 4);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
}

Result<AuditLog> AuditLog::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return Result<AuditLog>::failure(Err::ParseError, "cannot open " + path.string());
    AuditLog log;
    while (true) {
        char hdr[4];
        in.read(hdr, 4);
        if (in.gcount() == 0) break;
        if (in.gcount() != 4) return Result<AuditLog>::failure(Err::ParseError, "truncated header");
        std::uint32_t len = (static_cast<std::uint32_t>(static_cast<unsigned char>(hdr[0])) << 24) |
                            (static_cast<std::uint32_t>(static_cast<unsigned char>(hdr[1])) << 16) |
                            (static_cast<std::uint32_t>(static_cast<unsigned char>(hdr[2])) << 8) |
                            static_cast<std::uint32_t>(static_cast<unsigned char>(hdr[3]));
        std::string bytes(len, '\0');
        in.read(bytes.data(), len);
        if (static_cast<std::uint32_t>(in.gcount()) != len) {
            return Result<AuditLog>::failure(Err::ParseError, "truncated record");
        }
        auto parsed = canonical::parse(bytes);
        if (!parsed) return Result<AuditLog>::failure(Err::ParseError, "bad record encoding");
        try {
            log.records_.push_back(parsed->get<AuditRecord>());
        } catch (const std::exception& e) {
            return Result<AuditLog>::failure(Err::ParseError, e.what());
        }
    }
    return log;
}

}  // namespace acnbp
