#include "acnbp/core_model.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <set>

namespace acnbp {

// ---------------------------------------------------------------- AgentId

void to_json(json& j, const AgentId& v) {
    j = json{{"name", v.name}, {"namespace", v.ns}};
}

void from_json(const json& j, AgentId& v) {
    j.at("name").get_to(v.name);
    j.at("namespace").get_to(v.ns);
}

static bool valid_ns_segment(std::string_view seg) {
    if (seg.empty()) return false;
    return std::all_of(seg.begin(), seg.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
    });
}

Status validate(const AgentId& v) {
    if (v.name.empty()) return Status::failure(Err::SchemaViolation, "agent name empty");
    if (v.name.size() > 255) return Status::failure(Err::SchemaViolation, "agent name over 255 bytes");
    std::string_view ns = v.ns;
    while (!ns.empty()) {
        size_t dot = ns.find('.');
        std::string_view seg = ns.substr(0, dot);
        if (!valid_ns_segment(seg)) {
            return Status::failure(Err::SchemaViolation, "bad namespace segment in '" + v.ns + "'");
        }
        if (dot == std::string_view::npos) break;
        ns.remove_prefix(dot + 1);
        if (ns.empty()) return Status::failure(Err::SchemaViolation, "trailing dot in namespace");
    }
    return ok_status();
}

// ----------------------------------------------------------- OntologyPath

void to_json(json& j, const OntologyPath& v) { j = v.segments; }
void from_json(const json& j, OntologyPath& v) { j.get_to(v.segments); }

Status validate(const OntologyPath& v) {
    if (v.segments.empty() || v.segments.size() > 8) {
        return Status::failure(Err::SchemaViolation, "ontology path needs 1..8 segments");
    }
    for (const auto& s : v.segments) {
        if (s.empty()) return Status::failure(Err::SchemaViolation, "empty ontology segment");
    }
    return ok_status();
}

// -------------------------------------------------------- SecurityProfile

void to_json(json& j, const SecurityProfile& v) {
    j = json{{"certifications", v.certifications},
             {"encryption_level", static_cast<int>(v.encryption_level)},
             {"signing_required", v.signing_required}};
}

void from_json(const json& j, SecurityProfile& v) {
    v.encryption_level = static_cast<EncryptionLevel>(j.at("encryption_level").get<int>());
    j.at("certifications").get_to(v.certifications);
    j.at("signing_required").get_to(v.signing_required);
}

Status validate(const SecurityProfile& v) {
    int lvl = static_cast<int>(v.encryption_level);
    if (lvl < 0 || lvl > 2) return Status::failure(Err::SchemaViolation, "encryption level not in {0,1,2}");
    return ok_status();
}

// -------------------------------------------------------------- ParamSlot

void to_json(json& j, const ParamSlot& v) { j = json{{"name", v.name}, {"type", v.type}}; }
void from_json(const json& j, ParamSlot& v) {
    j.at("name").get_to(v.name);
    j.at("type").get_to(v.type);
}

// --------------------------------------------------------- CapabilitySpec

void to_json(json& j, const CapabilitySpec& v) {
    j = json{{"constraints", v.constraints},
             {"desc", v.desc},
             {"input", v.input},
             {"output", v.output},
             {"security", v.security}};
}

void from_json(const json& j, CapabilitySpec& v) {
    j.at("desc").get_to(v.desc);
    j.at("input").get_to(v.input);
    j.at("output").get_to(v.output);
    j.at("constraints").get_to(v.constraints);
    j.at("security").get_to(v.security);
}

static Status validate_slots(const std::vector<ParamSlot>& slots, const char* which) {
    std::set<std::string> names;
    for (const auto& s : slots) {
        if (s.name.empty()) {
            return Status::failure(Err::SchemaViolation, std::string(which) + " slot with empty name");
        }
        if (!names.insert(s.name).second) {
            return Status::failure(Err::SchemaViolation,
                                   std::string(which) + " slot name duplicated: " + s.name);
        }
    }
    return ok_status();
}

Status validate(const CapabilitySpec& v) {
    if (auto s = validate(v.desc); !s) return s;
    if (auto s = validate_slots(v.input, "input"); !s) return s;
    if (auto s = validate_slots(v.output, "output"); !s) return s;
    for (const auto& [k, val] : v.constraints) {
        if (val < 0) return Status::failure(Err::SchemaViolation, "negative constraint " + k);
    }
    return validate(v.security);
}

// -------------------------------------------------------- CapabilityQuery

void to_json(json& j, const CapabilityQuery& v) {
    j = json{{"constraints", v.constraints},
             {"required", v.required},
             {"security_reqs", v.security_reqs}};
}

void from_json(const json& j, CapabilityQuery& v) {
    j.at("required").get_to(v.required);
    j.at("constraints").get_to(v.constraints);
    j.at("security_reqs").get_to(v.security_reqs);
}

Status validate(const CapabilityQuery& v) {
    if (v.required.segments.empty()) {
        return Status::failure(Err::SchemaViolation, "query required path empty");
    }
    if (auto s = validate(v.required); !s) return s;
    return validate(v.security_reqs);
}

// ---------------------------------------------------------------- Version

std::string Version::str() const {
    return std::to_string(major) + "." + std::to_string(minor) + "." + std::to_string(patch);
}

Result<Version> Version::parse(std::string_view s) {
    Version v;
    int* parts[3] = {&v.major, &v.minor, &v.patch};
    const char* p = s.data();
    const char* end = s.data() + s.size();
    for (int i = 0; i < 3; ++i) {
        auto [next, ec] = std::from_chars(p, end, *parts[i]);
        if (ec != std::errc{} || *parts[i] < 0) {
            return Result<Version>::failure(Err::ParseError, "bad version '" + std::string(s) + "'");
        }
        p = next;
        if (i < 2) {
            if (p == end || *p != '.') {
                return Result<Version>::failure(Err::ParseError, "bad version '" + std::string(s) + "'");
            }
            ++p;
        }
    }
    if (p != end) return Result<Version>::failure(Err::ParseError, "bad version '" + std::string(s) + "'");
    return v;
}

void to_json(json& j, const Version& v) { j = v.str(); }
void from_json(const json& j, Version& v) {
    auto r = Version::parse(j.get<std::string>());
    if (!r) throw DomainError(Err::ParseError, r.error().detail);
    v = *r;
}

// ------------------------------------------------------ ProtocolExtension

void to_json(json& j, const ProtocolExtension& v) {
    j = json{{"compatibility", v.compatibility},
             {"extensions", v.extensions},
             {"version", v.version}};
}

void from_json(const json& j, ProtocolExtension& v) {
    j.at("version").get_to(v.version);
    j.at("extensions").get_to(v.extensions);
    j.at("compatibility").get_to(v.compatibility);
}

Status validate(const ProtocolExtension& v) {
    if (v.version < v.compatibility) {
        return Status::failure(Err::SchemaViolation, "compatibility exceeds version");
    }
    return ok_status();
}

void to_json(json& j, const NegotiatedExtension& v) {
    j = json{{"extensions", v.extensions}, {"version", v.version}};
}

void from_json(const json& j, NegotiatedExtension& v) {
    j.at("version").get_to(v.version);
    j.at("extensions").get_to(v.extensions);
}

// ------------------------------------------------------------ Certificate

void to_json(json& j, const Certificate& v) {
    j = v.preimage_json();
    j["ca_signature"] = hex_encode(v.ca_signature);
}

void from_json(const json& j, Certificate& v) {
    j.at("subject").get_to(v.subject);
    v.public_key = hex_decode(j.at("public_key").get<std::string>());
    j.at("certifications").get_to(v.certifications);
    j.at("issued_at_ms").get_to(v.issued_at_ms);
    v.ca_signature = hex_decode(j.at("ca_signature").get<std::string>());
}

json Certificate::preimage_json() const {
    return json{{"certifications", certifications},
                {"issued_at_ms", issued_at_ms},
                {"public_key", hex_encode(public_key)},
                {"subject", subject}};
}

Certificate issue_certificate(const crypto::KeyPair& ca, AgentId subject, Bytes subject_key,
                              std::set<std::string> certifications, std::int64_t issued_at_ms) {
    Certificate cert{std::move(subject), std::move(subject_key), std::move(certifications),
                     issued_at_ms, {}};
    cert.ca_signature = crypto::sign(ca, canonical::encode_bytes(cert.preimage_json()));
    return cert;
}

bool verify_certificate(const Certificate& cert, std::span<const std::uint8_t> ca_root) {
    if (ca_root.size() != crypto::kKeySize) return false;
    if (cert.public_key.size() != crypto::kKeySize) return false;
    return crypto::verify(ca_root, canonical::encode_bytes(cert.preimage_json()),
                          cert.ca_signature);
}

// ------------------------------------------------------------------- ANRI

void to_json(json& j, const AnriMetadata& v) {
    j = json::object();
    if (v.reputation) j["reputation"] = *v.reputation;
    if (v.cost_per_unit) j["cost_per_unit"] = *v.cost_per_unit;
    j["registered_at"] = v.registered_at;
    j["ttl_ms"] = v.ttl_ms;
    if (v.risk) j["risk"] = *v.risk;
}

void from_json(const json& j, AnriMetadata& v) {
    v.reputation = j.contains("reputation") ? std::optional(j.at("reputation").get<double>())
                                            : std::nullopt;
    v.cost_per_unit = j.contains("cost_per_unit")
                          ? std::optional(j.at("cost_per_unit").get<double>())
                          : std::nullopt;
    j.at("registered_at").get_to(v.registered_at);
    j.at("ttl_ms").get_to(v.ttl_ms);
    v.risk = j.contains("risk") ? std::optional(j.at("risk").get<double>()) : std::nullopt;
}

void to_json(json& j, const AnriSecurity& v) {
    j = json{{"cert", v.cert}, {"public_key", hex_encode(v.public_key)}};
}

void from_json(const json& j, AnriSecurity& v) {
    v.public_key = hex_decode(j.at("public_key").get<std::string>());
    j.at("cert").get_to(v.cert);
}

json Anri::preimage_json() const {
    return json{{"capabilities", capabilities},
                {"id", id},
                {"location", location},
                {"metadata", metadata},
                {"security", security}};
}

void to_json(json& j, const Anri& v) {
    j = v.preimage_json();
    j["signature"] = hex_encode(v.signature);
}

void from_json(const json& j, Anri& v) {
    j.at("id").get_to(v.id);
    j.at("capabilities").get_to(v.capabilities);
    j.at("location").get_to(v.location);
    j.at("security").get_to(v.security);
    j.at("metadata").get_to(v.metadata);
    v.signature = hex_decode(j.at("signature").get<std::string>());
}

Status validate_structure(const Anri& v) {
    if (auto s = validate(v.id); !s) return s;
    if (v.capabilities.empty()) {
        return Status::failure(Err::CapabilityValidationError, "capabilities empty");
    }
    for (const auto& cap : v.capabilities) {
        if (auto s = validate(cap); !s) {
            return Status::failure(Err::CapabilityValidationError, s.error().detail);
        }
    }
    if (v.metadata.ttl_ms <= 0) {
        return Status::failure(Err::CapabilityValidationError, "ttl_ms must be positive");
    }
    return ok_status();
}

Anri sign_anri(Anri record, const crypto::KeyPair& agent_keys) {
    record.signature = crypto::sign(agent_keys, canonical::encode_bytes(record.preimage_json()));
    return record;
}

bool verify_anri(const Anri& anri, std::span<const std::uint8_t> ca_root) {
    if (anri.security.public_key.size() != crypto::kKeySize) return false;
    if (!crypto::verify(anri.security.public_key, canonical::encode_bytes(anri.preimage_json()),
                        anri.signature)) {
        return false;
    }
    const Certificate& cert = anri.security.cert;
    if (cert.subject != anri.id) return false;
    if (cert.public_key != anri.security.public_key) return false;
    return verify_certificate(cert, ca_root);
}

// --------------------------------------------------------------- matching

double prefix_similarity(const OntologyPath& a, const OntologyPath& b) {
    size_t shared = 0;
    size_t n = std::min(a.size(), b.size());
    while (shared < n && a.segments[shared] == b.segments[shared]) ++shared;
    if (shared == 0) return 0.0;
    return static_cast<double>(shared) / static_cast<double>(std::max(a.size(), b.size()));
}

bool constraints_satisfied(const std::map<std::string, double>& bounds,
                           const std::map<std::string, double>& offered) {
    for (const auto& [key, bound] : bounds) {
        auto it = offered.find(key);
        if (it == offered.end()) return false;
        double value = it->second;
        if (key.starts_with("max_") || key.starts_with("deadline_")) {
            if (value > bound) return false;
        } else if (key.starts_with("min_")) {
            if (value < bound) return false;
        } else {
            if (value != bound) return false;
        }
    }
    return true;
}

bool security_dominates(const SecurityProfile& offered, const SecurityProfile& required) {
    if (static_cast<int>(offered.encryption_level) < static_cast<int>(required.encryption_level)) {
        return false;
    }
    if (!std::includes(offered.certifications.begin(), offered.certifications.end(),
                       required.certifications.begin(), required.certifications.end())) {
        return false;
    }
    if (required.signing_required && !offered.signing_required) return false;
    return true;
}

MatchResult match_capability(const CapabilityQuery& query, const CapabilitySpec& cap) {
    bool prefix_ok = query.required.size() <= cap.desc.size() &&
                     std::equal(query.required.segments.begin(), query.required.segments.end(),
                                cap.desc.segments.begin());
    bool matched = prefix_ok && constraints_satisfied(query.constraints, cap.constraints) &&
                   security_dominates(cap.security, query.security_reqs);
    return MatchResult{matched, prefix_similarity(query.required, cap.desc)};
}

Result<NegotiatedExtension> negotiate_extension(const ProtocolExtension& mine,
                                                const ProtocolExtension& theirs) {
    if (!validate(mine) || !validate(theirs)) {
        return Result<NegotiatedExtension>::failure(Err::IncompatibleVersions,
                                                    "invalid extension descriptor");
    }
    // Highest v with both compatibility floors <= v <= both version ceilings.
    Version v = std::min(mine.version, theirs.version);
    if (v < mine.compatibility || v < theirs.compatibility) {
        return Result<NegotiatedExtension>::failure(
            Err::IncompatibleVersions,
            "no version in [" + std::max(mine.compatibility, theirs.compatibility).str() + ", " +
                v.str() + "]");
    }
    NegotiatedExtension out;
    out.version = v;
    std::set_intersection(mine.extensions.begin(), mine.extensions.end(),
                          theirs.extensions.begin(), theirs.extensions.end(),
                          std::inserter(out.extensions, out.extensions.begin()));
    return out;
}

}  // namespace acnbp
