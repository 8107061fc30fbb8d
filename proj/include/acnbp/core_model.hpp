#pragma once

#include <compare>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "acnbp/canonical.hpp"
#include "acnbp/crypto.hpp"
#include "acnbp/errors.hpp"

namespace acnbp {

struct AgentId {
    std::string name;        // nonempty, <= 255 bytes
    std::string ns;          // dot-separated hierarchy, segments [a-z0-9_-]+

    auto operator<=>(const AgentId&) const = default;
    std::string display() const { return name; }
};

void to_json(json& j, const AgentId& v);
void from_json(const json& j, AgentId& v);
Status validate(const AgentId& v);

// Capability semantics as a hierarchical tag path, most general tag first.
struct OntologyPath {
    std::vector<std::string> segments;  // 1..8, each nonempty lowercase tag

    bool operator==(const OntologyPath&) const = default;
    size_t size() const { return segments.size(); }
};

void to_json(json& j, const OntologyPath& v);
void from_json(const json& j, OntologyPath& v);
Status validate(const OntologyPath& v);

enum class EncryptionLevel : int { None = 0, Basic = 1, Advanced = 2 };

struct SecurityProfile {
    EncryptionLevel encryption_level = EncryptionLevel::None;
    std::set<std::string> certifications;
    bool signing_required = false;

    bool operator==(const SecurityProfile&) const = default;
};

void to_json(json& j, const SecurityProfile& v);
void from_json(const json& j, SecurityProfile& v);
Status validate(const SecurityProfile& v);

struct ParamSlot {
    std::string name;
    std::string type;  // semantic-type tag

    bool operator==(const ParamSlot&) const = default;
};

void to_json(json& j, const ParamSlot& v);
void from_json(const json& j, ParamSlot& v);

struct CapabilitySpec {
    OntologyPath desc;
    std::vector<ParamSlot> input;
    std::vector<ParamSlot> output;
    std::map<std::string, double> constraints;  // nonnegative scalars
    SecurityProfile security;

    bool operator==(const CapabilitySpec&) const = default;
};

void to_json(json& j, const CapabilitySpec& v);
void from_json(const json& j, CapabilitySpec& v);
Status validate(const CapabilitySpec& v);

struct CapabilityQuery {
    OntologyPath required;
    std::map<std::string, double> constraints;  // bounds, per-key semantics
    SecurityProfile security_reqs;              // minimum acceptable

    // Discovery variant with the security floor dropped, so screening can
    // apply (and report) the security gate itself.
    CapabilityQuery relaxed_for_discovery() const {
        CapabilityQuery q = *this;
        q.security_reqs = SecurityProfile{};
        return q;
    }
};

void to_json(json& j, const CapabilityQuery& v);
void from_json(const json& j, CapabilityQuery& v);
Status validate(const CapabilityQuery& v);

struct Version {
    int major = 0;
    int minor = 0;
    int patch = 0;

    auto operator<=>(const Version&) const = default;
    std::string str() const;
    static Result<Version> parse(std::string_view s);
};

void to_json(json& j, const Version& v);
void from_json(const json& j, Version& v);

struct ProtocolExtension {
    Version version;
    std::set<std::string> extensions;
    Version compatibility;  // minimum supported, <= version

    bool operator==(const ProtocolExtension&) const = default;
};

void to_json(json& j, const ProtocolExtension& v);
void from_json(const json& j, ProtocolExtension& v);
Status validate(const ProtocolExtension& v);

struct NegotiatedExtension {
    Version version;
    std::set<std::string> extensions;

    bool operator==(const NegotiatedExtension&) const = default;
};

void to_json(json& j, const NegotiatedExtension& v);
void from_json(const json& j, NegotiatedExtension& v);

// One-level CA -> agent certificate binding an agent key, with the agent's
// attested certification strings.
struct Certificate {
    AgentId subject;
    Bytes public_key;
    std::set<std::string> certifications;
    std::int64_t issued_at_ms = 0;
    Bytes ca_signature;

    json preimage_json() const;
    bool operator==(const Certificate&) const = default;
};

void to_json(json& j, const Certificate& v);
void from_json(const json& j, Certificate& v);

Certificate issue_certificate(const crypto::KeyPair& ca, AgentId subject, Bytes subject_key,
                              std::set<std::string> certifications, std::int64_t issued_at_ms);
bool verify_certificate(const Certificate& cert, std::span<const std::uint8_t> ca_root);

struct AnriMetadata {
    std::optional<double> reputation;     // in [0,1]; missing -> 0.5 at use sites
    std::optional<double> cost_per_unit;  // nonnegative
    std::int64_t registered_at = 0;       // virtual-clock ms
    std::int64_t ttl_ms = 0;              // > 0
    std::optional<double> risk;           // in [0,1]

    double reputation_or_default() const { return reputation.value_or(0.5); }
    bool operator==(const AnriMetadata&) const = default;
};

void to_json(json& j, const AnriMetadata& v);
void from_json(const json& j, AnriMetadata& v);

struct AnriSecurity {
    Bytes public_key;
    Certificate cert;

    bool operator==(const AnriSecurity&) const = default;
};

void to_json(json& j, const AnriSecurity& v);
void from_json(const json& j, AnriSecurity& v);

// Agent Name Resolution Item: the signed registry record.
struct Anri {
    AgentId id;
    std::vector<CapabilitySpec> capabilities;
    std::string location;  // simulated-bus address
    AnriSecurity security;
    AnriMetadata metadata;
    Bytes signature;  // over canonical encoding of all other fields

    json preimage_json() const;
    bool operator==(const Anri&) const = default;
};

void to_json(json& j, const Anri& v);
void from_json(const json& j, Anri& v);

// Structural invariants only (no crypto): capabilities nonempty + valid, ttl > 0.
Status validate_structure(const Anri& v);

Anri sign_anri(Anri record, const crypto::KeyPair& agent_keys);

// Self-signature over the canonical preimage under the embedded key, plus
// certificate chain to ca_root and cert->key/id binding. Callers can run
// this independently on query results.
bool verify_anri(const Anri& anri, std::span<const std::uint8_t> ca_root);

struct MatchResult {
    bool matched = false;
    double similarity = 0.0;  // in [0,1]
};

// similarity = |shared prefix| / max(|required|, |desc|).
double prefix_similarity(const OntologyPath& a, const OntologyPath& b);

// matched iff required is a prefix of desc, every query constraint bound is
// satisfied, and cap.security dominates query.security_reqs.
MatchResult match_capability(const CapabilityQuery& query, const CapabilitySpec& cap);

// Per-key bound semantics: max_*/deadline_* require cap <= bound, min_*
// require cap >= bound, anything else requires equality. A constraint the
// capability does not advertise is unsatisfied.
bool constraints_satisfied(const std::map<std::string, double>& bounds,
                           const std::map<std::string, double>& offered);

bool security_dominates(const SecurityProfile& offered, const SecurityProfile& required);

Result<NegotiatedExtension> negotiate_extension(const ProtocolExtension& mine,
                                                const ProtocolExtension& theirs);

}  // namespace acnbp
