#pragma once

// Shared test fixtures: a four-translator registry cohort and the legal
// document query exercised throughout the suite.

#include <string>
#include <vector>

#include "acnbp/core_model.hpp"
#include "acnbp/crypto.hpp"
#include "acnbp/envelope.hpp"
#include "acnbp/negotiation.hpp"

namespace fixtures {

using namespace acnbp;

inline crypto::KeyPair ca_keys() { return crypto::keypair_from_label("test-ca"); }

inline AgentId agent_id(const std::string& name) { return AgentId{name, "agents.translation"}; }

inline CapabilitySpec translation_capability(std::vector<std::string> desc,
                                             SecurityProfile security, double deadline_hours,
                                             double max_latency_ms = 500) {
    CapabilitySpec cap;
    cap.desc = OntologyPath{std::move(desc)};
    cap.input = {{"document", "text/legal"}, {"source_lang", "lang-tag"}, {"target_lang", "lang-tag"}};
    cap.output = {{"translated", "text/legal"}};
    cap.constraints = {{"deadline_hours", deadline_hours}, {"max_latency_ms", max_latency_ms}};
    cap.security = std::move(security);
    return cap;
}

struct FixtureAgent {
    std::string name;
    crypto::KeyPair keys;
    Certificate cert;
    Anri anri;
};

inline FixtureAgent make_registered_agent(const std::string& name, CapabilitySpec cap,
                                          AnriMetadata metadata,
                                          const crypto::KeyPair& ca = ca_keys()) {
    FixtureAgent a;
    a.name = name;
    a.keys = crypto::keypair_from_label("agent-" + name);
    a.cert = issue_certificate(ca, agent_id(name), a.keys.public_key, cap.security.certifications, 0);
    Anri anri;
    anri.id = agent_id(name);
    anri.capabilities = {std::move(cap)};
    anri.location = "bus://" + name;
    anri.security = AnriSecurity{a.keys.public_key, a.cert};
    anri.metadata = std::move(metadata);
    a.anri = sign_anri(std::move(anri), a.keys);
    return a;
}

inline SecurityProfile advanced_security(std::set<std::string> certs) {
    return SecurityProfile{EncryptionLevel::Advanced, std::move(certs), true};
}

// The four candidate translators, attribute values chosen to encode the
// qualitative cohort descriptions (ranked C > A > B, D security-eliminated).
inline std::vector<FixtureAgent> translator_cohort() {
    std::vector<FixtureAgent> agents;
    agents.push_back(make_registered_agent(
        "TranslatorA_Corp",
        translation_capability({"translation", "legal", "en-fr"},
                               advanced_security({"legal-certified", "iso27001"}), 12),
        AnriMetadata{0.85, 5.0, 0, 86400000, {}}));
    agents.push_back(make_registered_agent(
        "TranslatorB_Fast",
        translation_capability({"translation", "legal", "en-fr", "express"},
                               advanced_security({"legal-certified"}), 2),
        AnriMetadata{0.68, 1.0, 0, 86400000, {}}));
    agents.push_back(make_registered_agent(
        "TranslatorC_Gov",
        translation_capability({"translation", "legal", "en-fr"},
                               advanced_security({"legal-certified", "gov-clearance"}), 20),
        AnriMetadata{0.9, 2.0, 0, 86400000, {}}));
    agents.push_back(make_registered_agent(
        "TranslatorD_Basic",
        translation_capability({"translation", "legal", "en-fr"},
                               SecurityProfile{EncryptionLevel::None, {}, false}, 24),
        AnriMetadata{0.6, 0.5, 0, 86400000, {}}));
    return agents;
}

// French legal translation with certified handling and a 24-hour deadline.
inline CapabilityQuery legal_translation_query() {
    CapabilityQuery q;
    q.required = OntologyPath{{"translation", "legal", "en-fr"}};
    q.constraints = {{"deadline_hours", 24.0}};
    q.security_reqs = advanced_security({"legal-certified"});
    return q;
}

inline json legal_document_payload() {
    return json{{"document", "Confidential contract: the parties agree."},
                {"source_lang", "en"},
                {"target_lang", "fr"}};
}

// Re-stamp the ANRI at `now` (the value the registration signature must
// cover) and sign it with the agent key.
inline Anri stamped_anri(const FixtureAgent& a, std::int64_t now_ms) {
    Anri record = a.anri;
    record.metadata.registered_at = now_ms;
    return sign_anri(std::move(record), a.keys);
}

}  // namespace fixtures

// Fixed-input fixtures pinning the wire format in golden files.
namespace fixtures {

inline SignedEnvelope golden_envelope() {
    auto keys = crypto::keypair_from_label("golden-sender");
    return make_envelope(keys, agent_id("GoldenSender"), agent_id("GoldenReceiver"),
                         Bytes(16, 0x01), MsgType::SSR,
                         json{{"supported", ProtocolExtension{}}}, Bytes(16, 0x02), 1000, 1);
}

inline BindingCommitment golden_commitment() {
    auto cohort = translator_cohort();
    auto req_keys = crypto::keypair_from_label("golden-requester");
    BindingCommitment bc;
    bc.requester = AgentId{"LegalBot_Prime", "agents.legal"};
    bc.provider = cohort[2].anri.id;
    bc.capability = cohort[2].anri.capabilities[0];
    bc.terms = Terms{2.0, 72000000, 0.95, 0.2};
    Bytes pre = canonical::encode_bytes(bc.preimage_json());
    bc.requester_signature = crypto::sign(req_keys, pre);
    bc.provider_signature = crypto::sign(cohort[2].keys, pre);
    return bc;
}

}  // namespace fixtures
