#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "acnbp/core_model.hpp"
#include "acnbp/rng.hpp"
#include "support/fixtures.hpp"

using namespace acnbp;

namespace {

SecurityProfile random_profile(DetRng& rng) {
    static const std::vector<std::string> pool = {"legal-certified", "gov-clearance", "iso27001",
                                                  "hipaa"};
    SecurityProfile p;
    p.encryption_level = static_cast<EncryptionLevel>(rng.next_in(0, 2));
    for (const auto& c : pool) {
        if (rng.next_bernoulli(0.4)) p.certifications.insert(c);
    }
    p.signing_required = rng.next_bernoulli(0.5);
    return p;
}

SecurityProfile relax(const SecurityProfile& p, DetRng& rng) {
    SecurityProfile out = p;
    if (rng.next_bernoulli(0.5) && static_cast<int>(out.encryption_level) > 0) {
        out.encryption_level = static_cast<EncryptionLevel>(rng.next_in(0, static_cast<int>(out.encryption_level)));
    }
    std::set<std::string> kept;
    for (const auto& c : out.certifications) {
        if (rng.next_bernoulli(0.7)) kept.insert(c);
    }
    out.certifications = std::move(kept);
    if (out.signing_required && rng.next_bernoulli(0.5)) out.signing_required = false;
    return out;
}

OntologyPath random_path(DetRng& rng, int max_len = 4) {
    static const std::vector<std::string> tags = {"translation", "legal", "en-fr", "express",
                                                  "summarize", "ocr"};
    OntologyPath p;
    auto n = rng.next_in(1, max_len);
    for (std::int64_t i = 0; i < n; ++i) {
        p.segments.push_back(tags[static_cast<size_t>(rng.next_in(0, static_cast<std::int64_t>(tags.size()) - 1))]);
    }
    return p;
}

}  // namespace

TEST_CASE("match: query path that prefixes the capability matches with prefix ratio") {
    CapabilityQuery q;
    q.required = OntologyPath{{"translation", "legal"}};
    CapabilitySpec cap = fixtures::translation_capability(
        {"translation", "legal", "en-fr"}, SecurityProfile{}, 24);
    auto r = match_capability(q, cap);
    CHECK(r.matched);
    CHECK(r.similarity == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("match: identical single-segment paths with equal security give similarity 1") {
    CapabilityQuery q;
    q.required = OntologyPath{{"translation"}};
    CapabilitySpec cap;
    cap.desc = OntologyPath{{"translation"}};
    auto r = match_capability(q, cap);
    CHECK(r.matched);
    CHECK(r.similarity == doctest::Approx(1.0));
}

TEST_CASE("match: no-encryption profile fails a query requiring advanced encryption") {
    auto agents = fixtures::translator_cohort();
    const CapabilitySpec& d_cap = agents[3].anri.capabilities[0];  // TranslatorD_Basic
    REQUIRE(d_cap.security.encryption_level == EncryptionLevel::None);
    auto q = fixtures::legal_translation_query();
    REQUIRE(q.security_reqs.encryption_level == EncryptionLevel::Advanced);
    CHECK_FALSE(match_capability(q, d_cap).matched);
}

TEST_CASE("match: missing capability constraint leaves the bound unsatisfied") {
    CapabilityQuery q;
    q.required = OntologyPath{{"translation"}};
    q.constraints = {{"max_latency_ms", 100.0}};
    CapabilitySpec cap;
    cap.desc = OntologyPath{{"translation"}};
    CHECK_FALSE(match_capability(q, cap).matched);
    cap.constraints["max_latency_ms"] = 50.0;
    CHECK(match_capability(q, cap).matched);
    cap.constraints["max_latency_ms"] = 150.0;
    CHECK_FALSE(match_capability(q, cap).matched);
}

TEST_CASE("constraint key semantics: max_/min_/deadline_ prefixes and exact-match fallback") {
    std::map<std::string, double> offered = {
        {"max_latency_ms", 80.0}, {"min_quality", 0.9}, {"deadline_hours", 12.0}, {"batch", 4.0}};
    CHECK(constraints_satisfied({{"max_latency_ms", 100.0}}, offered));
    CHECK_FALSE(constraints_satisfied({{"min_quality", 0.95}}, offered));
    CHECK(constraints_satisfied({{"min_quality", 0.85}}, offered));
    CHECK(constraints_satisfied({{"deadline_hours", 24.0}}, offered));
    CHECK_FALSE(constraints_satisfied({{"deadline_hours", 6.0}}, offered));
    CHECK(constraints_satisfied({{"batch", 4.0}}, offered));
    CHECK_FALSE(constraints_satisfied({{"batch", 5.0}}, offered));
}

TEST_CASE("security_dominates: worked examples") {
    SecurityProfile offered{EncryptionLevel::Advanced, {"gov-clearance", "legal-certified"}, true};
    SecurityProfile required{EncryptionLevel::Advanced, {"legal-certified"}, true};
    CHECK(security_dominates(offered, required));
    CHECK(security_dominates(required, required));
    SecurityProfile weak{EncryptionLevel::Basic, {}, false};
    SecurityProfile strong{EncryptionLevel::Advanced, {}, true};
    CHECK_FALSE(security_dominates(weak, strong));
}

TEST_CASE("property: security_dominates is a partial order") {
    DetRng rng(21, "sec-order");
    for (int i = 0; i < 300; ++i) {
        auto a = random_profile(rng);
        auto b = random_profile(rng);
        auto c = random_profile(rng);
        CHECK(security_dominates(a, a));  // reflexive
        if (security_dominates(a, b) && security_dominates(b, a)) {
            CHECK(a == b);  // antisymmetric on canonical profiles
        }
        if (security_dominates(a, b) && security_dominates(b, c)) {
            CHECK(security_dominates(a, c));  // transitive
        }
    }
}

TEST_CASE("property: relaxing the query security floor never un-matches") {
    DetRng rng(22, "sec-monotone");
    for (int i = 0; i < 300; ++i) {
        CapabilityQuery q;
        q.required = random_path(rng, 2);
        q.security_reqs = random_profile(rng);
        CapabilitySpec cap;
        cap.desc = random_path(rng, 4);
        cap.security = random_profile(rng);
        if (!match_capability(q, cap).matched) continue;
        CapabilityQuery relaxed = q;
        relaxed.security_reqs = relax(q.security_reqs, rng);
        CHECK(match_capability(relaxed, cap).matched);
    }
}

TEST_CASE("property: prefix similarity is symmetric") {
    DetRng rng(23, "sim-symmetric");
    for (int i = 0; i < 300; ++i) {
        auto a = random_path(rng);
        auto b = random_path(rng);
        CHECK(prefix_similarity(a, b) == prefix_similarity(b, a));
    }
    CHECK(prefix_similarity(OntologyPath{{"ocr"}}, OntologyPath{{"translation", "legal"}}) == 0.0);
}

TEST_CASE("negotiate_extension: worked examples") {
    ProtocolExtension mine{Version{1, 2, 0}, {"batch", "streaming"}, Version{1, 0, 0}};
    ProtocolExtension theirs{Version{1, 1, 0}, {"streaming", "compress"}, Version{1, 0, 0}};
    auto r = negotiate_extension(mine, theirs);
    REQUIRE(r.ok());
    CHECK(r->version == Version{1, 1, 0});
    CHECK(r->extensions == std::set<std::string>{"streaming"});

    ProtocolExtension same{Version{1, 0, 0}, {"batch"}, Version{1, 0, 0}};
    auto rr = negotiate_extension(same, same);
    REQUIRE(rr.ok());
    CHECK(rr->version == Version{1, 0, 0});
    CHECK(rr->extensions == same.extensions);

    ProtocolExtension strict{Version{2, 0, 0}, {}, Version{2, 0, 0}};
    ProtocolExtension older{Version{1, 5, 0}, {}, Version{1, 0, 0}};
    auto bad = negotiate_extension(strict, older);
    REQUIRE_FALSE(bad.ok());
    CHECK(bad.code() == Err::IncompatibleVersions);
}

TEST_CASE("property: negotiated version is commutative") {
    DetRng rng(24, "ext-commute");
    for (int i = 0; i < 300; ++i) {
        auto mk = [&]() {
            Version compat{static_cast<int>(rng.next_in(1, 2)), static_cast<int>(rng.next_in(0, 3)), 0};
            Version ver = compat;
            ver.minor += static_cast<int>(rng.next_in(0, 3));
            return ProtocolExtension{ver, {}, compat};
        };
        auto a = mk();
        auto b = mk();
        auto ab = negotiate_extension(a, b);
        auto ba = negotiate_extension(b, a);
        CHECK(ab.ok() == ba.ok());
        if (ab.ok()) CHECK(ab->version == ba->version);
    }
}

TEST_CASE("validation: agent ids, ontology paths, extensions") {
    CHECK(validate(AgentId{"Ok_Agent", "agents.translation"}).ok());
    CHECK_FALSE(validate(AgentId{"", "agents"}).ok());
    CHECK_FALSE(validate(AgentId{"x", "agents.Upper"}).ok());
    CHECK_FALSE(validate(AgentId{std::string(256, 'a'), "agents"}).ok());
    CHECK_FALSE(validate(OntologyPath{{}}).ok());
    CHECK_FALSE(validate(OntologyPath{{"a", "b", "c", "d", "e", "f", "g", "h", "i"}}).ok());
    CHECK_FALSE(validate(ProtocolExtension{Version{1, 0, 0}, {}, Version{1, 1, 0}}).ok());
}

TEST_CASE("anri signing and verification; certificates pin subject and key") {
    auto agents = fixtures::translator_cohort();
    auto ca = fixtures::ca_keys();
    for (const auto& a : agents) {
        CHECK(verify_anri(a.anri, ca.public_key));
    }
    // mutate one metadata value post-signing
    Anri tampered = agents[0].anri;
    tampered.metadata.cost_per_unit = 0.01;
    CHECK_FALSE(verify_anri(tampered, ca.public_key));
    // valid self-signature but foreign CA
    auto foreign_ca = crypto::keypair_from_label("foreign-ca");
    CHECK_FALSE(verify_anri(agents[0].anri, foreign_ca.public_key));
    // structural invariants
    Anri no_caps = agents[0].anri;
    no_caps.capabilities.clear();
    CHECK(validate_structure(no_caps).code() == Err::CapabilityValidationError);
    Anri bad_ttl = agents[0].anri;
    bad_ttl.metadata.ttl_ms = 0;
    CHECK(validate_structure(bad_ttl).code() == Err::CapabilityValidationError);
}
