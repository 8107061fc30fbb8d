#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "acnbp/negotiation.hpp"
#include "support/world.hpp"

using namespace acnbp;
using testworld::World;

namespace {

ProviderEngine* provider_named(World& w, const std::string& name) {
    for (auto& p : w.providers) {
        if (p->id().name == name) return p.get();
    }
    return nullptr;
}

}  // namespace

TEST_CASE("full run: discovery through DCU commits with TranslatorC_Gov") {
    World w;
    testworld::build_translation_world(w);
    w.start();

    const RequesterState& rs = w.requester->state();
    CHECK(rs.phase == RequesterPhase::FINALIZED);
    REQUIRE(rs.decision.has_value());
    CHECK(*rs.decision == "commit");
    REQUIRE(rs.selected.has_value());
    CHECK(rs.selected->name == "TranslatorC_Gov");

    // ranked shortlist per the cohort fixture
    REQUIRE(rs.shortlist.size() == 3);
    CHECK(rs.shortlist[0].name == "TranslatorC_Gov");
    CHECK(rs.shortlist[1].name == "TranslatorA_Corp");
    CHECK(rs.shortlist[2].name == "TranslatorB_Fast");

    // dual-signed commitment, byte-identical at both parties
    auto* gov = provider_named(w, "TranslatorC_Gov");
    REQUIRE(rs.binding.has_value());
    REQUIRE(gov->state().commitment.has_value());
    CHECK(canonical::encode(json(*rs.binding)) == canonical::encode(json(*gov->state().commitment)));
    CHECK(verify_commitment(*rs.binding, w.requester->public_key(), gov->public_key()));

    CHECK(gov->state().phase == ProviderPhase::DONE);
    CHECK(provider_named(w, "TranslatorA_Corp")->state().phase == ProviderPhase::REJECTED);
    CHECK(provider_named(w, "TranslatorB_Fast")->state().phase == ProviderPhase::REJECTED);
    CHECK(provider_named(w, "TranslatorD_Basic")->state().phase == ProviderPhase::REGISTERED);

    // reputation moved 0.9 -> 0.92 through the DCU path
    auto rec = w.registry.lookup(gov->id());
    REQUIRE(rec.has_value());
    CHECK(rec->metadata.reputation.value() == doctest::Approx(0.92).epsilon(1e-12));
    CHECK(verify_anri(*rec, w.ca.public_key));

    CHECK(w.requester->ssa_accepts_emitted() == 1);
    CHECK(w.requester->bindings_stored() == 1);

    // every recorded transition is in the published tables
    CHECK(testworld::transitions_legal(w.requester->transitions(), TransitionTable::requester()));
    for (auto& p : w.providers) {
        CHECK(testworld::transitions_legal(p->transitions(), TransitionTable::provider()));
    }

    // audit chains verify at all parties
    CHECK(w.requester->audit().verify().ok);
    for (auto& p : w.providers) CHECK(p->audit().verify().ok);
}

TEST_CASE("transcript chain recomputes to the stored head") {
    World w;
    testworld::build_translation_world(w);
    w.start();
    const RequesterState& rs = w.requester->state();
    Hash32 head = kZeroHash;
    for (const Hash32& h : rs.transcript) head = crypto::hash_chain_step(head, h);
    CHECK(head == rs.transcript_head);
    CHECK_FALSE(rs.transcript.empty());
}

TEST_CASE("three sessions produce one accept and two rejects; degenerate shortlist one accept") {
    World w;
    testworld::build_translation_world(w);
    int accepts = 0, rejects = 0;
    w.tamper = [&](SignedEnvelope& env) {
        if (env.msg_type == MsgType::SSA_ACCEPT) ++accepts;
        if (env.msg_type == MsgType::SSA_REJECT) ++rejects;
        return true;
    };
    w.start();
    CHECK(accepts == 1);
    CHECK(rejects == 2);

    World w1;
    auto cohort = fixtures::translator_cohort();
    w1.add_provider(cohort[2], testworld::offer_config(20, 0.95), testworld::translation_skill(0.98));
    RequesterConfig cfg;
    cfg.query = fixtures::legal_translation_query();
    cfg.exec_input = fixtures::legal_document_payload();
    w1.make_requester(std::move(cfg));
    int accepts1 = 0, rejects1 = 0;
    w1.tamper = [&](SignedEnvelope& env) {
        if (env.msg_type == MsgType::SSA_ACCEPT) ++accepts1;
        if (env.msg_type == MsgType::SSA_REJECT) ++rejects1;
        return true;
    };
    w1.start();
    CHECK(accepts1 == 1);
    CHECK(rejects1 == 0);
    CHECK(w1.requester->state().decision.value() == "commit");
}

TEST_CASE("messages out of phase are rejected without transitions") {
    World w;
    testworld::build_translation_world(w);
    auto* gov = provider_named(w, "TranslatorC_Gov");

    // an unsolicited SSO to a requester still in INIT
    auto fake = make_envelope(fixtures::translator_cohort()[2].keys, gov->id(),
                              w.requester->id(), Bytes(kSessionIdSize, 1), MsgType::SSO,
                              json{{"x", 1}}, Bytes(kNonceSize, 2), 0, 1);
    auto out = w.requester->on_envelope(fake, 0);
    CHECK_FALSE(out.accepted);
    CHECK(w.requester->state().phase == RequesterPhase::INIT);
    CHECK(w.requester->transitions().empty());
}

TEST_CASE("replayed SSR is rejected by nonce with no provider state change") {
    World w;
    testworld::build_translation_world(w);
    SignedEnvelope captured_ssr;
    bool got = false;
    w.tamper = [&](SignedEnvelope& env) {
        if (!got && env.msg_type == MsgType::SSR &&
            env.recipient.name == "TranslatorC_Gov") {
            captured_ssr = env;
            got = true;
        }
        return true;
    };
    w.start();
    REQUIRE(got);
    auto* gov = provider_named(w, "TranslatorC_Gov");
    auto phase_before = gov->state().phase;
    size_t transitions_before = gov->transitions().size();
    auto out = gov->on_envelope(captured_ssr, w.clock->now_ms());
    CHECK_FALSE(out.accepted);
    CHECK(out.reject_reason.find("DuplicateNonce") != std::string::npos);
    CHECK(gov->state().phase == phase_before);
    CHECK(gov->transitions().size() == transitions_before);
}

TEST_CASE("disjoint version ranges produce a signed IncompatibleVersions rejection") {
    World w;
    auto cohort = fixtures::translator_cohort();
    ProviderConfig strict = testworld::offer_config(20, 0.95);
    strict.supported = ProtocolExtension{Version{2, 0, 0}, {}, Version{2, 0, 0}};
    w.add_provider(cohort[2], strict, testworld::translation_skill(0.98));
    RequesterConfig cfg;
    cfg.query = fixtures::legal_translation_query();
    cfg.supported = ProtocolExtension{Version{1, 5, 0}, {}, Version{1, 0, 0}};
    cfg.exec_input = fixtures::legal_document_payload();
    w.make_requester(std::move(cfg));
    w.start();

    const RequesterState& rs = w.requester->state();
    CHECK(rs.phase == RequesterPhase::FINALIZED);
    CHECK(rs.decision.value() == "abort");
    CHECK(rs.abort_reason == "IncompatibleVersions");
    auto* gov = provider_named(w, "TranslatorC_Gov");
    CHECK(gov->state().phase == ProviderPhase::REGISTERED);  // rejection keeps it available
}

TEST_CASE("both sides of an established session derive the same key") {
    World w;
    testworld::build_translation_world(w);
    w.start();
    auto* gov = provider_named(w, "TranslatorC_Gov");
    const auto& attempt = w.requester->state().sessions.at(gov->id());
    REQUIRE(attempt.stage == SessionAttempt::Stage::ESTABLISHED);
    REQUIRE(gov->state().session.has_value());
    CHECK(attempt.record.session_key == gov->state().session->session_key);
    CHECK(attempt.record.negotiated == gov->state().session->negotiated);
}

TEST_CASE("downgraded SSO version list is caught by the encrypted echo") {
    World w;
    testworld::build_translation_world(w, 1);  // only the top candidate
    auto keys_by_name = std::map<std::string, crypto::KeyPair>{};
    for (const auto& a : fixtures::translator_cohort()) keys_by_name[a.name] = a.keys;

    w.tamper = [&](SignedEnvelope& env) {
        if (env.msg_type != MsgType::SSO) return true;
        auto body = env.body_json().value();
        if (!body.contains("supported")) return true;
        // strip the newest version: pin the advertised ceiling to the floor
        body["supported"]["version"] = body["supported"]["compatibility"];
        env.body = canonical::encode_bytes(body);
        // mid-path signer: re-sign as the provider
        env.signature = crypto::sign(keys_by_name.at(env.sender.name), env.preimage());
        return true;
    };
    w.start();

    const RequesterState& rs = w.requester->state();
    CHECK(rs.phase == RequesterPhase::FINALIZED);
    CHECK(rs.decision.value() == "abort");
    const auto& attempt = rs.sessions.at(fixtures::agent_id("TranslatorC_Gov"));
    CHECK(attempt.stage == SessionAttempt::Stage::FAILED);
    CHECK(attempt.failure_reason == "DowngradeDetected");
    CHECK_FALSE(rs.binding.has_value());
}

TEST_CASE("downgrader without the signing key dies at signature verification") {
    World w;
    testworld::build_translation_world(w, 1);
    std::string observed_reject;
    w.tamper = [&](SignedEnvelope& env) {
        if (env.msg_type != MsgType::SSO) return true;
        auto body = env.body_json().value();
        if (!body.contains("supported")) return true;
        body["supported"]["version"] = body["supported"]["compatibility"];
        env.body = canonical::encode_bytes(body);  // cannot re-sign
        return true;
    };
    w.start();
    // the tampered SSO is rejected, the session times out, no binding forms
    CHECK_FALSE(w.requester->state().binding.has_value());
    w.advance_to(20000);
    CHECK(w.requester->state().phase == RequesterPhase::FINALIZED);
    CHECK(w.requester->state().decision.value() == "abort");
}

TEST_CASE("tampered SSE_CONFIRM fails key confirmation") {
    World w;
    testworld::build_translation_world(w, 1);
    auto keys_by_name = std::map<std::string, crypto::KeyPair>{};
    for (const auto& a : fixtures::translator_cohort()) keys_by_name[a.name] = a.keys;
    w.tamper = [&](SignedEnvelope& env) {
        if (env.msg_type != MsgType::SSE_CONFIRM) return true;
        auto body = env.body_json().value();
        std::string ct = body["sealed"]["ct"].get<std::string>();
        ct[0] = ct[0] == 'a' ? 'b' : 'a';
        body["sealed"]["ct"] = ct;
        env.body = canonical::encode_bytes(body);
        env.signature = crypto::sign(keys_by_name.at(env.sender.name), env.preimage());
        return true;
    };
    w.start();
    const auto& attempt = w.requester->state().sessions.at(fixtures::agent_id("TranslatorC_Gov"));
    CHECK(attempt.stage == SessionAttempt::Stage::FAILED);
    CHECK(attempt.failure_reason == "KeyConfirmationFailed");
}

TEST_CASE("consistency check: translation offer passes; named dimension failures") {
    SessionRecord session;
    session.session_key = Bytes(32, 1);
    auto q = fixtures::legal_translation_query();
    CapabilitySpec offer = fixtures::translation_capability(
        {"translation", "legal", "en-fr"}, fixtures::advanced_security({"legal-certified",
                                                                        "gov-clearance"}), 20);
    Terms terms{2.0, 72000000, 0.95, 0.1};

    auto rep = consistency_check(q, offer, session, terms, 0);
    CHECK(rep.pass);
    CHECK(rep.failures.empty());

    SUBCASE("missing input slots fail the syntactic dimension") {
        CapabilitySpec bad = offer;
        bad.input.clear();
        auto r = consistency_check(q, bad, session, terms, 0);
        CHECK_FALSE(r.pass);
        REQUIRE(r.failures.size() == 1);
        CHECK(r.failures[0] == "syntactic");
    }
    SUBCASE("48h terms deadline against a 24h query bound fails temporally") {
        Terms late = terms;
        late.deadline_ms = 48 * 3600000;
        auto r = consistency_check(q, offer, session, late, 0);
        CHECK_FALSE(r.pass);
        REQUIRE(r.failures.size() == 1);
        CHECK(r.failures[0] == "temporal");
    }
    SUBCASE("weaker security fails the security dimension") {
        CapabilitySpec weak = offer;
        weak.security = SecurityProfile{EncryptionLevel::Basic, {}, false};
        auto r = consistency_check(q, weak, session, terms, 0);
        CHECK_FALSE(r.pass);
        CHECK(std::find(r.failures.begin(), r.failures.end(), "security") != r.failures.end());
    }
    SUBCASE("wrong ontology path fails semantically") {
        CapabilitySpec other = offer;
        other.desc = OntologyPath{{"ocr"}};
        auto r = consistency_check(q, other, session, terms, 0);
        CHECK_FALSE(r.pass);
        CHECK(std::find(r.failures.begin(), r.failures.end(), "semantic") != r.failures.end());
    }
    SUBCASE("constraint violation fails operationally") {
        CapabilitySpec slow = offer;
        slow.constraints["deadline_hours"] = 48.0;
        auto r = consistency_check(q, slow, session, terms, 0);
        CHECK_FALSE(r.pass);
        CHECK(std::find(r.failures.begin(), r.failures.end(), "operational") != r.failures.end());
    }
}

TEST_CASE("provider altering terms between SSA and BC triggers TermsMismatch abort") {
    World w;
    testworld::build_translation_world(w, 1);
    auto keys_by_name = std::map<std::string, crypto::KeyPair>{};
    for (const auto& a : fixtures::translator_cohort()) keys_by_name[a.name] = a.keys;
    auto* gov = provider_named(w, "TranslatorC_Gov");

    w.tamper = [&](SignedEnvelope& env) {
        if (env.msg_type != MsgType::BC) return true;
        // mid-path party with the session key raises the price in the BC
        const Bytes& key = gov->state().session->session_key;
        auto body = env.body_json().value();
        auto opened = open_payload(key, body["sealed"]).value();
        opened["commitment"]["terms"]["price"] = 99.0;
        body["sealed"] = seal_payload(key, opened, Bytes(kNonceSize, 7));
        env.body = canonical::encode_bytes(body);
        env.signature = crypto::sign(keys_by_name.at(env.sender.name), env.preimage());
        return true;
    };
    w.start();

    const RequesterState& rs = w.requester->state();
    CHECK(rs.decision.value() == "abort");
    CHECK(rs.abort_reason == "terms_mismatch");
    CHECK(w.requester->bindings_stored() == 0);
}

TEST_CASE("a commitment whose deadline already passed is rejected at confirm_bind") {
    World w;
    auto cohort = fixtures::translator_cohort();
    ProviderConfig expired = testworld::offer_config(20, 0.95);
    expired.offer_deadline_rel_ms = -1000;  // offers a deadline in the past
    w.add_provider(cohort[2], expired, testworld::translation_skill(0.98));
    RequesterConfig cfg;
    cfg.query = fixtures::legal_translation_query();
    cfg.exec_input = fixtures::legal_document_payload();
    w.make_requester(std::move(cfg));
    w.start();
    CHECK(w.requester->state().decision.value() == "abort");
    CHECK(w.requester->state().abort_reason == "deadline_expired");
    CHECK(w.requester->bindings_stored() == 0);
}

TEST_CASE("execution: fixture skill output is delivered and committed") {
    World w;
    testworld::build_translation_world(w);
    w.start();
    auto* gov = provider_named(w, "TranslatorC_Gov");
    CHECK(gov->state().phase == ProviderPhase::DONE);
    CHECK(w.requester->state().decision.value() == "commit");
}

TEST_CASE("payload missing a required slot never reaches the skill") {
    World w;
    auto cohort = fixtures::translator_cohort();
    int invocations = 0;
    w.add_provider(cohort[2], testworld::offer_config(20, 0.95),
                   [&invocations](const json& input) -> Result<ExecOutput> {
                       ++invocations;
                       return ExecOutput{json{{"translated", input.value("document", "")}}, 0.99};
                   });
    RequesterConfig cfg;
    cfg.query = fixtures::legal_translation_query();
    cfg.exec_input = json{{"document", "missing the language slots"}};
    w.make_requester(std::move(cfg));
    w.start();
    CHECK(invocations == 0);
    CHECK(w.requester->state().decision.value() == "abort");
    CHECK(w.requester->state().abort_reason == "slots");
}

TEST_CASE("skill failure surfaces as an execution abort") {
    World w;
    auto cohort = fixtures::translator_cohort();
    w.add_provider(cohort[2], testworld::offer_config(20, 0.95),
                   [](const json&) -> Result<ExecOutput> {
                       return Result<ExecOutput>::failure(Err::ExecutionFailure, "model crashed");
                   });
    RequesterConfig cfg;
    cfg.query = fixtures::legal_translation_query();
    cfg.exec_input = fixtures::legal_document_payload();
    w.make_requester(std::move(cfg));
    w.start();
    CHECK(w.requester->state().decision.value() == "abort");
    CHECK(w.requester->state().abort_reason == "execution");
}

TEST_CASE("decide: quality exactly at the minimum commits; below aborts with reason quality") {
    auto run_with_quality = [](double q) {
        World w;
        auto cohort = fixtures::translator_cohort();
        w.add_provider(cohort[2], testworld::offer_config(20, 0.95),
                       testworld::translation_skill(q));
        RequesterConfig cfg;
        cfg.query = fixtures::legal_translation_query();
        cfg.exec_input = fixtures::legal_document_payload();
        w.make_requester(std::move(cfg));
        w.start();
        return std::pair(w.requester->state().decision.value(),
                         w.requester->state().abort_reason);
    };
    CHECK(run_with_quality(0.95).first == "commit");  // inclusive threshold
    auto aborted = run_with_quality(0.90);
    CHECK(aborted.first == "abort");
    CHECK(aborted.second == "quality");
}

TEST_CASE("DCU arithmetic: EWMA from 0.5 and iteration") {
    CHECK(dcu_reputation(0.5, true) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(dcu_reputation(0.5, false) == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(dcu_reputation(dcu_reputation(0.5, true), true) == doctest::Approx(0.68).epsilon(1e-12));
}

TEST_CASE("DCU against a deregistered provider: audit written, registry reports UnknownAgent") {
    World w;
    testworld::build_translation_world(w, 1);
    auto* gov = provider_named(w, "TranslatorC_Gov");
    auto gov_keys = fixtures::translator_cohort()[2].keys;
    // deregister mid-flight, right before the DCU lands
    w.tamper = [&](SignedEnvelope& env) {
        if (env.msg_type == MsgType::DCU) {
            Bytes revocation = crypto::sign(
                gov_keys, canonical::encode_bytes(Registry::revocation_preimage(gov->id())));
            REQUIRE(w.registry.revoke(gov->id(), revocation).ok());
        }
        return true;
    };
    w.start();
    CHECK(w.requester->state().decision.value() == "commit");
    bool saw_dcu = false;
    for (const auto& rec : gov->audit().records()) {
        if (rec.event == "dcu") saw_dcu = true;
    }
    CHECK(saw_dcu);
    CHECK(gov->audit().verify().ok);
    CHECK_FALSE(w.registry.lookup(gov->id()).has_value());
}

TEST_CASE("published transition tables match the data files") {
    auto load = [](const char* name) {
        std::ifstream in(std::filesystem::path(ACNBP_SOURCE_DIR) / "data" / name);
        REQUIRE(in.good());
        json j = json::parse(in);
        auto t = TransitionTable::from_json(j);
        REQUIRE(t.ok());
        return *t;
    };
    CHECK(load("requester_transitions.json") == TransitionTable::requester());
    CHECK(load("provider_transitions.json") == TransitionTable::provider());
}

TEST_CASE("property: random message sequences never leave the transition tables") {
    DetRng rng(77, "fsm-fuzz");
    auto cohort = fixtures::translator_cohort();
    for (int round = 0; round < 60; ++round) {
        World w;
        testworld::build_translation_world(w);
        // run the honest flow partway (randomly truncated) first
        int budget = static_cast<int>(rng.next_in(0, 24));
        w.tamper = [&](SignedEnvelope&) { return budget-- > 0; };
        w.start();
        w.tamper = nullptr;

        // then inject random junk from a registered-but-chaotic peer
        auto chaos_keys = cohort[static_cast<size_t>(rng.next_in(0, 3))].keys;
        for (int i = 0; i < 12; ++i) {
            MsgType t = static_cast<MsgType>(rng.next_in(0, 13));
            AgentId sender = cohort[static_cast<size_t>(rng.next_in(0, 3))].anri.id;
            AgentId target = rng.next_bernoulli(0.5)
                                 ? w.requester->id()
                                 : w.providers[static_cast<size_t>(rng.next_in(0, 3))]->id();
            json body = rng.next_bernoulli(0.5)
                            ? json{{"sealed", json{{"ct", "00"}, {"iv", "00"}, {"mac", "00"}}}}
                            : json{{"junk", static_cast<std::int64_t>(rng.next_u64() % 1000)}};
            auto env = make_envelope(chaos_keys, sender, target, rng.next_bytes(kSessionIdSize), t,
                                     body, rng.next_bytes(kNonceSize), w.clock->now_ms(),
                                     rng.next_u64() % 1000);
            auto it = w.agents.find(target);
            if (it != w.agents.end()) {
                w.dispatch(target, it->second->on_envelope(env, w.clock->now_ms()));
            }
            w.pump();
        }
        w.advance_to(w.clock->now_ms() + 60000);  // let timers resolve stragglers

        CHECK(testworld::transitions_legal(w.requester->transitions(), TransitionTable::requester()));
        for (auto& p : w.providers) {
            CHECK(testworld::transitions_legal(p->transitions(), TransitionTable::provider()));
        }
        CHECK(w.requester->ssa_accepts_emitted() <= 1);
        CHECK(w.requester->bindings_stored() <= 1);
    }
}

TEST_CASE("total message loss times out to an abort with no binding") {
    World w;
    testworld::build_translation_world(w);
    w.tamper = [](SignedEnvelope&) { return false; };  // drop everything
    w.start();
    w.advance_to(120000);
    CHECK(w.requester->state().phase == RequesterPhase::FINALIZED);
    CHECK(w.requester->state().decision.value() == "abort");
    CHECK_FALSE(w.requester->state().binding.has_value());
    for (auto& p : w.providers) {
        CHECK(p->state().phase == ProviderPhase::REGISTERED);
    }
}
