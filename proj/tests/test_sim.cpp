#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "acnbp/scenario.hpp"

using namespace acnbp;

namespace {

Scenario load_bundled(const std::string& name) {
    auto path = std::filesystem::path(ACNBP_SOURCE_DIR) / "scenarios" / (name + ".scenario");
    ScenarioLoad loaded = load_scenario(path);
    REQUIRE_MESSAGE(loaded.ok(), loaded.violations_text());
    return *loaded.scenario;
}

std::vector<json> trace_records(const std::string& trace) {
    std::vector<json> out;
    std::stringstream ss(trace);
    std::string line;
    while (std::getline(ss, line)) {
        if (!line.empty()) out.push_back(json::parse(line));
    }
    return out;
}

}  // namespace

TEST_CASE("identical (seed, scenario) produce byte-identical traces; seeds diverge") {
    Scenario sc = load_bundled("translation");
    auto a = run_scenario(sc);
    auto b = run_scenario(sc);
    CHECK(a.trace == b.trace);
    CHECK(canonical::encode(a.report) == canonical::encode(b.report));

    RunOverrides other;
    other.seed = 1234;
    auto c = run_scenario(sc, other);
    CHECK(a.trace != c.trace);
}

TEST_CASE("total loss: requester times out to an abort, no binding exists") {
    Scenario sc = load_bundled("translation");
    sc.sim.default_link.drop_prob = 1.0;
    RunOverrides ov;
    ov.check_expected = false;
    auto out = run_scenario(sc, ov);
    CHECK(out.report["requester_phase"] == "FINALIZED");
    CHECK(out.report["decision"] == "abort");
    CHECK(out.report["binding"].is_null());
    for (const auto& [name, phase] : out.report["terminal_phases"].items()) {
        if (name != "LegalBot_Prime") CHECK(phase == "REGISTERED");
    }
    CHECK(out.report["stats"]["delivered"] == 0);
}

TEST_CASE("causality and per-link FIFO under fixed latency") {
    Scenario sc = load_bundled("translation");
    sc.sim.default_link.latency_min_ms = 25;
    sc.sim.default_link.latency_max_ms = 25;
    auto out = run_scenario(sc);
    REQUIRE(out.exit_code == 0);
    // per (link, session): delivered sequence numbers strictly increase
    std::map<std::string, std::uint64_t> last_seq;
    std::int64_t last_time = 0;
    for (const json& rec : trace_records(out.trace)) {
        CHECK(rec["time_ms"].get<std::int64_t>() >= last_time);
        last_time = rec["time_ms"].get<std::int64_t>();
        if (rec["kind"] != "deliver") continue;
        const json& d = rec["detail"];
        if (d["injected"].get<bool>() || d["duplicate"].get<bool>()) continue;
        std::string key = d["from"].get<std::string>() + ">" + d["to"].get<std::string>() + ":" +
                          d["session"].get<std::string>();
        std::uint64_t seq = d["seq"].get<std::uint64_t>();
        auto it = last_seq.find(key);
        if (it != last_seq.end()) CHECK(seq > it->second);
        last_seq[key] = seq;
    }
}

TEST_CASE("duplicated frames are rejected by the replay window, run still commits") {
    Scenario sc = load_bundled("translation");
    sc.sim.default_link.duplicate_prob = 1.0;
    auto out = run_scenario(sc);
    CHECK(out.report["decision"] == "commit");
    CHECK(out.report["stats"]["duplicated"].get<std::uint64_t>() > 0);
    // a twice-delivered envelope is accepted at most once, whichever copy
    // lands first
    std::map<std::string, int> accepted_by_hash;
    std::map<std::string, int> deliveries_by_hash;
    for (const json& rec : trace_records(out.trace)) {
        if (rec["kind"] != "deliver") continue;
        std::string h = rec["detail"]["envelope"].get<std::string>();
        ++deliveries_by_hash[h];
        if (rec["detail"]["accepted"].get<bool>()) ++accepted_by_hash[h];
    }
    bool saw_double_delivery = false;
    for (const auto& [h, n] : deliveries_by_hash) {
        if (n >= 2) saw_double_delivery = true;
        CHECK(accepted_by_hash[h] <= 1);
    }
    CHECK(saw_double_delivery);
}

TEST_CASE("replayer: injections rejected, victim state intact, run commits") {
    Scenario sc = load_bundled("replay_attack");
    RunOverrides ov;
    ov.check_expected = true;
    auto out = run_scenario(sc, ov);
    CHECK(out.exit_code == 0);
    CHECK(out.report["replays"]["injected"].get<int>() >= 4);
    CHECK(out.report["replays"]["accepted"] == 0);
    CHECK(out.report["replays"]["state_changes"] == 0);
    CHECK(out.report["decision"] == "commit");
    // replay rejections carry the named replay-window reasons
    int named = 0;
    for (const json& rec : trace_records(out.trace)) {
        if (rec["kind"] != "deliver" || !rec["detail"]["injected"].get<bool>()) continue;
        std::string reason = rec["detail"]["reason"].get<std::string>();
        bool named_reason = reason.find("DuplicateNonce") != std::string::npos ||
                            reason.find("NonMonotoneSequence") != std::string::npos ||
                            reason.find("StaleTimestamp") != std::string::npos;
        CHECK(named_reason);
        ++named;
    }
    CHECK(named >= 4);
}

TEST_CASE("replayer: EXEC_RESULT replay is rejected and the decision stands") {
    Scenario sc = load_bundled("replay_attack");
    auto out = run_scenario(sc);
    bool exec_result_replayed = false;
    for (const json& rec : trace_records(out.trace)) {
        if (rec["kind"] != "deliver" || !rec["detail"]["injected"].get<bool>()) continue;
        if (rec["detail"]["msg_type"] == "EXEC_RESULT") {
            exec_result_replayed = true;
            CHECK_FALSE(rec["detail"]["accepted"].get<bool>());
        }
    }
    CHECK(exec_result_replayed);
    CHECK(out.report["decision"] == "commit");
}

TEST_CASE("replay after the window expires is rejected as stale") {
    Scenario sc = load_bundled("replay_attack");
    sc.sim.adversaries.clear();
    AdversarySpec late;
    late.kind = AdversaryKind::REPLAYER;
    late.target = "LegalBot_Prime->TranslatorC_Gov";
    late.params = json{{"delay_ms", 400000}};
    sc.sim.adversaries.push_back(late);
    sc.sim.horizon_ms = 500000;
    auto out = run_scenario(sc);
    CHECK(out.report["replays"]["accepted"] == 0);
    int stale = 0;
    for (const json& rec : trace_records(out.trace)) {
        if (rec["kind"] != "deliver" || !rec["detail"]["injected"].get<bool>()) continue;
        if (rec["detail"]["reason"].get<std::string>().find("StaleTimestamp") !=
            std::string::npos) {
            ++stale;
        }
    }
    CHECK(stale > 0);
}

TEST_CASE("downgrader: session dies with DowngradeDetected and no binding forms") {
    Scenario sc = load_bundled("downgrade");
    RunOverrides ov;
    ov.check_expected = true;
    auto out = run_scenario(sc, ov);
    CHECK(out.exit_code == 0);
    CHECK(out.report["session_failures"]["TranslatorC_Gov"] == "DowngradeDetected");
    CHECK(out.report["binding"].is_null());
    CHECK(out.report["stats"]["tampered"].get<int>() >= 1);
}

TEST_CASE("downgrader on a link that never carries SSO is a no-op") {
    Scenario sc = load_bundled("downgrade");
    sc.sim.adversaries[0].target = "LegalBot_Prime->TranslatorC_Gov";  // SSO flows the other way
    auto out = run_scenario(sc);
    CHECK(out.report["decision"] == "commit");
    CHECK(out.report["stats"]["tampered"] == 0);
    CHECK(out.report["binding_verified"] == true);
}

TEST_CASE("unknown extension names fall out of the intersection, session proceeds") {
    Scenario sc = load_bundled("downgrade");
    sc.sim.adversaries.clear();
    sc.agents[0].supported =
        ProtocolExtension{Version{1, 2, 0}, {"batch", "exotic-extension"}, Version{1, 0, 0}};
    auto out = run_scenario(sc);
    CHECK(out.report["decision"] == "commit");
    CHECK(out.report["binding_verified"] == true);
}

TEST_CASE("flooder arithmetic: capacity 5 against 100 rapid registrations") {
    Scenario sc = load_bundled("flood");
    RunOverrides ov;
    ov.check_expected = true;
    auto out = run_scenario(sc, ov);
    CHECK(out.exit_code == 0);
    CHECK(out.report["flood"]["rate_limited"].get<int>() >= 95);
    CHECK(out.report["flood"]["attempts"] == 100);
    // honest registration mid-flood succeeded and is queryable
    CHECK(out.report["registration_results"][0]["result"] == "ok");
    CHECK(out.report["probes"][0]["results"] == json::array({"HonestAgent"}));
}

TEST_CASE("flooder with exhausted bucket is limited even with valid proof of work") {
    Scenario sc = load_bundled("flood");
    auto out = run_scenario(sc);
    // the flooder always solves the PoW in this scenario: rejections must be
    // rate limiting, not PoW failures
    CHECK(out.report["flood"]["pow_rejected"] == 0);
    CHECK(out.report["flood"]["rate_limited"].get<int>() >= 95);
}

TEST_CASE("impostor: forged envelopes are rejected and perturb nothing") {
    Scenario sc = load_bundled("translation");
    AdversarySpec imp;
    imp.kind = AdversaryKind::IMPOSTOR;
    imp.target = "TranslatorC_Gov";
    imp.params = json{{"claim", "LegalBot_Prime"}, {"at_ms", 40}};
    sc.sim.adversaries.push_back(imp);
    auto out = run_scenario(sc);
    CHECK(out.report["replays"]["injected"].get<int>() >= 1);
    CHECK(out.report["replays"]["accepted"] == 0);
    CHECK(out.report["replays"]["state_changes"] == 0);
    CHECK(out.report["decision"] == "commit");  // negotiation unharmed
}

TEST_CASE("adversary containment: any terminal commitment re-verifies under both keys") {
    for (const char* name : {"translation", "replay_attack", "downgrade", "flood"}) {
        Scenario sc = load_bundled(name);
        auto out = run_scenario(sc);
        INFO("scenario ", name);
        CHECK(out.invariant_breaches.empty());
        if (!out.report["binding"].is_null()) {
            CHECK(out.report["binding_verified"] == true);
        }
    }
}

TEST_CASE("registration failure matrix scenario holds under assertion") {
    Scenario sc = load_bundled("registration_failures");
    RunOverrides ov;
    ov.check_expected = true;
    auto out = run_scenario(sc, ov);
    REQUIRE_MESSAGE(out.exit_code == 0, [&] {
        std::string s;
        for (auto& m : out.mismatches) s += m + "; ";
        return s;
    }());
    // each named failure appears exactly where scripted
    auto results = out.report["registration_results"];
    REQUIRE(results.size() == 12);
    CHECK(results[1]["result"] == "CredentialFailure");
    CHECK(results[2]["result"] == "CapabilityValidationError");
    CHECK(results[3]["result"] == "SignatureInvalid");
    CHECK(results[4]["result"] == "PowRejected");
    CHECK(results[5]["result"] == "DuplicateRegistration");
    CHECK(results[11]["result"] == "RateLimited");
}

TEST_CASE("audit logs from a full run verify and expose stable heads") {
    Scenario sc = load_bundled("translation");
    auto out = run_scenario(sc);
    REQUIRE_FALSE(out.audits.empty());
    for (const auto& [name, log] : out.audits) {
        CHECK(log.verify().ok);
        CHECK(out.report["audit_heads"][name] == hex_encode(log.head()));
    }
    // LegalBot's log is nonempty and covers the dcu step
    const AuditLog& req_log = out.audits.at("LegalBot_Prime");
    bool saw_dcu = false;
    for (const auto& rec : req_log.records()) {
        if (rec.event == "dcu") saw_dcu = true;
    }
    CHECK(saw_dcu);
}
