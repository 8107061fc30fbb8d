#pragma once

#include <filesystem>
#include <optional>

#include "acnbp/sim.hpp"

namespace acnbp {

struct ScenarioAgent {
    std::string name;
    std::string ns = "agents.translation";
    std::string seed;  // key-derivation label
    std::vector<CapabilitySpec> capabilities;
    AnriMetadata metadata;
    std::set<std::string> certifications;
    ProtocolExtension supported{Version{1, 2, 0}, {"batch", "streaming"}, Version{1, 0, 0}};
    double offer_deadline_hours = 20.0;
    double offer_quality_min = 0.95;
    double offer_penalty = 0.1;
    std::string skill_kind = "translation";  // translation | echo | fail
    double skill_quality = 0.95;
    std::int64_t step_timeout_ms = 10000;

    AgentId agent_id() const { return AgentId{name, ns}; }
};

struct ScenarioRequester {
    std::string name = "LegalBot_Prime";
    std::string ns = "agents.legal";
    std::string seed;
    CapabilityQuery query;
    ScoringWeights weights;
    int parallel_sessions = 3;
    json exec_input;
    ProtocolExtension supported{Version{1, 2, 0}, {"batch", "streaming"}, Version{1, 0, 0}};
    std::int64_t start_at_ms = 0;
    std::int64_t step_timeout_ms = 5000;

    AgentId agent_id() const { return AgentId{name, ns}; }
};

struct RegistrationStep {
    std::string agent;
    std::int64_t at_ms = 0;
    // none | foreign_ca | empty_capabilities | bad_signature | bad_pow | duplicate
    std::string tamper = "none";
};

struct QueryProbe {
    std::int64_t at_ms = 0;
    CapabilityQuery query;
    std::uint64_t limit = 10;
};

struct Scenario {
    std::string name;
    std::string ca_seed = "test-ca";
    SimConfig sim;
    std::vector<ScenarioAgent> agents;
    std::optional<ScenarioRequester> requester;
    std::vector<RegistrationStep> registration;  // empty: all agents register at t=0
    std::vector<QueryProbe> probes;
    json expected;  // assertion block, optional
};

struct ScenarioViolation {
    std::string path;     // JSON-ish path of the offending element
    std::string message;  // names the violating value
    int line = -1;        // 1-based, best effort (-1 when unknown)
};

struct ScenarioLoad {
    std::optional<Scenario> scenario;
    std::vector<ScenarioViolation> violations;  // nonempty iff !scenario

    bool ok() const { return scenario.has_value(); }
    std::string violations_text() const;
};

ScenarioLoad load_scenario_text(const std::string& text);
ScenarioLoad load_scenario(const std::filesystem::path& path);

struct RunOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<ScoringWeights> weights;
    bool check_expected = false;  // --assert
};

struct RunOutcome {
    json report;
    std::string trace;                       // line-delimited canonical events
    json registry_snapshot;                  // post-run ANS export
    std::map<std::string, AuditLog> audits;  // by agent name
    std::vector<std::string> mismatches;     // expected-outcome failures
    std::vector<std::string> invariant_breaches;
    // 0 ok; 1 expected-outcome mismatch; 3 internal invariant breach
    int exit_code = 0;
};

RunOutcome run_scenario(const Scenario& scenario, const RunOverrides& overrides = {});

}  // namespace acnbp
