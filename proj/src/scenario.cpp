#include "acnbp/scenario.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace acnbp {

std::string ScenarioLoad::violations_text() const {
    std::string out;
    for (const auto& v : violations) {
        out += v.path;
        if (v.line > 0) out += " (line " + std::to_string(v.line) + ")";
        out += ": " + v.message + "\n";
    }
    return out;
}

namespace {

int line_of_offset(const std::string& text, size_t offset) {
    int line = 1;
    for (size_t i = 0; i < offset && i < text.size(); ++i) {
        if (text[i] == '\n') ++line;
    }
    return line;
}

// best-effort line lookup: first textual occurrence of the quoted needle
int line_of_needle(const std::string& text, const std::string& needle) {
    size_t pos = text.find("\"" + needle + "\"");
    if (pos == std::string::npos) pos = text.find(needle);
    if (pos == std::string::npos) return -1;
    return line_of_offset(text, pos);
}

struct Loader {
    const std::string& text;
    std::vector<ScenarioViolation>& violations;

    void add(std::string path, std::string message, const std::string& needle = {}) {
        violations.push_back({std::move(path), std::move(message),
                              needle.empty() ? -1 : line_of_needle(text, needle)});
    }

    template <typename T>
    std::optional<T> get(const json& j, const std::string& path, const char* key,
                         bool required = false) {
        if (!j.is_object() || !j.contains(key)) {
            if (required) add(path + "." + key, "missing required field", key);
            return std::nullopt;
        }
        try {
            return j.at(key).get<T>();
        } catch (const std::exception& e) {
            add(path + "." + key, e.what(), key);
            return std::nullopt;
        }
    }
};

std::vector<ParamSlot> default_input_slots() {
    return {{"document", "text/legal"}, {"source_lang", "lang-tag"}, {"target_lang", "lang-tag"}};
}

std::vector<ParamSlot> default_output_slots() { return {{"translated", "text/legal"}}; }

std::optional<std::vector<CapabilitySpec>> parse_capabilities(Loader& ld, const json& agent_j,
                                                              const std::string& path) {
    std::vector<CapabilitySpec> caps;
    if (agent_j.contains("capabilities")) {
        auto parsed = ld.get<std::vector<CapabilitySpec>>(agent_j, path, "capabilities");
        if (!parsed) return std::nullopt;
        caps = std::move(*parsed);
    } else if (agent_j.contains("capability")) {
        // compact form: desc + constraints + security, translation slots by default
        const json& c = agent_j.at("capability");
        CapabilitySpec cap;
        auto desc = ld.get<std::vector<std::string>>(c, path + ".capability", "desc", true);
        if (!desc) return std::nullopt;
        cap.desc = OntologyPath{std::move(*desc)};
        cap.input = c.contains("input") ? c.at("input").get<std::vector<ParamSlot>>()
                                        : default_input_slots();
        cap.output = c.contains("output") ? c.at("output").get<std::vector<ParamSlot>>()
                                          : default_output_slots();
        if (c.contains("constraints")) {
            cap.constraints = c.at("constraints").get<std::map<std::string, double>>();
        }
        if (c.contains("security")) {
            try {
                cap.security = c.at("security").get<SecurityProfile>();
            } catch (const std::exception& e) {
                ld.add(path + ".capability.security", e.what(), "security");
                return std::nullopt;
            }
        }
        caps.push_back(std::move(cap));
    } else {
        ld.add(path, "agent needs 'capability' or 'capabilities'");
        return std::nullopt;
    }
    for (size_t i = 0; i < caps.size(); ++i) {
        if (auto s = validate(caps[i]); !s) {
            ld.add(path + ".capabilities[" + std::to_string(i) + "]", s.error().detail);
            return std::nullopt;
        }
    }
    return caps;
}

std::optional<AnriMetadata> parse_metadata(Loader& ld, const json& agent_j,
                                           const std::string& path) {
    AnriMetadata m;
    m.ttl_ms = 86400000;
    if (!agent_j.contains("metadata")) return m;
    const json& mj = agent_j.at("metadata");
    try {
        if (mj.contains("reputation")) m.reputation = mj.at("reputation").get<double>();
        if (mj.contains("cost_per_unit")) m.cost_per_unit = mj.at("cost_per_unit").get<double>();
        if (mj.contains("risk")) m.risk = mj.at("risk").get<double>();
        if (mj.contains("ttl_ms")) m.ttl_ms = mj.at("ttl_ms").get<std::int64_t>();
    } catch (const std::exception& e) {
        ld.add(path + ".metadata", e.what(), "metadata");
        return std::nullopt;
    }
    if (m.ttl_ms <= 0) {
        ld.add(path + ".metadata.ttl_ms", "ttl_ms must be positive", "ttl_ms");
        return std::nullopt;
    }
    return m;
}

}  // namespace

ScenarioLoad load_scenario_text(const std::string& text) {
    ScenarioLoad out;
    Loader ld{text, out.violations};

    if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
        ld.add("$", "empty scenario file");
        return out;
    }
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        out.violations.push_back(
            {"$", e.what(), line_of_offset(text, e.byte > 0 ? e.byte - 1 : 0)});
        return out;
    }
    if (!root.is_object()) {
        ld.add("$", "scenario must be a JSON object");
        return out;
    }

    Scenario sc;
    sc.name = root.value("name", std::string("scenario"));
    sc.ca_seed = root.value("ca_seed", std::string("test-ca"));

    if (root.contains("sim")) {
        const json& simj = root.at("sim");
        sc.sim.seed = simj.value("seed", 0ULL);
        try {
            from_json(simj, sc.sim.default_link);
        } catch (const std::exception& e) {
            ld.add("$.sim", e.what(), "latency_ms");
        }
        sc.sim.horizon_ms = simj.value("horizon_ms", sc.sim.horizon_ms);
        if (simj.contains("links")) {
            for (const auto& [link, cfg] : simj.at("links").items()) {
                LinkConfig lc = sc.sim.default_link;
                try {
                    from_json(cfg, lc);
                } catch (const std::exception& e) {
                    ld.add("$.sim.links." + link, e.what(), link);
                }
                sc.sim.links[link] = lc;
            }
        }
        if (simj.contains("adversaries")) {
            size_t i = 0;
            for (const auto& aj : simj.at("adversaries")) {
                AdversarySpec spec;
                auto kind = adversary_kind_from_string(aj.value("kind", std::string()));
                if (!kind) {
                    ld.add("$.sim.adversaries[" + std::to_string(i) + "]", kind.error().detail,
                           "adversaries");
                } else {
                    spec.kind = *kind;
                }
                spec.target = aj.value("target", std::string());
                spec.params = aj.value("params", json::object());
                sc.sim.adversaries.push_back(std::move(spec));
                ++i;
            }
        }
        if (sc.sim.default_link.latency_min_ms > sc.sim.default_link.latency_max_ms) {
            ld.add("$.sim.latency_ms", "latency min exceeds max", "latency_ms");
        }
        auto prob_ok = [](double p) { return p >= 0.0 && p <= 1.0; };
        if (!prob_ok(sc.sim.default_link.drop_prob) ||
            !prob_ok(sc.sim.default_link.duplicate_prob)) {
            ld.add("$.sim", "probabilities must lie in [0,1]", "drop_prob");
        }
    }

    std::set<std::string> names;
    if (root.contains("agents")) {
        size_t i = 0;
        for (const auto& aj : root.at("agents")) {
            std::string path = "$.agents[" + std::to_string(i) + "]";
            ScenarioAgent agent;
            auto name = ld.get<std::string>(aj, path, "name", true);
            if (!name) {
                ++i;
                continue;
            }
            agent.name = *name;
            if (!names.insert(agent.name).second) {
                ld.add(path + ".name", "duplicate agent id '" + agent.name + "'", agent.name);
            }
            agent.ns = aj.value("namespace", agent.ns);
            agent.seed = aj.value("seed", "agent-" + agent.name);
            if (auto s = validate(agent.agent_id()); !s) {
                ld.add(path + ".name", s.error().detail, agent.name);
            }
            if (auto caps = parse_capabilities(ld, aj, path)) {
                agent.capabilities = std::move(*caps);
            }
            if (auto m = parse_metadata(ld, aj, path)) agent.metadata = *m;
            if (aj.contains("certifications")) {
                agent.certifications = aj.at("certifications").get<std::set<std::string>>();
            }
            if (aj.contains("supported")) {
                try {
                    agent.supported = aj.at("supported").get<ProtocolExtension>();
                } catch (const std::exception& e) {
                    ld.add(path + ".supported", e.what(), "supported");
                }
            }
            if (aj.contains("offer")) {
                const json& oj = aj.at("offer");
                agent.offer_deadline_hours = oj.value("deadline_hours", agent.offer_deadline_hours);
                agent.offer_quality_min = oj.value("quality_min", agent.offer_quality_min);
                agent.offer_penalty = oj.value("penalty", agent.offer_penalty);
            }
            if (aj.contains("skill")) {
                const json& sj = aj.at("skill");
                agent.skill_kind = sj.value("kind", agent.skill_kind);
                agent.skill_quality = sj.value("quality", agent.skill_quality);
                if (agent.skill_kind != "translation" && agent.skill_kind != "echo" &&
                    agent.skill_kind != "fail") {
                    ld.add(path + ".skill.kind", "unknown skill '" + agent.skill_kind + "'",
                           agent.skill_kind);
                }
            }
            agent.step_timeout_ms = aj.value("step_timeout_ms", agent.step_timeout_ms);
            sc.agents.push_back(std::move(agent));
            ++i;
        }
    }

    if (root.contains("requester")) {
        const json& rj = root.at("requester");
        ScenarioRequester req;
        req.name = rj.value("name", req.name);
        req.ns = rj.value("namespace", req.ns);
        req.seed = rj.value("seed", "agent-" + req.name);
        if (!names.insert(req.name).second) {
            ld.add("$.requester.name", "duplicate agent id '" + req.name + "'", req.name);
        }
        auto query = ld.get<CapabilityQuery>(rj, "$.requester", "query", true);
        if (query) {
            req.query = std::move(*query);
            if (auto s = validate(req.query); !s) {
                ld.add("$.requester.query", s.error().detail, "query");
            }
        }
        if (rj.contains("weights")) {
            try {
                req.weights = rj.at("weights").get<ScoringWeights>();
            } catch (const std::exception& e) {
                ld.add("$.requester.weights", e.what(), "weights");
            }
            if (!req.weights.valid()) {
                ld.add("$.requester.weights", "weights must be nonnegative and sum to 1",
                       "weights");
            }
        }
        req.parallel_sessions = rj.value("parallel_sessions", req.parallel_sessions);
        req.exec_input = rj.value("exec_input", json::object());
        if (rj.contains("supported")) {
            try {
                req.supported = rj.at("supported").get<ProtocolExtension>();
            } catch (const std::exception& e) {
                ld.add("$.requester.supported", e.what(), "supported");
            }
        }
        req.start_at_ms = rj.value("start_at_ms", req.start_at_ms);
        req.step_timeout_ms = rj.value("step_timeout_ms", req.step_timeout_ms);
        sc.requester = std::move(req);
    }

    if (root.contains("registration")) {
        size_t i = 0;
        for (const auto& rj : root.at("registration")) {
            RegistrationStep step;
            step.agent = rj.value("agent", std::string());
            step.at_ms = rj.value("at_ms", 0);
            step.tamper = rj.value("tamper", std::string("none"));
            if (!std::set<std::string>{"none", "foreign_ca", "empty_capabilities", "bad_signature",
                                       "bad_pow", "duplicate"}
                     .contains(step.tamper)) {
                ld.add("$.registration[" + std::to_string(i) + "].tamper",
                       "unknown tamper '" + step.tamper + "'", step.tamper);
            }
            bool known = false;
            for (const auto& a : sc.agents) {
                if (a.name == step.agent) known = true;
            }
            if (!known) {
                ld.add("$.registration[" + std::to_string(i) + "].agent",
                       "unknown agent '" + step.agent + "'", step.agent);
            }
            sc.registration.push_back(std::move(step));
            ++i;
        }
    }

    if (root.contains("probes")) {
        size_t i = 0;
        for (const auto& pj : root.at("probes")) {
            QueryProbe probe;
            probe.at_ms = pj.value("at_ms", 0);
            probe.limit = pj.value("limit", 10ULL);
            auto q = ld.get<CapabilityQuery>(pj, "$.probes[" + std::to_string(i) + "]", "query",
                                             true);
            if (q) probe.query = std::move(*q);
            sc.probes.push_back(std::move(probe));
            ++i;
        }
    }

    // adversary targets must reference declared agents or links between them
    for (size_t i = 0; i < sc.sim.adversaries.size(); ++i) {
        const auto& adv = sc.sim.adversaries[i];
        auto known_name = [&](const std::string& n) {
            if (n == "AnsDirectory") return true;  // the directory always exists
            if (sc.requester && sc.requester->name == n) return true;
            for (const auto& a : sc.agents) {
                if (a.name == n) return true;
            }
            return false;
        };
        std::string path = "$.sim.adversaries[" + std::to_string(i) + "].target";
        size_t arrow = adv.target.find("->");
        if (arrow != std::string::npos) {
            std::string from = adv.target.substr(0, arrow);
            std::string to = adv.target.substr(arrow + 2);
            if (!known_name(from) || !known_name(to)) {
                ld.add(path, "link endpoints must be declared agents: '" + adv.target + "'",
                       adv.target);
            }
        } else if (!adv.target.empty() && !known_name(adv.target)) {
            ld.add(path, "unknown agent '" + adv.target + "'", adv.target);
        } else if (adv.target.empty()) {
            ld.add(path, "adversary target missing");
        }
    }

    sc.expected = root.value("expected", json());

    if (!out.violations.empty()) return out;
    out.scenario = std::move(sc);
    return out;
}

ScenarioLoad load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        ScenarioLoad out;
        out.violations.push_back({"$", "cannot open " + path.string(), -1});
        return out;
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return load_scenario_text(buf.str());
}

// --------------------------------------------------------------- running

namespace {

SkillHandler make_skill(const ScenarioAgent& agent) {
    double quality = agent.skill_quality;
    if (agent.skill_kind == "fail") {
        return [](const json&) -> Result<ExecOutput> {
            return Result<ExecOutput>::failure(Err::ExecutionFailure, "scenario skill failure");
        };
    }
    if (agent.skill_kind == "echo") {
        return [quality](const json& input) -> Result<ExecOutput> {
            return ExecOutput{json{{"translated", input.value("document", std::string())}},
                              quality};
        };
    }
    return [quality](const json& input) -> Result<ExecOutput> {
        return ExecOutput{json{{"translated", "[fr] " + input.value("document", std::string())}},
                          quality};
    };
}

struct BuiltAgent {
    ScenarioAgent def;
    crypto::KeyPair keys;
    Certificate cert;
    Anri record;  // unstamped (registered_at 0)
    std::unique_ptr<ProviderEngine> engine;
};

Anri build_record(const ScenarioAgent& def, const crypto::KeyPair& keys, const Certificate& cert) {
    Anri anri;
    anri.id = def.agent_id();
    anri.capabilities = def.capabilities;
    anri.location = "bus://" + def.name;
    anri.security = AnriSecurity{keys.public_key, cert};
    anri.metadata = def.metadata;
    return sign_anri(std::move(anri), keys);
}

std::string register_with_tamper(Registry& registry, const BuiltAgent& agent,
                                 const crypto::KeyPair& ca, const std::string& tamper,
                                 std::int64_t now) {
    Anri record = agent.record;
    record.metadata.registered_at = now;
    Certificate cert = agent.cert;
    if (tamper == "foreign_ca") {
        auto foreign = crypto::keypair_from_label("foreign-ca");
        cert = issue_certificate(foreign, record.id, agent.keys.public_key,
                                 agent.def.certifications, 0);
        record.security.cert = cert;
        record = sign_anri(std::move(record), agent.keys);
    } else if (tamper == "empty_capabilities") {
        record.capabilities.clear();
        record = sign_anri(std::move(record), agent.keys);
    } else if (tamper == "bad_signature") {
        record = sign_anri(std::move(record), crypto::keypair_from_label("imposter-key"));
    } else {
        record = sign_anri(std::move(record), agent.keys);
    }
    (void)ca;
    Bytes pow = tamper == "bad_pow"
                    ? Bytes(8, 0xee)
                    : crypto::proof_of_work(Registry::registration_challenge(record.id),
                                            registry.pow_difficulty());
    auto result = registry.register_agent(record, record.security.cert, pow);
    return result.ok() ? "ok" : to_string(result.code());
}

}  // namespace

RunOutcome run_scenario(const Scenario& scenario, const RunOverrides& overrides) {
    RunOutcome outcome;

    SimConfig simcfg = scenario.sim;
    if (overrides.seed) simcfg.seed = *overrides.seed;
    Simulation sim(simcfg);

    crypto::KeyPair ca = crypto::keypair_from_label(scenario.ca_seed);
    Registry registry(ca.public_key, sim.clock());
    AgentId ans_id{"AnsDirectory", "infra"};
    crypto::KeyPair ans_keys = crypto::keypair_from_label("ans-service");
    AnsService ans(ans_id, ans_keys, &registry, sim.rng_for("ans"));
    sim.attach(&ans);

    // build all provider-side agents
    std::vector<BuiltAgent> built;
    built.reserve(scenario.agents.size());
    for (const ScenarioAgent& def : scenario.agents) {
        BuiltAgent agent;
        agent.def = def;
        agent.keys = crypto::keypair_from_label(def.seed);
        agent.cert = issue_certificate(ca, def.agent_id(), agent.keys.public_key,
                                       def.certifications, 0);
        agent.record = build_record(def, agent.keys, agent.cert);
        ProviderConfig pcfg;
        pcfg.supported = def.supported;
        pcfg.offer_deadline_rel_ms = static_cast<std::int64_t>(def.offer_deadline_hours * 3600000.0);
        pcfg.offer_quality_min = def.offer_quality_min;
        pcfg.offer_penalty = def.offer_penalty;
        pcfg.step_timeout_ms = def.step_timeout_ms;
        agent.engine = std::make_unique<ProviderEngine>(agent.record, agent.keys, ca.public_key,
                                                        pcfg, make_skill(def),
                                                        sim.rng_for("provider/" + def.name));
        agent.engine->set_reputation_sink(
            [&registry](const AgentId& id, double rep, const Bytes& sig) {
                return registry.update_reputation(id, rep, sig);
            });
        built.push_back(std::move(agent));
    }
    for (auto& agent : built) sim.attach_provider(agent.engine.get());

    // registration: scripted, or everyone at t=0
    std::vector<json> registration_results;
    auto register_step = [&](const RegistrationStep& step) {
        for (auto& agent : built) {
            if (agent.def.name != step.agent) continue;
            std::string result =
                register_with_tamper(registry, agent, ca, step.tamper, sim.now());
            if (result == "ok") {
                agent.engine->set_current_record(*registry.lookup(agent.def.agent_id()));
            }
            registration_results.push_back(json{{"agent", step.agent},
                                                {"at_ms", step.at_ms},
                                                {"result", result},
                                                {"tamper", step.tamper}});
            return;
        }
    };
    if (scenario.registration.empty()) {
        for (auto& agent : built) {
            RegistrationStep step{agent.def.name, 0, "none"};
            register_step(step);
        }
    } else {
        for (const RegistrationStep& step : scenario.registration) {
            sim.schedule_action(step.at_ms, "register:" + step.agent,
                                [&, step](Simulation&) { register_step(step); });
        }
    }

    // requester
    std::unique_ptr<RequesterEngine> requester;
    if (scenario.requester) {
        const ScenarioRequester& rq = *scenario.requester;
        crypto::KeyPair keys = crypto::keypair_from_label(rq.seed);
        Certificate cert = issue_certificate(ca, rq.agent_id(), keys.public_key,
                                             rq.query.security_reqs.certifications, 0);
        RequesterConfig rcfg;
        rcfg.query = rq.query;
        rcfg.weights = overrides.weights.value_or(rq.weights);
        rcfg.parallel_sessions = rq.parallel_sessions;
        rcfg.exec_input = rq.exec_input;
        rcfg.supported = rq.supported;
        rcfg.step_timeout_ms = rq.step_timeout_ms;
        requester = std::make_unique<RequesterEngine>(rq.agent_id(), keys, cert, ans_id,
                                                      ans_keys.public_key, ca.public_key, rcfg,
                                                      sim.rng_for("requester/" + rq.name));
        sim.attach_requester(requester.get());
        sim.schedule_action(rq.start_at_ms, "start:" + rq.name, [&](Simulation& s) {
            s.submit(requester->id(), requester->start(s.now()));
        });
    }

    // adversary wiring beyond link middleware
    json flood_stats{{"attempts", 0}, {"ok", 0},        {"rate_limited", 0},
                     {"pow_rejected", 0}, {"duplicate", 0}, {"other", 0}};
    bool flooder_present = false;
    for (const AdversarySpec& adv : scenario.sim.adversaries) {
        if (adv.kind == AdversaryKind::DOWNGRADER) {
            // registered-but-malicious mid-path relay: may re-sign SSO as the
            // link's sender unless the scenario says otherwise
            if (adv.params.value("resign", true)) {
                size_t arrow = adv.target.find("->");
                std::string sender = adv.target.substr(0, arrow);
                for (auto& agent : built) {
                    if (agent.def.name == sender) {
                        sim.grant_signing_oracle(agent.def.agent_id(), agent.keys);
                    }
                }
            }
        }
        if (adv.kind == AdversaryKind::FLOODER) {
            flooder_present = true;
            std::int64_t start = adv.params.value("start_ms", 0);
            std::int64_t interval = adv.params.value("interval_ms", 10);
            int count = adv.params.value("count", 100);
            std::string target = adv.target;
            for (int i = 0; i < count; ++i) {
                sim.schedule_action(start + i * interval, "flood:" + target, [&, target](Simulation&) {
                    for (auto& agent : built) {
                        if (agent.def.name != target) continue;
                        std::string result =
                            register_with_tamper(registry, agent, ca, "none", sim.now());
                        flood_stats["attempts"] = flood_stats["attempts"].get<int>() + 1;
                        const char* bucket = result == "ok" ? "ok"
                                             : result == "RateLimited" ? "rate_limited"
                                             : result == "PowRejected" ? "pow_rejected"
                                             : result == "DuplicateRegistration" ? "duplicate"
                                                                                 : "other";
                        flood_stats[bucket] = flood_stats[bucket].get<int>() + 1;
                        if (result == "ok") {
                            agent.engine->set_current_record(*registry.lookup(agent.def.agent_id()));
                        }
                    }
                });
            }
        }
        if (adv.kind == AdversaryKind::IMPOSTOR) {
            std::int64_t at = adv.params.value("at_ms", 100);
            std::string claim = adv.params.value("claim", std::string());
            std::string target = adv.target;
            sim.schedule_action(at, "impostor:" + target, [&, claim, target, at](Simulation& s) {
                crypto::KeyPair impostor_keys = crypto::keypair_from_label("impostor");
                AgentId claimed{claim, "agents.translation"};
                AgentId victim{target, "agents.translation"};
                if (scenario.requester && scenario.requester->name == target) {
                    victim = scenario.requester->agent_id();
                }
                if (scenario.requester && scenario.requester->name == claim) {
                    claimed = scenario.requester->agent_id();
                }
                auto env = make_envelope(impostor_keys, claimed, victim,
                                         Bytes(kSessionIdSize, 0x33), MsgType::SSR,
                                         json{{"forged", true}}, Bytes(kNonceSize, 0x44),
                                         s.now(), 1);
                s.inject(s.now() + 1, std::move(env));
                (void)at;
            });
        }
    }

    // scripted query probes
    std::vector<json> probe_results;
    for (size_t i = 0; i < scenario.probes.size(); ++i) {
        const QueryProbe& probe = scenario.probes[i];
        sim.schedule_action(probe.at_ms, "probe:" + std::to_string(i), [&, probe](Simulation&) {
            auto hits = registry.query(probe.query, probe.limit);
            json names = json::array();
            for (const auto& rec : hits) names.push_back(rec.id.name);
            probe_results.push_back(json{{"at_ms", probe.at_ms}, {"results", names}});
        });
    }

    sim.run();

    // ---------------------------------------------------------- reporting
    json report;
    report["scenario"] = scenario.name;
    report["seed"] = simcfg.seed;

    json terminal = json::object();
    json reputation = json::object();
    json audit_heads = json::object();
    for (auto& agent : built) {
        terminal[agent.def.name] = to_string(agent.engine->state().phase);
        if (auto rec = registry.lookup(agent.def.agent_id())) {
            reputation[agent.def.name] = rec->metadata.reputation_or_default();
        }
        audit_heads[agent.def.name] = hex_encode(agent.engine->audit().head());
        outcome.audits[agent.def.name] = agent.engine->audit();
    }

    if (requester) {
        const RequesterState& rs = requester->state();
        terminal[requester->id().name] = to_string(rs.phase);
        audit_heads[requester->id().name] = hex_encode(requester->audit().head());
        outcome.audits[requester->id().name] = requester->audit();
        report["requester_phase"] = to_string(rs.phase);
        report["decision"] = rs.decision ? json(*rs.decision) : json();
        report["abort_reason"] = rs.abort_reason;
        report["selected"] = rs.selected ? json(rs.selected->name) : json();

        json ranking = json::array();
        for (const auto& id : rs.shortlist) ranking.push_back(id.name);
        json eliminated = json::object();
        for (const auto& score : rs.cps_scores) {
            if (score.eliminated) eliminated[score.agent.name] = score.elimination_reason;
        }
        report["cps"] = json{{"eliminated", eliminated},
                             {"ranking", ranking},
                             {"scores", rs.cps_scores}};

        json established = json::array();
        json failures = json::object();
        for (const auto& [peer, attempt] : rs.sessions) {
            if (attempt.stage == SessionAttempt::Stage::ESTABLISHED) {
                established.push_back(peer.name);
            } else if (attempt.stage == SessionAttempt::Stage::FAILED) {
                failures[peer.name] = attempt.failure_reason;
            }
        }
        report["sessions_established"] = established;
        report["session_failures"] = failures;

        if (rs.binding && rs.phase != RequesterPhase::ABORTED &&
            requester->bindings_stored() > 0) {
            report["binding"] = *rs.binding;
            Bytes provider_pk;
            for (auto& agent : built) {
                if (agent.def.agent_id() == rs.binding->provider) {
                    provider_pk = agent.keys.public_key;
                }
            }
            report["binding_verified"] =
                verify_commitment(*rs.binding, requester->public_key(), provider_pk);
        } else {
            report["binding"] = json();
            report["binding_verified"] = false;
        }
    }

    json transitions = json::array();
    if (requester) {
        for (const auto& t : requester->transitions()) transitions.push_back(t);
    }
    for (auto& agent : built) {
        for (const auto& t : agent.engine->transitions()) transitions.push_back(t);
    }
    report["transitions"] = transitions;
    report["terminal_phases"] = terminal;
    report["reputation"] = reputation;
    report["audit_heads"] = audit_heads;
    report["registration_results"] = registration_results;
    report["probes"] = probe_results;
    if (flooder_present) report["flood"] = flood_stats;

    const SimStats& st = sim.stats();
    report["stats"] = json{{"delivered", st.delivered}, {"dropped", st.dropped},
                           {"duplicated", st.duplicated}, {"sent", st.sent},
                           {"tampered", st.tampered}};
    report["replays"] = json{{"accepted", st.injected_accepted},
                             {"injected", st.injected},
                             {"state_changes", st.injected_state_changes}};

    outcome.trace = sim.trace_text();

    // ------------------------------------------------- invariant self-check
    auto breach = [&](std::string what) { outcome.invariant_breaches.push_back(std::move(what)); };
    if (requester) {
        if (!std::all_of(requester->transitions().begin(), requester->transitions().end(),
                         [](const TransitionRecord& r) {
                             return TransitionTable::requester().allows(r.phase_from, r.phase_to,
                                                                        r.msg_type);
                         })) {
            breach("requester transition outside the legal table");
        }
        if (requester->ssa_accepts_emitted() > 1) breach("multiple SSA_ACCEPT emitted");
        if (requester->bindings_stored() > 1) breach("multiple bindings stored");
        if (!requester->audit().verify().ok) breach("requester audit chain broken");
        RequesterPhase p = requester->state().phase;
        if (p != RequesterPhase::FINALIZED && p != RequesterPhase::INIT) {
            breach("requester finished in non-terminal phase " + std::string(to_string(p)));
        }
    }
    for (auto& agent : built) {
        if (!std::all_of(agent.engine->transitions().begin(), agent.engine->transitions().end(),
                         [](const TransitionRecord& r) {
                             return TransitionTable::provider().allows(r.phase_from, r.phase_to,
                                                                       r.msg_type);
                         })) {
            breach("provider transition outside the legal table: " + agent.def.name);
        }
        if (!agent.engine->audit().verify().ok) {
            breach("provider audit chain broken: " + agent.def.name);
        }
    }
    report["invariant_breaches"] = outcome.invariant_breaches;

    // --------------------------------------------------- expected outcomes
    if (overrides.check_expected && scenario.expected.is_object()) {
        const json& exp = scenario.expected;
        auto mismatch = [&](const std::string& what) { outcome.mismatches.push_back(what); };
        auto check_str = [&](const char* key) {
            if (!exp.contains(key)) return;
            json actual = report.value(key, json());
            if (actual != exp.at(key)) {
                mismatch(std::string(key) + ": expected " + exp.at(key).dump() + ", got " +
                         actual.dump());
            }
        };
        check_str("requester_phase");
        check_str("decision");
        check_str("abort_reason");
        check_str("selected");
        if (exp.contains("ranking") && report.contains("cps") &&
            report["cps"]["ranking"] != exp["ranking"]) {
            mismatch("ranking: expected " + exp["ranking"].dump() + ", got " +
                     report["cps"]["ranking"].dump());
        }
        if (exp.contains("eliminated")) {
            for (const auto& [name, reason] : exp["eliminated"].items()) {
                json actual = report["cps"]["eliminated"].value(name, json());
                if (actual != reason) {
                    mismatch("eliminated[" + name + "]: expected " + reason.dump() + ", got " +
                             actual.dump());
                }
            }
        }
        if (exp.contains("sessions_established")) {
            json got = report.value("sessions_established", json::array());
            std::vector<std::string> a = got.get<std::vector<std::string>>();
            std::vector<std::string> b = exp["sessions_established"].get<std::vector<std::string>>();
            std::sort(a.begin(), a.end());
            std::sort(b.begin(), b.end());
            if (a != b) {
                mismatch("sessions_established: expected " + exp["sessions_established"].dump() +
                         ", got " + got.dump());
            }
        }
        if (exp.contains("session_failures")) {
            for (const auto& [name, reason] : exp["session_failures"].items()) {
                json actual = report["session_failures"].value(name, json());
                if (actual != reason) {
                    mismatch("session_failures[" + name + "]: expected " + reason.dump() +
                             ", got " + actual.dump());
                }
            }
        }
        if (exp.contains("provider_phases")) {
            for (const auto& [name, phase] : exp["provider_phases"].items()) {
                json actual = report["terminal_phases"].value(name, json());
                if (actual != phase) {
                    mismatch("provider_phases[" + name + "]: expected " + phase.dump() + ", got " +
                             actual.dump());
                }
            }
        }
        if (exp.contains("reputation")) {
            for (const auto& [name, value] : exp["reputation"].items()) {
                if (!report["reputation"].contains(name) ||
                    std::abs(report["reputation"][name].get<double>() - value.get<double>()) >
                        1e-9) {
                    mismatch("reputation[" + name + "]: expected " + value.dump() + ", got " +
                             report["reputation"].value(name, json()).dump());
                }
            }
        }
        if (exp.contains("binding_verified") &&
            report.value("binding_verified", false) != exp["binding_verified"].get<bool>()) {
            mismatch("binding_verified: expected " + exp["binding_verified"].dump());
        }
        if (exp.contains("no_binding") && exp["no_binding"].get<bool>() &&
            !report["binding"].is_null()) {
            mismatch("no_binding: a binding was formed");
        }
        if (exp.contains("zero_replays_accepted") && exp["zero_replays_accepted"].get<bool>()) {
            if (st.injected_accepted != 0 || st.injected_state_changes != 0) {
                mismatch("zero_replays_accepted: accepted=" +
                         std::to_string(st.injected_accepted) + " state_changes=" +
                         std::to_string(st.injected_state_changes));
            }
        }
        if (exp.contains("min_injected") &&
            st.injected < exp["min_injected"].get<std::uint64_t>()) {
            mismatch("min_injected: got " + std::to_string(st.injected));
        }
        if (exp.contains("min_rate_limited")) {
            int got = flood_stats["rate_limited"].get<int>();
            if (got < exp["min_rate_limited"].get<int>()) {
                mismatch("min_rate_limited: got " + std::to_string(got));
            }
        }
        if (exp.contains("registration_results")) {
            const json& want = exp["registration_results"];
            if (want.size() != registration_results.size()) {
                mismatch("registration_results: expected " + std::to_string(want.size()) +
                         " entries, got " + std::to_string(registration_results.size()));
            } else {
                for (size_t i = 0; i < want.size(); ++i) {
                    if (registration_results[i]["result"] != want[i]) {
                        mismatch("registration_results[" + std::to_string(i) + "]: expected " +
                                 want[i].dump() + ", got " +
                                 registration_results[i]["result"].dump());
                    }
                }
            }
        }
        if (exp.contains("probe_results")) {
            const json& want = exp["probe_results"];
            for (size_t i = 0; i < want.size() && i < probe_results.size(); ++i) {
                if (probe_results[i]["results"] != want[i]) {
                    mismatch("probe_results[" + std::to_string(i) + "]: expected " +
                             want[i].dump() + ", got " + probe_results[i]["results"].dump());
                }
            }
            if (want.size() != probe_results.size()) {
                mismatch("probe_results: expected " + std::to_string(want.size()) +
                         " probes, got " + std::to_string(probe_results.size()));
            }
        }
    }
    report["mismatches"] = outcome.mismatches;
    outcome.report = std::move(report);
    outcome.registry_snapshot = registry.snapshot();

    if (!outcome.invariant_breaches.empty()) outcome.exit_code = 3;
    else if (!outcome.mismatches.empty()) outcome.exit_code = 1;
    return outcome;
}

}  // namespace acnbp
