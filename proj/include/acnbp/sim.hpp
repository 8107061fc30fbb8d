#pragma once

#include <functional>
#include <map>
#include <queue>
#include <string>

#include "acnbp/clock.hpp"
#include "acnbp/negotiation.hpp"
#include "acnbp/rng.hpp"

namespace acnbp {

struct LinkConfig {
    std::int64_t latency_min_ms = 10;
    std::int64_t latency_max_ms = 50;
    double drop_prob = 0.0;
    double duplicate_prob = 0.0;
};

void from_json(const json& j, LinkConfig& v);

enum class AdversaryKind { REPLAYER, DOWNGRADER, IMPOSTOR, FLOODER };

const char* to_string(AdversaryKind k);
Result<AdversaryKind> adversary_kind_from_string(std::string_view s);

struct AdversarySpec {
    AdversaryKind kind = AdversaryKind::REPLAYER;
    std::string target;  // link "A->B" or agent name
    json params;         // kind-specific knobs
};

struct SimConfig {
    std::uint64_t seed = 0;
    LinkConfig default_link;
    std::map<std::string, LinkConfig> links;  // per-link overrides, key "A->B"
    std::vector<AdversarySpec> adversaries;
    std::int64_t horizon_ms = 600000;
};

struct SimStats {
    std::uint64_t sent = 0;
    std::uint64_t delivered = 0;
    std::uint64_t dropped = 0;
    std::uint64_t duplicated = 0;
    std::uint64_t tampered = 0;
    std::uint64_t injected = 0;            // adversary re-injections/forgeries
    std::uint64_t injected_accepted = 0;   // must stay 0 for replay suites
    std::uint64_t injected_state_changes = 0;
};

// Discrete-event bus: virtual clock, (time, order)-deterministic queue,
// per-link loss/latency/duplication, scripted adversaries. Single-threaded.
class Simulation {
public:
    explicit Simulation(SimConfig config);

    void attach(Agent* agent);
    // Engines that expose FSM introspection register here so injected
    // deliveries can be checked for state perturbation.
    void attach_requester(RequesterEngine* engine);
    void attach_provider(ProviderEngine* engine);

    // The downgrade adversary models a registered-but-malicious relay that
    // can re-sign the handshake messages of specific senders.
    void grant_signing_oracle(const AgentId& id, crypto::KeyPair keys);

    void submit(const AgentId& from, Outbox out);
    void schedule_action(std::int64_t at_ms, std::string label,
                         std::function<void(Simulation&)> action);
    // Adversary-originated delivery, counted against the injection budget.
    void inject(std::int64_t at_ms, SignedEnvelope env);
    void run();

    ClockHandle clock() { return clock_; }
    std::int64_t now() const { return clock_->now_ms(); }
    const SimStats& stats() const { return stats_; }
    const std::vector<json>& trace() const { return trace_; }
    std::string trace_text() const;  // line-delimited canonical records
    DetRng rng_for(std::string_view stream) const { return DetRng(config_.seed, std::string(stream)); }

private:
    struct Event {
        std::int64_t time_ms;
        std::uint64_t order;
        enum class Kind { DELIVER, TIMER, ACTION } kind;
        SignedEnvelope env;  // DELIVER
        bool injected = false;
        bool duplicate = false;
        AgentId timer_owner;  // TIMER
        std::string timer_id;
        std::string label;  // ACTION
        std::function<void(Simulation&)> action;
    };
    struct EventOrder {
        bool operator()(const Event& a, const Event& b) const {
            if (a.time_ms != b.time_ms) return a.time_ms > b.time_ms;
            return a.order > b.order;
        }
    };

    void push(Event ev);
    void route(SignedEnvelope env);
    void deliver(const Event& ev);
    LinkConfig link_config(const std::string& link) const;
    DetRng& link_rng(const std::string& link);
    void record(std::int64_t t, const char* kind, json detail);

    size_t snapshot_transitions(const AgentId& id) const;

    SimConfig config_;
    ClockHandle clock_ = make_clock();
    std::priority_queue<Event, std::vector<Event>, EventOrder> queue_;
    std::uint64_t next_order_ = 0;
    std::map<AgentId, Agent*> agents_;
    std::map<AgentId, RequesterEngine*> requesters_;
    std::map<AgentId, ProviderEngine*> providers_;
    std::map<std::string, DetRng> link_rngs_;
    std::map<std::string, crypto::KeyPair> signing_oracle_;  // by agent name
    SimStats stats_;
    std::vector<json> trace_;
};

}  // namespace acnbp
