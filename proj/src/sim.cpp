#include "acnbp/sim.hpp"

#include <algorithm>

namespace acnbp {

void from_json(const json& j, LinkConfig& v) {
    if (j.contains("latency_ms")) {
        v.latency_min_ms = j.at("latency_ms").at(0).get<std::int64_t>();
        v.latency_max_ms = j.at("latency_ms").at(1).get<std::int64_t>();
    }
    v.drop_prob = j.value("drop_prob", v.drop_prob);
    v.duplicate_prob = j.value("duplicate_prob", v.duplicate_prob);
}

const char* to_string(AdversaryKind k) {
    switch (k) {
        case AdversaryKind::REPLAYER: return "REPLAYER";
        case AdversaryKind::DOWNGRADER: return "DOWNGRADER";
        case AdversaryKind::IMPOSTOR: return "IMPOSTOR";
        case AdversaryKind::FLOODER: return "FLOODER";
    }
    return "?";
}

Result<AdversaryKind> adversary_kind_from_string(std::string_view s) {
    if (s == "REPLAYER") return AdversaryKind::REPLAYER;
    if (s == "DOWNGRADER") return AdversaryKind::DOWNGRADER;
    if (s == "IMPOSTOR") return AdversaryKind::IMPOSTOR;
    if (s == "FLOODER") return AdversaryKind::FLOODER;
    return Result<AdversaryKind>::failure(Err::SchemaViolation,
                                          "unknown adversary kind '" + std::string(s) + "'");
}

Simulation::Simulation(SimConfig config) : config_(std::move(config)) {}

void Simulation::attach(Agent* agent) { agents_[agent->id()] = agent; }

void Simulation::attach_requester(RequesterEngine* engine) {
    attach(engine);
    requesters_[engine->id()] = engine;
}

void Simulation::attach_provider(ProviderEngine* engine) {
    attach(engine);
    providers_[engine->id()] = engine;
}

void Simulation::grant_signing_oracle(const AgentId& id, crypto::KeyPair keys) {
    signing_oracle_[id.name] = std::move(keys);
}

LinkConfig Simulation::link_config(const std::string& link) const {
    auto it = config_.links.find(link);
    return it != config_.links.end() ? it->second : config_.default_link;
}

DetRng& Simulation::link_rng(const std::string& link) {
    auto it = link_rngs_.find(link);
    if (it == link_rngs_.end()) {
        it = link_rngs_.emplace(link, DetRng(config_.seed, "link/" + link)).first;
    }
    return it->second;
}

void Simulation::push(Event ev) {
    ev.order = next_order_++;
    queue_.push(std::move(ev));
}

void Simulation::record(std::int64_t t, const char* kind, json detail) {
    trace_.push_back(json{{"detail", std::move(detail)},
                          {"kind", kind},
                          {"seq", trace_.size()},
                          {"time_ms", t}});
}

size_t Simulation::snapshot_transitions(const AgentId& id) const {
    if (auto it = requesters_.find(id); it != requesters_.end()) {
        return it->second->transitions().size();
    }
    if (auto it = providers_.find(id); it != providers_.end()) {
        return it->second->transitions().size();
    }
    return 0;
}

void Simulation::route(SignedEnvelope env) {
    std::string link = env.sender.name + "->" + env.recipient.name;
    LinkConfig lc = link_config(link);
    DetRng& rng = link_rng(link);
    ++stats_.sent;

    // adversaries wired to this link act on the envelope in transit
    for (const AdversarySpec& adv : config_.adversaries) {
        if (adv.target != link) continue;
        if (adv.kind == AdversaryKind::DOWNGRADER && env.msg_type == MsgType::SSO) {
            auto body = env.body_json();
            if (body && body->contains("supported")) {
                json tampered = *body;
                // strip the advertised ceiling down to the compatibility floor
                tampered["supported"]["version"] = tampered["supported"]["compatibility"];
                tampered["supported"]["extensions"] = json::array();
                env.body = canonical::encode_bytes(tampered);
                ++stats_.tampered;
                bool resigned = false;
                if (auto key = signing_oracle_.find(env.sender.name);
                    key != signing_oracle_.end()) {
                    env.signature = crypto::sign(key->second, env.preimage());
                    resigned = true;
                }
                record(now(), "adversary_tamper",
                       json{{"kind", "DOWNGRADER"},
                            {"link", link},
                            {"msg_type", to_string(env.msg_type)},
                            {"resigned", resigned}});
            }
        }
        if (adv.kind == AdversaryKind::REPLAYER) {
            std::int64_t delay = adv.params.value("delay_ms", 1000);
            Event replay;
            replay.time_ms = now() + delay;
            replay.kind = Event::Kind::DELIVER;
            replay.env = env;
            replay.injected = true;
            push(std::move(replay));
            ++stats_.injected;
            record(now(), "adversary_inject",
                   json{{"deliver_at", now() + delay},
                        {"kind", "REPLAYER"},
                        {"link", link},
                        {"msg_type", to_string(env.msg_type)}});
        }
    }

    if (rng.next_bernoulli(lc.drop_prob)) {
        ++stats_.dropped;
        record(now(), "drop",
               json{{"link", link}, {"msg_type", to_string(env.msg_type)}});
        return;
    }
    std::int64_t latency = rng.next_in(lc.latency_min_ms, lc.latency_max_ms);
    bool dup = rng.next_bernoulli(lc.duplicate_prob);

    Event ev;
    ev.time_ms = now() + latency;
    ev.kind = Event::Kind::DELIVER;
    ev.env = env;
    push(ev);
    if (dup) {
        std::int64_t latency2 = rng.next_in(lc.latency_min_ms, lc.latency_max_ms);
        Event copy;
        copy.time_ms = now() + latency2;
        copy.kind = Event::Kind::DELIVER;
        copy.env = std::move(env);
        copy.duplicate = true;
        push(std::move(copy));
        ++stats_.duplicated;
    }
}

void Simulation::submit(const AgentId& from, Outbox out) {
    for (auto& env : out.sends) route(std::move(env));
    for (auto& t : out.timers) {
        Event ev;
        ev.time_ms = t.at_ms;
        ev.kind = Event::Kind::TIMER;
        ev.timer_owner = from;
        ev.timer_id = std::move(t.id);
        push(std::move(ev));
    }
}

void Simulation::schedule_action(std::int64_t at_ms, std::string label,
                                 std::function<void(Simulation&)> action) {
    Event ev;
    ev.time_ms = at_ms;
    ev.kind = Event::Kind::ACTION;
    ev.label = std::move(label);
    ev.action = std::move(action);
    push(std::move(ev));
}

void Simulation::inject(std::int64_t at_ms, SignedEnvelope env) {
    Event ev;
    ev.time_ms = at_ms;
    ev.kind = Event::Kind::DELIVER;
    ev.env = std::move(env);
    ev.injected = true;
    push(std::move(ev));
    ++stats_.injected;
}

void Simulation::deliver(const Event& ev) {
    auto it = agents_.find(ev.env.recipient);
    if (it == agents_.end()) return;
    size_t transitions_before = ev.injected ? snapshot_transitions(ev.env.recipient) : 0;
    Outbox out = it->second->on_envelope(ev.env, now());
    if (ev.injected) {
        ++stats_.delivered;
        if (out.accepted) ++stats_.injected_accepted;
        size_t transitions_after = snapshot_transitions(ev.env.recipient);
        if (transitions_after != transitions_before) ++stats_.injected_state_changes;
    } else {
        ++stats_.delivered;
    }
    record(now(), "deliver",
           json{{"accepted", out.accepted},
                {"duplicate", ev.duplicate},
                {"envelope", hex_encode(ev.env.hash())},
                {"from", ev.env.sender.name},
                {"injected", ev.injected},
                {"msg_type", to_string(ev.env.msg_type)},
                {"reason", out.reject_reason},
                {"seq", ev.env.seq},
                {"session", hex_encode(ev.env.session_id)},
                {"to", ev.env.recipient.name}});
    submit(ev.env.recipient, std::move(out));
}

void Simulation::run() {
    while (!queue_.empty()) {
        Event ev = queue_.top();
        queue_.pop();
        if (ev.time_ms > config_.horizon_ms) break;
        clock_->advance_to(ev.time_ms);
        switch (ev.kind) {
            case Event::Kind::DELIVER:
                deliver(ev);
                break;
            case Event::Kind::TIMER: {
                auto it = agents_.find(ev.timer_owner);
                if (it == agents_.end()) break;
                record(now(), "timer", json{{"id", ev.timer_id}, {"owner", ev.timer_owner.name}});
                submit(ev.timer_owner, it->second->on_timer(ev.timer_id, now()));
                break;
            }
            case Event::Kind::ACTION:
                record(now(), "action", json{{"label", ev.label}});
                if (ev.action) ev.action(*this);
                break;
        }
    }
}

std::string Simulation::trace_text() const {
    std::string out;
    for (const json& rec : trace_) {
        out += canonical::encode(rec);
        out += "\n";
    }
    return out;
}

}  // namespace acnbp
