#include "acnbp/negotiation.hpp"

#include <algorithm>

namespace acnbp {

const char* to_string(RequesterPhase p) {
    switch (p) {
        case RequesterPhase::INIT: return "INIT";
        case RequesterPhase::DISCOVERED: return "DISCOVERED";
        case RequesterPhase::SCREENED: return "SCREENED";
        case RequesterPhase::SESSIONS_REQUESTED: return "SESSIONS_REQUESTED";
        case RequesterPhase::SESSIONS_ESTABLISHED: return "SESSIONS_ESTABLISHED";
        case RequesterPhase::AGREED: return "AGREED";
        case RequesterPhase::BOUND: return "BOUND";
        case RequesterPhase::EXECUTING: return "EXECUTING";
        case RequesterPhase::COMMITTED: return "COMMITTED";
        case RequesterPhase::ABORTED: return "ABORTED";
        case RequesterPhase::FINALIZED: return "FINALIZED";
    }
    return "?";
}

const char* to_string(ProviderPhase p) {
    switch (p) {
        case ProviderPhase::REGISTERED: return "REGISTERED";
        case ProviderPhase::OFFER_SENT: return "OFFER_SENT";
        case ProviderPhase::SESSION_ESTABLISHED: return "SESSION_ESTABLISHED";
        case ProviderPhase::ACCEPTED: return "ACCEPTED";
        case ProviderPhase::REJECTED: return "REJECTED";
        case ProviderPhase::COMMITTED: return "COMMITTED";
        case ProviderPhase::EXECUTING: return "EXECUTING";
        case ProviderPhase::DONE: return "DONE";
        case ProviderPhase::ABORTED: return "ABORTED";
    }
    return "?";
}

void to_json(json& j, const Terms& v) {
    j = json{{"deadline_ms", v.deadline_ms},
             {"penalty", v.penalty},
             {"price", v.price},
             {"quality_min", v.quality_min}};
}

void from_json(const json& j, Terms& v) {
    j.at("price").get_to(v.price);
    j.at("deadline_ms").get_to(v.deadline_ms);
    j.at("quality_min").get_to(v.quality_min);
    j.at("penalty").get_to(v.penalty);
}

json BindingCommitment::preimage_json() const {
    return json{{"capability", capability},
                {"provider", provider},
                {"requester", requester},
                {"terms", terms}};
}

void to_json(json& j, const BindingCommitment& v) {
    j = v.preimage_json();
    j["requester_signature"] = hex_encode(v.requester_signature);
    j["provider_signature"] = hex_encode(v.provider_signature);
}

void from_json(const json& j, BindingCommitment& v) {
    j.at("requester").get_to(v.requester);
    j.at("provider").get_to(v.provider);
    j.at("capability").get_to(v.capability);
    j.at("terms").get_to(v.terms);
    v.requester_signature = hex_decode(j.at("requester_signature").get<std::string>());
    v.provider_signature = hex_decode(j.at("provider_signature").get<std::string>());
}

bool verify_commitment(const BindingCommitment& bc, std::span<const std::uint8_t> requester_pk,
                       std::span<const std::uint8_t> provider_pk) {
    if (requester_pk.size() != crypto::kKeySize || provider_pk.size() != crypto::kKeySize) {
        return false;
    }
    Bytes preimage = canonical::encode_bytes(bc.preimage_json());
    return crypto::verify(requester_pk, preimage, bc.requester_signature) &&
           crypto::verify(provider_pk, preimage, bc.provider_signature);
}

// ------------------------------------------------------------ consistency

ConsistencyReport consistency_check(const CapabilityQuery& query, const CapabilitySpec& offered,
                                    const SessionRecord& session, const Terms& terms,
                                    std::int64_t negotiation_start_ms) {
    ConsistencyReport rep;
    auto fail = [&](const char* dim) {
        rep.pass = false;
        rep.failures.push_back(dim);
    };

    // syntactic: interface slots and type tags are well formed
    bool syntactic = !offered.input.empty() && !offered.output.empty();
    for (const ParamSlot& slot : offered.input) {
        if (slot.name.empty() || slot.type.empty()) syntactic = false;
    }
    std::set<std::string> out_names;
    for (const ParamSlot& slot : offered.output) {
        if (slot.name.empty() || slot.type.empty()) syntactic = false;
        if (!out_names.insert(slot.name).second) syntactic = false;
    }
    if (!syntactic) fail("syntactic");

    // semantic: the advertised meaning covers the requested path
    CapabilityQuery semantic_only = query.relaxed_for_discovery();
    semantic_only.constraints.clear();
    if (!match_capability(semantic_only, offered).matched) fail("semantic");

    // operational: advertised constraints meet every query bound
    if (!constraints_satisfied(query.constraints, offered.constraints)) fail("operational");

    // security: the offer dominates the floor and a keyed channel exists
    if (!security_dominates(offered.security, query.security_reqs) ||
        session.session_key.size() != crypto::kKeySize) {
        fail("security");
    }

    // temporal: the offered deadline honors the query deadline bound
    auto deadline_bound = [&]() -> std::optional<std::int64_t> {
        if (auto it = query.constraints.find("deadline_hours"); it != query.constraints.end()) {
            return negotiation_start_ms + static_cast<std::int64_t>(it->second * 3600000.0);
        }
        if (auto it = query.constraints.find("deadline_ms"); it != query.constraints.end()) {
            return negotiation_start_ms + static_cast<std::int64_t>(it->second);
        }
        return std::nullopt;
    }();
    if (deadline_bound && terms.deadline_ms > *deadline_bound) fail("temporal");

    return rep;
}

// --------------------------------------------------------- transition law

void to_json(json& j, const TransitionRecord& v) {
    j = json{{"actor", v.actor},
             {"envelope_hash", v.envelope_hash},
             {"instance_id", v.instance_id},
             {"msg_type", v.msg_type},
             {"phase_from", v.phase_from},
             {"phase_to", v.phase_to}};
}

void TransitionTable::add(std::string from, std::string to, std::string on) {
    entries_.insert({std::move(from), std::move(to), std::move(on)});
}

bool TransitionTable::allows(const std::string& from, const std::string& to,
                             const std::string& on) const {
    return entries_.contains({from, to, on});
}

json TransitionTable::to_json() const {
    json arr = json::array();
    for (const auto& e : entries_) {
        arr.push_back(json{{"from", e[0]}, {"on", e[2]}, {"to", e[1]}});
    }
    return arr;
}

Result<TransitionTable> TransitionTable::from_json(const json& j) {
    if (!j.is_array()) return Result<TransitionTable>::failure(Err::SchemaViolation, "not an array");
    TransitionTable t;
    for (const auto& e : j) {
        try {
            t.add(e.at("from").get<std::string>(), e.at("to").get<std::string>(),
                  e.at("on").get<std::string>());
        } catch (const std::exception& ex) {
            return Result<TransitionTable>::failure(Err::SchemaViolation, ex.what());
        }
    }
    return t;
}

const TransitionTable& TransitionTable::requester() {
    static const TransitionTable table = [] {
        TransitionTable t;
        t.add("INIT", "DISCOVERED", "CD_RESPONSE");
        t.add("INIT", "ABORTED", "TIMEOUT");
        t.add("DISCOVERED", "SCREENED", "CPS");
        t.add("SCREENED", "ABORTED", "NO_CANDIDATES");
        t.add("SCREENED", "SESSIONS_REQUESTED", "SSR");
        t.add("SESSIONS_REQUESTED", "SESSIONS_ESTABLISHED", "SESSIONS_RESOLVED");
        t.add("SESSIONS_REQUESTED", "ABORTED", "SESSIONS_FAILED");
        t.add("SESSIONS_ESTABLISHED", "AGREED", "SSA_ACCEPT");
        t.add("SESSIONS_ESTABLISHED", "ABORTED", "CONSISTENCY_FAILED");
        t.add("AGREED", "BOUND", "BC");
        t.add("AGREED", "ABORTED", "BC_INVALID");
        t.add("AGREED", "ABORTED", "TIMEOUT");
        t.add("BOUND", "EXECUTING", "EXEC_REQUEST");
        t.add("EXECUTING", "COMMITTED", "COMMIT");
        t.add("EXECUTING", "ABORTED", "ABORT");
        t.add("EXECUTING", "ABORTED", "TIMEOUT");
        t.add("COMMITTED", "FINALIZED", "DCU");
        t.add("ABORTED", "FINALIZED", "DCU");
        return t;
    }();
    return table;
}

const TransitionTable& TransitionTable::provider() {
    static const TransitionTable table = [] {
        TransitionTable t;
        t.add("REGISTERED", "OFFER_SENT", "SSR");
        t.add("OFFER_SENT", "SESSION_ESTABLISHED", "SSE_INIT");
        t.add("OFFER_SENT", "REGISTERED", "TIMEOUT");
        t.add("SESSION_ESTABLISHED", "ACCEPTED", "SSA_ACCEPT");
        t.add("SESSION_ESTABLISHED", "REJECTED", "SSA_REJECT");
        t.add("SESSION_ESTABLISHED", "REGISTERED", "TIMEOUT");
        t.add("ACCEPTED", "COMMITTED", "BC");
        t.add("COMMITTED", "EXECUTING", "EXEC_REQUEST");
        t.add("COMMITTED", "ABORTED", "ABORT");
        t.add("COMMITTED", "ABORTED", "TIMEOUT");
        t.add("COMMITTED", "ABORTED", "DCU");
        t.add("EXECUTING", "DONE", "COMMIT");
        t.add("EXECUTING", "ABORTED", "ABORT");
        t.add("EXECUTING", "ABORTED", "TIMEOUT");
        t.add("EXECUTING", "DONE", "DCU");
        t.add("EXECUTING", "ABORTED", "DCU");
        return t;
    }();
    return table;
}

// ---------------------------------------------------------------- helpers

namespace {

Outbox rejected(Err code, std::string detail = {}) {
    Outbox out;
    out.accepted = false;
    out.reject_reason = to_string(code);
    if (!detail.empty()) out.reject_reason += ": " + detail;
    return out;
}

template <typename T>
std::optional<T> field(const json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) return std::nullopt;
    try {
        return j.at(key).get<T>();
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

std::optional<Bytes> hex_field(const json& j, const char* key, size_t expect_len = 0) {
    auto s = field<std::string>(j, key);
    if (!s) return std::nullopt;
    try {
        Bytes b = hex_decode(*s);
        if (expect_len != 0 && b.size() != expect_len) return std::nullopt;
        return b;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

Hash32 list_hash(const ProtocolExtension& pe) {
    return crypto::sha3_256(canonical::encode(json(pe)));
}

}  // namespace

// ------------------------------------------------------------ AnsService

AnsService::AnsService(AgentId id, crypto::KeyPair keys, Registry* registry, DetRng rng)
    : id_(std::move(id)), keys_(std::move(keys)), registry_(registry), rng_(std::move(rng)) {}

Outbox AnsService::on_envelope(const SignedEnvelope& env, std::int64_t now_ms) {
    if (env.msg_type != MsgType::CD_QUERY) return rejected(Err::IllegalPhase, "not a CD_QUERY");
    auto body = env.body_json();
    if (!body) return rejected(Err::ParseError);
    auto cert_j = field<json>(*body, "cert");
    if (!cert_j) return rejected(Err::CredentialFailure, "query carries no certificate");
    Certificate cert;
    try {
        cert = cert_j->get<Certificate>();
    } catch (const std::exception&) {
        return rejected(Err::CredentialFailure, "malformed certificate");
    }
    if (cert.subject != env.sender || !verify_certificate(cert, registry_->ca_root())) {
        return rejected(Err::CredentialFailure);
    }
    if (!verify_envelope(env, cert.public_key)) return rejected(Err::SignatureInvalid);
    if (auto r = replay_.peek(env, now_ms); !r) return rejected(r.code(), r.error().detail);

    auto query_j = field<json>(*body, "query");
    auto limit = field<std::uint64_t>(*body, "limit").value_or(16);
    if (!query_j) return rejected(Err::SchemaViolation, "missing query");
    CapabilityQuery q;
    try {
        q = query_j->get<CapabilityQuery>();
    } catch (const std::exception&) {
        return rejected(Err::SchemaViolation, "malformed query");
    }
    replay_.record_accept(env);

    auto records = registry_->query(q, limit);
    Outbox out;
    out.sends.push_back(make_envelope(
        keys_, id_, env.sender, env.session_id, MsgType::CD_RESPONSE, json{{"records", records}},
        rng_.next_bytes(kNonceSize), now_ms, ++out_seq_[hex_encode(env.session_id)]));
    return out;
}

// ------------------------------------------------------- RequesterEngine

RequesterEngine::RequesterEngine(AgentId id, crypto::KeyPair keys, Certificate cert,
                                 AgentId ans_id, Bytes ans_public_key, Bytes ca_root,
                                 RequesterConfig config, DetRng rng, std::string instance_id)
    : id_(std::move(id)),
      keys_(std::move(keys)),
      cert_(std::move(cert)),
      ans_id_(std::move(ans_id)),
      ans_pk_(std::move(ans_public_key)),
      ca_root_(std::move(ca_root)),
      config_(std::move(config)),
      rng_(std::move(rng)),
      instance_id_(std::move(instance_id)) {}

SignedEnvelope RequesterEngine::make(const AgentId& to, const Bytes& session, MsgType t,
                                     const json& body, std::int64_t now) {
    SignedEnvelope env = make_envelope(keys_, id_, to, session, t, body,
                                       rng_.next_bytes(kNonceSize), now,
                                       ++out_seq_[hex_encode(session)]);
    Hash32 h = env.hash();
    state_.transcript.push_back(h);
    state_.transcript_head = crypto::hash_chain_step(state_.transcript_head, h);
    return env;
}

void RequesterEngine::transition(RequesterPhase to, const std::string& on, const Hash32* env_hash) {
    transitions_.push_back(TransitionRecord{instance_id_, "requester", to_string(state_.phase),
                                            to_string(to), on,
                                            env_hash ? hex_encode(*env_hash) : ""});
    state_.phase = to;
}

Outbox RequesterEngine::start(std::int64_t now_ms) {
    start_ms_ = now_ms;
    discovery_session_ = rng_.next_bytes(kSessionIdSize);
    Outbox out;
    json body{{"cert", cert_},
              {"limit", config_.discovery_limit},
              {"query", config_.query.relaxed_for_discovery()}};
    out.sends.push_back(make(ans_id_, discovery_session_, MsgType::CD_QUERY, body, now_ms));
    out.timers.push_back({"cd", now_ms + config_.step_timeout_ms});
    audit_.append(now_ms, id_, "cd_query", json{{"limit", config_.discovery_limit}});
    return out;
}

bool RequesterEngine::sender_key_known(const SignedEnvelope& env, Bytes& out_pk) const {
    if (env.sender == ans_id_) {
        out_pk = ans_pk_;
        return true;
    }
    auto it = state_.sessions.find(env.sender);
    if (it == state_.sessions.end()) return false;
    out_pk = it->second.anri.security.public_key;
    return true;
}

SessionAttempt* RequesterEngine::session_for(const SignedEnvelope& env) {
    auto it = state_.sessions.find(env.sender);
    if (it == state_.sessions.end()) return nullptr;
    if (it->second.session_id != env.session_id) return nullptr;
    return &it->second;
}

Outbox RequesterEngine::on_envelope(const SignedEnvelope& env, std::int64_t now_ms) {
    Bytes pk;
    if (!sender_key_known(env, pk)) return rejected(Err::SignatureInvalid, "unknown sender");
    if (!verify_envelope(env, pk)) return rejected(Err::SignatureInvalid);
    if (auto r = replay_.peek(env, now_ms); !r) return rejected(r.code(), r.error().detail);

    Hash32 h = env.hash();
    state_.transcript.push_back(h);
    state_.transcript_head = crypto::hash_chain_step(state_.transcript_head, h);

    Outbox out;
    switch (env.msg_type) {
        case MsgType::CD_RESPONSE: out = handle_cd_response(env, now_ms); break;
        case MsgType::SSO: out = handle_sso(env, now_ms); break;
        case MsgType::SSE_CONFIRM: out = handle_sse_confirm(env, now_ms); break;
        case MsgType::BC: out = handle_bc(env, now_ms); break;
        case MsgType::EXEC_RESULT: out = handle_exec_result(env, now_ms); break;
        default:
            out = rejected(Err::IllegalPhase, std::string("unexpected ") + to_string(env.msg_type));
    }
    // only truly processed envelopes consume replay-window state: an envelope
    // rejected on protocol grounds must not advance the sequence floor past
    // legitimate messages still in flight
    if (out.accepted) replay_.record_accept(env);
    return out;
}

Outbox RequesterEngine::handle_cd_response(const SignedEnvelope& env, std::int64_t now) {
    if (state_.phase != RequesterPhase::INIT) return rejected(Err::IllegalPhase);
    if (env.sender != ans_id_ || env.session_id != discovery_session_) {
        return rejected(Err::SignatureInvalid, "not the pending discovery session");
    }
    auto body = env.body_json();
    if (!body) return rejected(Err::ParseError);
    auto records_j = field<json>(*body, "records");
    if (!records_j || !records_j->is_array()) return rejected(Err::SchemaViolation);

    std::vector<Anri> candidates;
    for (const auto& rec : *records_j) {
        try {
            Anri anri = rec.get<Anri>();
            // independent client-side verification of every returned record
            if (verify_anri(anri, ca_root_)) candidates.push_back(std::move(anri));
        } catch (const std::exception&) {
            continue;
        }
    }

    Hash32 h = env.hash();
    Outbox out;
    transition(RequesterPhase::DISCOVERED, "CD_RESPONSE", &h);
    screen_candidates(candidates, now, out);
    return out;
}

void RequesterEngine::screen_candidates(const std::vector<Anri>& candidates, std::int64_t now,
                                        Outbox& out) {
    state_.cps_scores = evaluate_cohort(config_.query, candidates, config_.weights, ca_root_);
    state_.shortlist = rank_candidates(state_.cps_scores);
    transition(RequesterPhase::SCREENED, "CPS");
    audit_.append(now, id_, "screened", json{{"scores", state_.cps_scores}});

    if (state_.shortlist.empty()) {
        abort_run("no_candidates", now, out, "NO_CANDIDATES");
        return;
    }

    size_t k = std::min<size_t>(static_cast<size_t>(config_.parallel_sessions),
                                state_.shortlist.size());
    std::map<AgentId, const Anri*> by_id;
    for (const Anri& a : candidates) by_id[a.id] = &a;
    for (size_t i = 0; i < k; ++i) {
        const Anri* anri = by_id.at(state_.shortlist[i]);
        SessionAttempt attempt;
        attempt.peer = anri->id;
        attempt.anri = *anri;
        attempt.session_id = rng_.next_bytes(kSessionIdSize);
        json body{{"requester_cert", cert_},
                  {"security", config_.query.security_reqs},
                  {"supported", config_.supported}};
        out.sends.push_back(make(anri->id, attempt.session_id, MsgType::SSR, body, now));
        out.timers.push_back({"session:" + anri->id.name, now + config_.step_timeout_ms});
        state_.sessions.emplace(anri->id, std::move(attempt));
        audit_.append(now, id_, "ssr_sent", json{{"peer", anri->id}});
    }
    transition(RequesterPhase::SESSIONS_REQUESTED, "SSR");
}

Outbox RequesterEngine::handle_sso(const SignedEnvelope& env, std::int64_t now) {
    if (state_.phase != RequesterPhase::SESSIONS_REQUESTED) return rejected(Err::IllegalPhase);
    SessionAttempt* attempt = session_for(env);
    if (!attempt || attempt->stage != SessionAttempt::Stage::SSR_SENT) {
        return rejected(Err::IllegalPhase, "no pending SSR for sender");
    }
    auto body = env.body_json();
    if (!body) return rejected(Err::ParseError);

    Outbox out;
    if (auto rej = field<std::string>(*body, "rejected")) {
        attempt->stage = SessionAttempt::Stage::FAILED;
        attempt->failure_reason = *rej;
        audit_.append(now, id_, "session_rejected", json{{"peer", env.sender}, {"reason", *rej}});
        maybe_finish_session_stage(now, out);
        return out;
    }

    auto caps_j = field<json>(*body, "capabilities");
    auto supported_j = field<json>(*body, "supported");
    auto terms_j = field<json>(*body, "terms");
    if (!caps_j || !supported_j || !terms_j) return rejected(Err::SchemaViolation);
    try {
        attempt->offered = caps_j->get<std::vector<CapabilitySpec>>();
        attempt->peer_supported = supported_j->get<ProtocolExtension>();
        attempt->offer_terms = terms_j->get<Terms>();
    } catch (const std::exception&) {
        return rejected(Err::SchemaViolation);
    }

    auto negotiated = negotiate_extension(config_.supported, attempt->peer_supported);
    if (!negotiated) {
        attempt->stage = SessionAttempt::Stage::FAILED;
        attempt->failure_reason = to_string(Err::IncompatibleVersions);
        audit_.append(now, id_, "session_failed",
                      json{{"peer", env.sender}, {"reason", attempt->failure_reason}});
        maybe_finish_session_stage(now, out);
        return out;
    }
    attempt->negotiated = *negotiated;
    attempt->peer_list_hash = list_hash(attempt->peer_supported);

    attempt->ephemeral = crypto::x25519_from_seed(rng_.next_bytes(crypto::kKeySize));
    attempt->nonce_r = rng_.next_bytes(kNonceSize);
    json init{{"ecdh_public", hex_encode(attempt->ephemeral.public_key)},
              {"nonce_r", hex_encode(attempt->nonce_r)}};
    out.sends.push_back(make(env.sender, attempt->session_id, MsgType::SSE_INIT, init, now));
    attempt->stage = SessionAttempt::Stage::SSE_SENT;
    return out;
}

Outbox RequesterEngine::handle_sse_confirm(const SignedEnvelope& env, std::int64_t now) {
    if (state_.phase != RequesterPhase::SESSIONS_REQUESTED) return rejected(Err::IllegalPhase);
    SessionAttempt* attempt = session_for(env);
    if (!attempt || attempt->stage != SessionAttempt::Stage::SSE_SENT) {
        return rejected(Err::IllegalPhase, "no pending SSE for sender");
    }
    auto body = env.body_json();
    if (!body) return rejected(Err::ParseError);
    auto peer_eph = hex_field(*body, "ecdh_public", crypto::kKeySize);
    auto nonce_p = hex_field(*body, "nonce_p", kNonceSize);
    auto sealed = field<json>(*body, "sealed");
    if (!peer_eph || !nonce_p || !sealed) return rejected(Err::SchemaViolation);

    Outbox out;
    Bytes shared = crypto::x25519_shared(attempt->ephemeral.secret_key, *peer_eph);
    Hash32 key = crypto::derive_session_key(shared, attempt->nonce_r, *nonce_p);
    Bytes session_key(key.begin(), key.end());

    auto fail_session = [&](Err code) {
        attempt->stage = SessionAttempt::Stage::FAILED;
        attempt->failure_reason = to_string(code);
        audit_.append(now, id_, "session_failed",
                      json{{"peer", env.sender}, {"reason", attempt->failure_reason}});
        maybe_finish_session_stage(now, out);
    };

    auto opened = open_payload(session_key, *sealed);
    if (!opened) {
        fail_session(Err::KeyConfirmationFailed);
        return out;
    }
    auto provider_hash = field<std::string>(*opened, "provider_list_hash");
    auto requester_hash = field<std::string>(*opened, "requester_list_hash");
    if (!provider_hash || !requester_hash) {
        fail_session(Err::KeyConfirmationFailed);
        return out;
    }
    // Downgrade defense: the encrypted echo must match what arrived in the
    // clear during SSR/SSO.
    if (*provider_hash != hex_encode(attempt->peer_list_hash) ||
        *requester_hash != hex_encode(list_hash(config_.supported))) {
        fail_session(Err::DowngradeDetected);
        return out;
    }

    attempt->record = SessionRecord{attempt->session_id, attempt->negotiated, session_key,
                                    attempt->peer_list_hash, now};
    attempt->stage = SessionAttempt::Stage::ESTABLISHED;
    audit_.append(now, id_, "session_established", json{{"peer", env.sender}});
    maybe_finish_session_stage(now, out);
    return out;
}

void RequesterEngine::maybe_finish_session_stage(std::int64_t now, Outbox& out) {
    if (state_.phase != RequesterPhase::SESSIONS_REQUESTED) return;
    bool all_resolved = true;
    bool any_established = false;
    for (const auto& [peer, attempt] : state_.sessions) {
        if (attempt.stage == SessionAttempt::Stage::SSR_SENT ||
            attempt.stage == SessionAttempt::Stage::SSE_SENT) {
            all_resolved = false;
        }
        if (attempt.stage == SessionAttempt::Stage::ESTABLISHED) any_established = true;
    }
    if (!all_resolved) return;
    if (!any_established) {
        std::string reason = "no_sessions";
        for (const auto& [peer, attempt] : state_.sessions) {
            if (!attempt.failure_reason.empty()) {
                reason = attempt.failure_reason;
                break;
            }
        }
        abort_run(reason, now, out, "SESSIONS_FAILED");
        return;
    }
    transition(RequesterPhase::SESSIONS_ESTABLISHED, "SESSIONS_RESOLVED");
    select_and_agree(now, out);
}

void RequesterEngine::select_and_agree(std::int64_t now, Outbox& out) {
    // walk the CPS ranking; the first established session passing all five
    // consistency dimensions wins
    std::optional<AgentId> chosen;
    CapabilitySpec chosen_cap;
    for (const AgentId& peer : state_.shortlist) {
        auto it = state_.sessions.find(peer);
        if (it == state_.sessions.end()) continue;
        SessionAttempt& attempt = it->second;
        if (attempt.stage != SessionAttempt::Stage::ESTABLISHED) continue;

        // best offered capability by full-query match, falling back to the
        // semantically closest offer so consistency failures get named
        const CapabilitySpec* best = nullptr;
        double best_sim = -1.0;
        for (const CapabilitySpec& cap : attempt.offered) {
            MatchResult m = match_capability(config_.query, cap);
            if (m.matched && m.similarity > best_sim) {
                best = &cap;
                best_sim = m.similarity;
            }
        }
        if (!best) {
            CapabilityQuery relaxed = config_.query.relaxed_for_discovery();
            for (const CapabilitySpec& cap : attempt.offered) {
                MatchResult m = match_capability(relaxed, cap);
                if (m.similarity > best_sim) {
                    best = &cap;
                    best_sim = m.similarity;
                }
            }
        }
        if (!best) continue;
        ConsistencyReport rep =
            consistency_check(config_.query, *best, attempt.record, attempt.offer_terms, start_ms_);
        audit_.append(now, id_, "consistency",
                      json{{"failures", rep.failures}, {"pass", rep.pass}, {"peer", peer}});
        if (rep.pass) {
            chosen = peer;
            chosen_cap = *best;
            break;
        }
    }

    if (!chosen) {
        abort_run("consistency", now, out, "CONSISTENCY_FAILED");
        return;
    }

    state_.selected = *chosen;
    SessionAttempt& sel = state_.sessions.at(*chosen);

    BindingCommitment draft;
    draft.requester = id_;
    draft.provider = *chosen;
    draft.capability = chosen_cap;
    draft.terms = sel.offer_terms;
    draft.requester_signature = crypto::sign(keys_, canonical::encode_bytes(draft.preimage_json()));
    state_.binding = draft;  // half-signed until BC confirms

    json accept_pt{{"capability", chosen_cap},
                   {"requester_signature", hex_encode(draft.requester_signature)},
                   {"terms", sel.offer_terms}};
    json accept_body{
        {"sealed", seal_payload(sel.record.session_key, accept_pt, rng_.next_bytes(kNonceSize))}};
    out.sends.push_back(make(*chosen, sel.session_id, MsgType::SSA_ACCEPT, accept_body, now));
    ++ssa_accepts_emitted_;
    audit_.append(now, id_, "ssa_accept", json{{"peer", *chosen}});

    for (auto& [peer, attempt] : state_.sessions) {
        if (peer == *chosen || attempt.stage != SessionAttempt::Stage::ESTABLISHED) continue;
        out.sends.push_back(make(peer, attempt.session_id, MsgType::SSA_REJECT,
                                 json{{"reason", "not_selected"}}, now));
        audit_.append(now, id_, "ssa_reject", json{{"peer", peer}});
    }
    transition(RequesterPhase::AGREED, "SSA_ACCEPT");
    out.timers.push_back({"bc", now + config_.step_timeout_ms});
}

Outbox RequesterEngine::handle_bc(const SignedEnvelope& env, std::int64_t now) {
    if (state_.phase != RequesterPhase::AGREED) return rejected(Err::IllegalPhase);
    if (!state_.selected || env.sender != *state_.selected) {
        return rejected(Err::IllegalPhase, "BC from a non-selected provider");
    }
    SessionAttempt& sel = state_.sessions.at(*state_.selected);
    if (env.session_id != sel.session_id) return rejected(Err::IllegalPhase, "wrong session");

    auto body = env.body_json();
    if (!body) return rejected(Err::ParseError);
    auto sealed = field<json>(*body, "sealed");
    if (!sealed) return rejected(Err::SchemaViolation);
    auto opened = open_payload(sel.record.session_key, *sealed);
    if (!opened) return rejected(Err::KeyConfirmationFailed);
    auto commitment_j = field<json>(*opened, "commitment");
    if (!commitment_j) return rejected(Err::SchemaViolation);

    BindingCommitment bc;
    try {
        bc = commitment_j->get<BindingCommitment>();
    } catch (const std::exception&) {
        return rejected(Err::SchemaViolation);
    }

    Outbox out;
    const BindingCommitment& draft = *state_.binding;
    if (bc.requester != id_ || bc.provider != *state_.selected ||
        canonical::encode(json(bc.capability)) != canonical::encode(json(draft.capability)) ||
        canonical::encode(json(bc.terms)) != canonical::encode(json(draft.terms))) {
        audit_.append(now, id_, "bc_rejected", json{{"reason", "TermsMismatch"}});
        abort_run("terms_mismatch", now, out, "BC_INVALID");
        return out;
    }
    if (bc.terms.deadline_ms <= now) {
        audit_.append(now, id_, "bc_rejected", json{{"reason", "DeadlineExpired"}});
        abort_run("deadline_expired", now, out, "BC_INVALID");
        return out;
    }
    if (bc.requester_signature != draft.requester_signature ||
        !verify_commitment(bc, keys_.public_key, sel.anri.security.public_key)) {
        audit_.append(now, id_, "bc_rejected", json{{"reason", "SignatureInvalid"}});
        abort_run("bc_signature", now, out, "BC_INVALID");
        return out;
    }

    state_.binding = bc;
    ++bindings_stored_;
    Hash32 h = env.hash();
    transition(RequesterPhase::BOUND, "BC", &h);
    audit_.append(
        now, id_, "bound",
        json{{"commitment_hash", hex_encode(crypto::sha3_256(canonical::encode(json(bc))))}});

    json exec_pt{{"input", config_.exec_input}};
    json exec_body{
        {"sealed", seal_payload(sel.record.session_key, exec_pt, rng_.next_bytes(kNonceSize))}};
    out.sends.push_back(
        make(*state_.selected, sel.session_id, MsgType::EXEC_REQUEST, exec_body, now));
    transition(RequesterPhase::EXECUTING, "EXEC_REQUEST");
    audit_.append(now, id_, "exec_request", json::object());
    out.timers.push_back({"exec", bc.terms.deadline_ms + 1});
    return out;
}

Outbox RequesterEngine::handle_exec_result(const SignedEnvelope& env, std::int64_t now) {
    if (state_.phase != RequesterPhase::EXECUTING) return rejected(Err::IllegalPhase);
    if (!state_.selected || env.sender != *state_.selected) {
        return rejected(Err::IllegalPhase, "result from a non-selected provider");
    }
    SessionAttempt& sel = state_.sessions.at(*state_.selected);
    if (env.session_id != sel.session_id) return rejected(Err::IllegalPhase, "wrong session");
    auto body = env.body_json();
    if (!body) return rejected(Err::ParseError);
    auto sealed = field<json>(*body, "sealed");
    if (!sealed) return rejected(Err::SchemaViolation);
    auto opened = open_payload(sel.record.session_key, *sealed);
    if (!opened) return rejected(Err::KeyConfirmationFailed);

    const Terms& terms = state_.binding->terms;
    std::string abort_reason;
    if (auto err = field<std::string>(*opened, "error")) {
        if (*err == to_string(Err::SlotMismatch)) abort_reason = "slots";
        else if (*err == to_string(Err::DeadlineExceeded)) abort_reason = "deadline";
        else abort_reason = "execution";
    } else if (now > terms.deadline_ms) {
        abort_reason = "deadline";
    } else {
        auto quality = field<double>(*opened, "quality");
        auto output = field<json>(*opened, "output");
        bool slots_ok = output && output->is_object();
        if (slots_ok) {
            for (const ParamSlot& slot : state_.binding->capability.output) {
                if (!output->contains(slot.name)) slots_ok = false;
            }
            for (const auto& [k, v] : output->items()) {
                bool declared = false;
                for (const ParamSlot& slot : state_.binding->capability.output) {
                    if (slot.name == k) declared = true;
                }
                if (!declared) slots_ok = false;
            }
        }
        if (!slots_ok) abort_reason = "slots";
        else if (!quality || *quality < terms.quality_min) abort_reason = "quality";
    }

    Outbox out;
    Hash32 h = env.hash();
    if (abort_reason.empty()) {
        state_.decision = "commit";
        json pt{{"decision", "commit"}};
        out.sends.push_back(make(*state_.selected, sel.session_id, MsgType::COMMIT,
                                 json{{"sealed", seal_payload(sel.record.session_key, pt,
                                                              rng_.next_bytes(kNonceSize))}},
                                 now));
        transition(RequesterPhase::COMMITTED, "COMMIT", &h);
        audit_.append(now, id_, "decision", json{{"decision", "commit"}});
        finalize_dcu(true, now, out);
    } else {
        state_.decision = "abort";
        state_.abort_reason = abort_reason;
        json pt{{"decision", "abort"}, {"reason", abort_reason}};
        out.sends.push_back(make(*state_.selected, sel.session_id, MsgType::ABORT,
                                 json{{"sealed", seal_payload(sel.record.session_key, pt,
                                                              rng_.next_bytes(kNonceSize))}},
                                 now));
        transition(RequesterPhase::ABORTED, "ABORT", &h);
        audit_.append(now, id_, "decision", json{{"decision", "abort"}, {"reason", abort_reason}});
        finalize_dcu(false, now, out);
    }
    return out;
}

void RequesterEngine::abort_run(const std::string& reason, std::int64_t now, Outbox& out,
                                const std::string& on_event) {
    state_.abort_reason = reason;
    state_.decision = "abort";
    for (auto& [peer, attempt] : state_.sessions) {
        if (attempt.stage != SessionAttempt::Stage::ESTABLISHED) continue;
        if (state_.selected && peer == *state_.selected) {
            json pt{{"decision", "abort"}, {"reason", reason}};
            out.sends.push_back(make(peer, attempt.session_id, MsgType::ABORT,
                                     json{{"sealed", seal_payload(attempt.record.session_key, pt,
                                                                  rng_.next_bytes(kNonceSize))}},
                                     now));
        } else if (state_.phase == RequesterPhase::SESSIONS_ESTABLISHED) {
            out.sends.push_back(make(peer, attempt.session_id, MsgType::SSA_REJECT,
                                     json{{"reason", "negotiation_aborted"}}, now));
        }
    }
    transition(RequesterPhase::ABORTED, on_event);
    audit_.append(now, id_, "aborted", json{{"reason", reason}});
    finalize_dcu(false, now, out);
}

void RequesterEngine::finalize_dcu(bool committed, std::int64_t now, Outbox& out) {
    json entry{{"committed", committed}, {"transcript_head", hex_encode(state_.transcript_head)}};
    if (state_.selected) entry["provider"] = *state_.selected;
    if (!state_.abort_reason.empty()) entry["reason"] = state_.abort_reason;
    if (state_.binding && !committed) {
        // penalty owed under the agreed terms is logged, never transferred
        entry["penalty_due"] = state_.binding->terms.penalty;
    }
    audit_.append(now, id_, "dcu", entry);

    if (state_.selected) {
        auto it = state_.sessions.find(*state_.selected);
        if (it != state_.sessions.end() && it->second.stage == SessionAttempt::Stage::ESTABLISHED) {
            json pt{{"committed", committed},
                    {"outcome", committed ? 1.0 : 0.0},
                    {"transcript_head", hex_encode(state_.transcript_head)}};
            out.sends.push_back(make(*state_.selected, it->second.session_id, MsgType::DCU,
                                     json{{"sealed", seal_payload(it->second.record.session_key, pt,
                                                                  rng_.next_bytes(kNonceSize))}},
                                     now));
        }
    }
    // session teardown: drop sequence floors and expired nonce entries
    for (auto& [peer, attempt] : state_.sessions) {
        replay_.forget_session(peer, attempt.session_id);
    }
    replay_.evict_expired(now);
    transition(RequesterPhase::FINALIZED, "DCU");
}

Outbox RequesterEngine::on_timer(const std::string& timer_id, std::int64_t now_ms) {
    Outbox out;
    if (timer_id == "cd") {
        if (state_.phase == RequesterPhase::INIT) {
            transition(RequesterPhase::ABORTED, "TIMEOUT");
            state_.abort_reason = "discovery_timeout";
            state_.decision = "abort";
            audit_.append(now_ms, id_, "aborted", json{{"reason", state_.abort_reason}});
            finalize_dcu(false, now_ms, out);
        }
        return out;
    }
    if (timer_id.starts_with("session:")) {
        std::string peer_name = timer_id.substr(8);
        for (auto& [peer, attempt] : state_.sessions) {
            if (peer.name != peer_name) continue;
            if (attempt.stage == SessionAttempt::Stage::SSR_SENT ||
                attempt.stage == SessionAttempt::Stage::SSE_SENT) {
                attempt.stage = SessionAttempt::Stage::FAILED;
                attempt.failure_reason = "timeout";
                audit_.append(now_ms, id_, "session_failed",
                              json{{"peer", peer}, {"reason", "timeout"}});
            }
        }
        maybe_finish_session_stage(now_ms, out);
        return out;
    }
    if (timer_id == "bc") {
        if (state_.phase == RequesterPhase::AGREED) {
            abort_run("bc_timeout", now_ms, out, "TIMEOUT");
        }
        return out;
    }
    if (timer_id == "exec") {
        if (state_.phase == RequesterPhase::EXECUTING) {
            state_.decision = "abort";
            state_.abort_reason = "deadline";
            SessionAttempt& sel = state_.sessions.at(*state_.selected);
            json pt{{"decision", "abort"}, {"reason", "deadline"}};
            out.sends.push_back(make(*state_.selected, sel.session_id, MsgType::ABORT,
                                     json{{"sealed", seal_payload(sel.record.session_key, pt,
                                                                  rng_.next_bytes(kNonceSize))}},
                                     now_ms));
            transition(RequesterPhase::ABORTED, "TIMEOUT");
            audit_.append(now_ms, id_, "decision",
                          json{{"decision", "abort"}, {"reason", "deadline"}});
            finalize_dcu(false, now_ms, out);
        }
        return out;
    }
    return out;
}

// -------------------------------------------------------- ProviderEngine

ProviderEngine::ProviderEngine(Anri anri, crypto::KeyPair keys, Bytes ca_root,
                               ProviderConfig config, SkillHandler skill, DetRng rng,
                               std::string instance_id)
    : id_(anri.id),
      anri_(std::move(anri)),
      keys_(std::move(keys)),
      ca_root_(std::move(ca_root)),
      config_(std::move(config)),
      skill_(std::move(skill)),
      rng_(std::move(rng)),
      instance_id_(std::move(instance_id)) {}

SignedEnvelope ProviderEngine::make(const AgentId& to, const Bytes& session, MsgType t,
                                    const json& body, std::int64_t now) {
    return make_envelope(keys_, id_, to, session, t, body, rng_.next_bytes(kNonceSize), now,
                         ++out_seq_[hex_encode(session)]);
}

void ProviderEngine::transition(ProviderPhase to, const std::string& on, const Hash32* env_hash) {
    transitions_.push_back(TransitionRecord{instance_id_, "provider", to_string(state_.phase),
                                            to_string(to), on,
                                            env_hash ? hex_encode(*env_hash) : ""});
    state_.phase = to;
}

Result<json> ProviderEngine::open_session_body(const SignedEnvelope& env) {
    if (!state_.session) return Result<json>::failure(Err::IllegalPhase, "no session");
    if (env.session_id != state_.session->session_id) {
        return Result<json>::failure(Err::IllegalPhase, "wrong session");
    }
    auto body = env.body_json();
    if (!body) return Result<json>::failure(Err::ParseError, "bad body");
    auto sealed = field<json>(*body, "sealed");
    if (!sealed) return Result<json>::failure(Err::SchemaViolation, "missing sealed payload");
    return open_payload(state_.session->session_key, *sealed);
}

Outbox ProviderEngine::on_envelope(const SignedEnvelope& env, std::int64_t now_ms) {
    Outbox out;
    if (env.msg_type == MsgType::SSR) {
        // SSR introduces the peer key and runs its own checks
        out = handle_ssr(env, now_ms);
    } else if (peer_pk_.empty() || env.sender != peer_) {
        return rejected(Err::SignatureInvalid, "unknown sender");
    } else if (!verify_envelope(env, peer_pk_)) {
        return rejected(Err::SignatureInvalid);
    } else if (auto r = replay_.peek(env, now_ms); !r) {
        return rejected(r.code(), r.error().detail);
    } else {
        switch (env.msg_type) {
            case MsgType::SSE_INIT: out = handle_sse_init(env, now_ms); break;
            case MsgType::SSA_ACCEPT:
            case MsgType::SSA_REJECT: out = handle_ssa(env, now_ms); break;
            case MsgType::EXEC_REQUEST: out = handle_exec_request(env, now_ms); break;
            case MsgType::COMMIT:
            case MsgType::ABORT: out = handle_decision(env, now_ms); break;
            case MsgType::DCU: out = handle_dcu(env, now_ms); break;
            default:
                out = rejected(Err::IllegalPhase,
                               std::string("unexpected ") + to_string(env.msg_type));
        }
    }
    if (out.accepted) replay_.record_accept(env);
    return out;
}

Outbox ProviderEngine::handle_ssr(const SignedEnvelope& env, std::int64_t now) {
    auto body = env.body_json();
    if (!body) return rejected(Err::ParseError);
    auto cert_j = field<json>(*body, "requester_cert");
    auto supported_j = field<json>(*body, "supported");
    if (!cert_j || !supported_j) return rejected(Err::SchemaViolation);
    Certificate cert;
    ProtocolExtension theirs;
    try {
        cert = cert_j->get<Certificate>();
        theirs = supported_j->get<ProtocolExtension>();
    } catch (const std::exception&) {
        return rejected(Err::SchemaViolation);
    }
    if (cert.subject != env.sender || !verify_certificate(cert, ca_root_)) {
        return rejected(Err::CredentialFailure);
    }
    if (!verify_envelope(env, cert.public_key)) return rejected(Err::SignatureInvalid);
    // replay defense first: a replayed SSR is named as such even if the
    // phase has moved on since the original was served
    if (auto r = replay_.peek(env, now); !r) return rejected(r.code(), r.error().detail);
    if (state_.phase != ProviderPhase::REGISTERED) return rejected(Err::IllegalPhase);

    audit_.append(now, id_, "ssr_received", json{{"peer", env.sender}});

    auto negotiated = negotiate_extension(config_.supported, theirs);
    Outbox out;
    if (!negotiated) {
        // signed rejection; the provider stays available
        json rej{{"cert", anri_.security.cert},
                 {"rejected", to_string(Err::IncompatibleVersions)},
                 {"supported", config_.supported}};
        out.sends.push_back(make(env.sender, env.session_id, MsgType::SSO, rej, now));
        audit_.append(now, id_, "sso_rejected", json{{"peer", env.sender}});
        return out;
    }

    peer_ = env.sender;
    peer_pk_ = cert.public_key;
    peer_list_hash_ = list_hash(theirs);
    my_list_hash_ = list_hash(config_.supported);
    negotiated_ = *negotiated;
    offered_terms_ = Terms{anri_.metadata.cost_per_unit.value_or(0.0),
                           now + config_.offer_deadline_rel_ms, config_.offer_quality_min,
                           config_.offer_penalty};

    json offer{{"capabilities", anri_.capabilities},
               {"cert", anri_.security.cert},
               {"supported", config_.supported},
               {"terms", offered_terms_}};
    out.sends.push_back(make(env.sender, env.session_id, MsgType::SSO, offer, now));
    Hash32 h = env.hash();
    transition(ProviderPhase::OFFER_SENT, "SSR", &h);
    audit_.append(now, id_, "sso_sent", json{{"peer", env.sender}});
    out.timers.push_back({"offer", now + config_.step_timeout_ms});
    return out;
}

Outbox ProviderEngine::handle_sse_init(const SignedEnvelope& env, std::int64_t now) {
    if (state_.phase != ProviderPhase::OFFER_SENT) return rejected(Err::IllegalPhase);
    auto body = env.body_json();
    if (!body) return rejected(Err::ParseError);
    auto peer_eph = hex_field(*body, "ecdh_public", crypto::kKeySize);
    auto nonce_r = hex_field(*body, "nonce_r", kNonceSize);
    if (!peer_eph || !nonce_r) return rejected(Err::SchemaViolation);

    ephemeral_ = crypto::x25519_from_seed(rng_.next_bytes(crypto::kKeySize));
    Bytes nonce_p = rng_.next_bytes(kNonceSize);
    Bytes shared = crypto::x25519_shared(ephemeral_.secret_key, *peer_eph);
    Hash32 key = crypto::derive_session_key(shared, *nonce_r, nonce_p);
    Bytes session_key(key.begin(), key.end());

    state_.session = SessionRecord{env.session_id, negotiated_, session_key, peer_list_hash_, now};

    // Encrypted echo of both supported lists exactly as this side saw or sent
    // them in the clear; a stripped SSO or SSR cannot survive the comparison.
    json confirm_pt{{"confirm", "ok"},
                    {"provider_list_hash", hex_encode(my_list_hash_)},
                    {"requester_list_hash", hex_encode(peer_list_hash_)}};
    json body_out{{"ecdh_public", hex_encode(ephemeral_.public_key)},
                  {"nonce_p", hex_encode(nonce_p)},
                  {"sealed", seal_payload(session_key, confirm_pt, rng_.next_bytes(kNonceSize))}};
    Outbox out;
    out.sends.push_back(make(env.sender, env.session_id, MsgType::SSE_CONFIRM, body_out, now));
    Hash32 h = env.hash();
    transition(ProviderPhase::SESSION_ESTABLISHED, "SSE_INIT", &h);
    audit_.append(now, id_, "session_established", json{{"peer", env.sender}});
    out.timers.push_back({"session", now + config_.step_timeout_ms});
    return out;
}

Outbox ProviderEngine::handle_ssa(const SignedEnvelope& env, std::int64_t now) {
    if (state_.phase != ProviderPhase::SESSION_ESTABLISHED) return rejected(Err::IllegalPhase);
    if (!state_.session || env.session_id != state_.session->session_id) {
        return rejected(Err::IllegalPhase, "wrong session");
    }
    Hash32 h = env.hash();
    if (env.msg_type == MsgType::SSA_REJECT) {
        transition(ProviderPhase::REJECTED, "SSA_REJECT", &h);
        audit_.append(now, id_, "rejected", json::object());
        state_.session.reset();
        return Outbox{};
    }

    auto opened = open_session_body(env);
    if (!opened) return rejected(opened.code(), opened.error().detail);
    auto cap_j = field<json>(*opened, "capability");
    auto terms_j = field<json>(*opened, "terms");
    auto req_sig = hex_field(*opened, "requester_signature");
    if (!cap_j || !terms_j || !req_sig) return rejected(Err::SchemaViolation);
    CapabilitySpec cap;
    Terms terms;
    try {
        cap = cap_j->get<CapabilitySpec>();
        terms = terms_j->get<Terms>();
    } catch (const std::exception&) {
        return rejected(Err::SchemaViolation);
    }

    // the agreed capability must be advertised by this agent, and the terms
    // must be exactly the offer made in SSO
    bool advertised = false;
    for (const CapabilitySpec& mine : anri_.capabilities) {
        if (canonical::encode(json(mine)) == canonical::encode(json(cap))) advertised = true;
    }
    if (!advertised) return rejected(Err::ConsistencyNotVerified, "capability not advertised");
    if (canonical::encode(json(terms)) != canonical::encode(json(offered_terms_))) {
        return rejected(Err::TermsMismatch, "terms differ from the SSO offer");
    }

    BindingCommitment bc;
    bc.requester = env.sender;
    bc.provider = id_;
    bc.capability = cap;
    bc.terms = terms;
    bc.requester_signature = *req_sig;
    Bytes preimage = canonical::encode_bytes(bc.preimage_json());
    if (!crypto::verify(peer_pk_, preimage, bc.requester_signature)) {
        return rejected(Err::SignatureInvalid, "draft commitment signature");
    }
    bc.provider_signature = crypto::sign(keys_, preimage);
    state_.commitment = bc;

    transition(ProviderPhase::ACCEPTED, "SSA_ACCEPT", &h);
    audit_.append(now, id_, "accepted", json{{"peer", env.sender}});

    Outbox out;
    json bc_pt{{"commitment", bc}};
    out.sends.push_back(make(env.sender, env.session_id, MsgType::BC,
                             json{{"sealed", seal_payload(state_.session->session_key, bc_pt,
                                                          rng_.next_bytes(kNonceSize))}},
                             now));
    transition(ProviderPhase::COMMITTED, "BC");
    audit_.append(
        now, id_, "bc_sent",
        json{{"commitment_hash", hex_encode(crypto::sha3_256(canonical::encode(json(bc))))}});
    out.timers.push_back({"bc", now + config_.step_timeout_ms});
    return out;
}

Outbox ProviderEngine::handle_exec_request(const SignedEnvelope& env, std::int64_t now) {
    if (state_.phase != ProviderPhase::COMMITTED) return rejected(Err::IllegalPhase);
    auto opened = open_session_body(env);
    if (!opened) return rejected(opened.code(), opened.error().detail);
    auto input = field<json>(*opened, "input");
    if (!input) return rejected(Err::SchemaViolation);

    json result_pt;
    if (now > state_.commitment->terms.deadline_ms) {
        result_pt = json{{"detail", "deadline passed before execution"},
                         {"error", to_string(Err::DeadlineExceeded)}};
    } else {
        bool slots_ok = input->is_object();
        if (slots_ok) {
            for (const ParamSlot& slot : state_.commitment->capability.input) {
                if (!input->contains(slot.name)) slots_ok = false;
            }
            for (const auto& [k, v] : input->items()) {
                bool declared = false;
                for (const ParamSlot& slot : state_.commitment->capability.input) {
                    if (slot.name == k) declared = true;
                }
                if (!declared) slots_ok = false;
            }
        }
        if (!slots_ok) {
            // the skill is never invoked on malformed payloads
            result_pt = json{{"detail", "payload does not fit the bound input slots"},
                             {"error", to_string(Err::SlotMismatch)}};
        } else {
            auto exec = skill_ ? skill_(*input)
                               : Result<ExecOutput>::failure(Err::ExecutionFailure, "no handler");
            if (exec) {
                result_pt = json{{"output", exec->output}, {"quality", exec->quality}};
            } else {
                result_pt = json{{"detail", exec.error().detail},
                                 {"error", to_string(Err::ExecutionFailure)}};
            }
        }
    }

    Outbox out;
    out.sends.push_back(make(env.sender, env.session_id, MsgType::EXEC_RESULT,
                             json{{"sealed", seal_payload(state_.session->session_key, result_pt,
                                                          rng_.next_bytes(kNonceSize))}},
                             now));
    Hash32 h = env.hash();
    transition(ProviderPhase::EXECUTING, "EXEC_REQUEST", &h);
    audit_.append(now, id_, "exec",
                  json{{"error", result_pt.value("error", std::string())},
                       {"ok", !result_pt.contains("error")}});
    out.timers.push_back({"exec", now + config_.step_timeout_ms});
    return out;
}

Outbox ProviderEngine::handle_decision(const SignedEnvelope& env, std::int64_t now) {
    bool is_commit = env.msg_type == MsgType::COMMIT;
    if (is_commit && state_.phase != ProviderPhase::EXECUTING) return rejected(Err::IllegalPhase);
    if (!is_commit && state_.phase != ProviderPhase::EXECUTING &&
        state_.phase != ProviderPhase::COMMITTED) {
        return rejected(Err::IllegalPhase);
    }
    auto opened = open_session_body(env);
    if (!opened) return rejected(opened.code(), opened.error().detail);
    Hash32 h = env.hash();
    if (is_commit) {
        transition(ProviderPhase::DONE, "COMMIT", &h);
        audit_.append(now, id_, "commit", json::object());
    } else {
        state_.abort_reason = field<std::string>(*opened, "reason").value_or("unspecified");
        transition(ProviderPhase::ABORTED, "ABORT", &h);
        audit_.append(now, id_, "abort", json{{"reason", state_.abort_reason}});
    }
    return Outbox{};
}

Outbox ProviderEngine::handle_dcu(const SignedEnvelope& env, std::int64_t now) {
    bool decided = state_.phase == ProviderPhase::DONE || state_.phase == ProviderPhase::ABORTED;
    bool awaiting = state_.phase == ProviderPhase::EXECUTING ||
                    state_.phase == ProviderPhase::COMMITTED;
    if (!decided && !awaiting) return rejected(Err::IllegalPhase);
    auto opened = open_session_body(env);
    if (!opened) return rejected(opened.code(), opened.error().detail);
    bool committed = field<bool>(*opened, "committed").value_or(false);

    // links reorder under random latency: a DCU may overtake the COMMIT or
    // ABORT it trails, so apply the decision it carries
    if (awaiting) {
        if (committed && state_.phase != ProviderPhase::EXECUTING) {
            return rejected(Err::IllegalPhase, "commit DCU before execution");
        }
        Hash32 h = env.hash();
        if (committed) {
            transition(ProviderPhase::DONE, "DCU", &h);
            audit_.append(now, id_, "commit", json{{"via", "dcu"}});
        } else {
            state_.abort_reason = field<std::string>(*opened, "reason").value_or("dcu");
            transition(ProviderPhase::ABORTED, "DCU", &h);
            audit_.append(now, id_, "abort", json{{"via", "dcu"}});
        }
    }

    double old_rep = anri_.metadata.reputation_or_default();
    double new_rep = dcu_reputation(old_rep, committed);
    Anri updated = Registry::reputation_updated_record(anri_, new_rep);
    Bytes sig = crypto::sign(keys_, canonical::encode_bytes(updated.preimage_json()));
    std::string registry_result = "no_sink";
    if (reputation_sink_) {
        Status s = reputation_sink_(id_, new_rep, sig);
        registry_result = s.ok() ? "ok" : s.error().message();
        if (s.ok()) {
            updated.signature = sig;
            anri_ = updated;
        }
    }
    audit_.append(now, id_, "dcu",
                  json{{"committed", committed},
                       {"registry", registry_result},
                       {"reputation", new_rep},
                       {"transcript_head",
                        field<std::string>(*opened, "transcript_head").value_or(std::string())}});
    if (state_.session) replay_.forget_session(peer_, state_.session->session_id);
    replay_.evict_expired(now);
    return Outbox{};
}

Outbox ProviderEngine::on_timer(const std::string& timer_id, std::int64_t now_ms) {
    Outbox out;
    if (timer_id == "offer" && state_.phase == ProviderPhase::OFFER_SENT) {
        transition(ProviderPhase::REGISTERED, "TIMEOUT");
        audit_.append(now_ms, id_, "offer_expired", json::object());
    } else if (timer_id == "session" && state_.phase == ProviderPhase::SESSION_ESTABLISHED) {
        transition(ProviderPhase::REGISTERED, "TIMEOUT");
        state_.session.reset();
        audit_.append(now_ms, id_, "session_expired", json::object());
    } else if (timer_id == "bc" && state_.phase == ProviderPhase::COMMITTED) {
        transition(ProviderPhase::ABORTED, "TIMEOUT");
        state_.abort_reason = "exec_timeout";
        audit_.append(now_ms, id_, "abort", json{{"reason", state_.abort_reason}});
    } else if (timer_id == "exec" && state_.phase == ProviderPhase::EXECUTING) {
        transition(ProviderPhase::ABORTED, "TIMEOUT");
        state_.abort_reason = "decision_timeout";
        audit_.append(now_ms, id_, "abort", json{{"reason", state_.abort_reason}});
    }
    return out;
}

}  // namespace acnbp
