#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "acnbp/audit.hpp"
#include "acnbp/cps.hpp"
#include "acnbp/envelope.hpp"
#include "acnbp/registry.hpp"
#include "acnbp/rng.hpp"

namespace acnbp {

enum class RequesterPhase {
    INIT,
    DISCOVERED,
    SCREENED,
    SESSIONS_REQUESTED,
    SESSIONS_ESTABLISHED,
    AGREED,
    BOUND,
    EXECUTING,
    COMMITTED,
    ABORTED,
    FINALIZED,
};

enum class ProviderPhase {
    REGISTERED,
    OFFER_SENT,
    SESSION_ESTABLISHED,
    ACCEPTED,
    REJECTED,
    COMMITTED,
    EXECUTING,
    DONE,
    ABORTED,
};

const char* to_string(RequesterPhase p);
const char* to_string(ProviderPhase p);

struct Terms {
    double price = 0.0;
    std::int64_t deadline_ms = 0;  // absolute virtual-clock deadline
    double quality_min = 0.0;
    double penalty = 0.0;

    bool operator==(const Terms&) const = default;
};

void to_json(json& j, const Terms& v);
void from_json(const json& j, Terms& v);

struct BindingCommitment {
    AgentId requester;
    AgentId provider;
    CapabilitySpec capability;
    Terms terms;
    Bytes requester_signature;
    Bytes provider_signature;

    json preimage_json() const;
    bool operator==(const BindingCommitment&) const = default;
};

void to_json(json& j, const BindingCommitment& v);
void from_json(const json& j, BindingCommitment& v);

bool verify_commitment(const BindingCommitment& bc, std::span<const std::uint8_t> requester_pk,
                       std::span<const std::uint8_t> provider_pk);

struct SessionRecord {
    Bytes session_id;  // 16 bytes
    NegotiatedExtension negotiated;
    Bytes session_key;  // 32 bytes, via derive_session_key
    Hash32 peer_extension_list_hash{};  // hash of the peer's signed supported list
    std::int64_t established_at = 0;
};

// ----------------------------------------------------------- consistency

struct ConsistencyReport {
    bool pass = true;
    std::vector<std::string> failures;  // dimension names, every failed one
};

// Five-dimension check (syntactic, semantic, operational, security,
// temporal). The query deadline constraints are relative to
// negotiation_start_ms: deadline_hours in hours, deadline_ms in ms.
ConsistencyReport consistency_check(const CapabilityQuery& query, const CapabilitySpec& offered,
                                    const SessionRecord& session, const Terms& terms,
                                    std::int64_t negotiation_start_ms);

// --------------------------------------------------------- transition law

struct TransitionRecord {
    std::string instance_id;
    std::string actor;  // "requester" | "provider"
    std::string phase_from;
    std::string phase_to;
    std::string msg_type;  // triggering message or internal event tag
    std::string envelope_hash;  // hex, empty for internal events
};

void to_json(json& j, const TransitionRecord& v);

// The published legal-transition law. The engine-embedded tables are asserted
// equal to the data files shipped in data/ by the conformance tests.
class TransitionTable {
public:
    void add(std::string from, std::string to, std::string on);
    bool allows(const std::string& from, const std::string& to, const std::string& on) const;
    json to_json() const;
    static Result<TransitionTable> from_json(const json& j);
    size_t size() const { return entries_.size(); }
    bool operator==(const TransitionTable&) const = default;

    static const TransitionTable& requester();
    static const TransitionTable& provider();

private:
    std::set<std::array<std::string, 3>> entries_;
};

// -------------------------------------------------------------- plumbing

struct TimerRequest {
    std::string id;
    std::int64_t at_ms = 0;
};

struct Outbox {
    std::vector<SignedEnvelope> sends;
    std::vector<TimerRequest> timers;
    bool accepted = true;        // delivery disposition for the inbound event
    std::string reject_reason;   // named check when !accepted
};

// Simulator-facing agent surface.
class Agent {
public:
    virtual ~Agent() = default;
    virtual const AgentId& id() const = 0;
    virtual Outbox on_envelope(const SignedEnvelope& env, std::int64_t now_ms) = 0;
    virtual Outbox on_timer(const std::string& timer_id, std::int64_t now_ms) { (void)timer_id; (void)now_ms; return {}; }
};

// Step 10 reputation update: EWMA with alpha 0.2.
inline double dcu_reputation(double old_reputation, bool committed) {
    return 0.2 * (committed ? 1.0 : 0.0) + 0.8 * old_reputation;
}

// ----------------------------------------------------------- ANS service

// The registry speaking CD_QUERY/CD_RESPONSE on the bus.
class AnsService final : public Agent {
public:
    AnsService(AgentId id, crypto::KeyPair keys, Registry* registry, DetRng rng);

    const AgentId& id() const override { return id_; }
    const Bytes& public_key() const { return keys_.public_key; }
    Outbox on_envelope(const SignedEnvelope& env, std::int64_t now_ms) override;

private:
    AgentId id_;
    crypto::KeyPair keys_;
    Registry* registry_;
    DetRng rng_;
    ReplayWindow replay_;
    std::map<std::string, std::uint64_t> out_seq_;
};

// ------------------------------------------------------------- requester

struct RequesterConfig {
    CapabilityQuery query;
    ScoringWeights weights;
    int parallel_sessions = 3;
    size_t discovery_limit = 16;
    std::int64_t step_timeout_ms = 5000;
    ProtocolExtension supported{Version{1, 2, 0}, {"batch", "streaming"}, Version{1, 0, 0}};
    json exec_input;  // payload for the bound capability's input slots
};

struct SessionAttempt {
    enum class Stage { SSR_SENT, SSE_SENT, ESTABLISHED, FAILED };
    AgentId peer;
    Anri anri;
    Bytes session_id;
    Stage stage = Stage::SSR_SENT;
    std::string failure_reason;
    // offer data (from SSO)
    std::vector<CapabilitySpec> offered;
    Terms offer_terms;
    ProtocolExtension peer_supported;
    Hash32 peer_list_hash{};
    NegotiatedExtension negotiated;
    // key agreement
    crypto::EcdhKeyPair ephemeral;
    Bytes nonce_r;
    SessionRecord record;  // valid when ESTABLISHED
};

struct RequesterState {
    RequesterPhase phase = RequesterPhase::INIT;
    std::vector<AgentId> shortlist;                 // CPS ranking
    std::map<AgentId, SessionAttempt> sessions;
    std::optional<AgentId> selected;
    std::optional<BindingCommitment> binding;
    std::vector<Hash32> transcript;                 // envelope hashes in order
    Hash32 transcript_head{};
    std::string abort_reason;
    std::vector<CandidateScore> cps_scores;
    std::optional<std::string> decision;            // "commit" | "abort"
};

class RequesterEngine final : public Agent {
public:
    RequesterEngine(AgentId id, crypto::KeyPair keys, Certificate cert, AgentId ans_id,
                    Bytes ans_public_key, Bytes ca_root, RequesterConfig config, DetRng rng,
                    std::string instance_id = "negotiation-0");

    // Step 1: issue the discovery query (security floor relaxed; CPS applies
    // the full requirement set).
    Outbox start(std::int64_t now_ms);

    const AgentId& id() const override { return id_; }
    Outbox on_envelope(const SignedEnvelope& env, std::int64_t now_ms) override;
    Outbox on_timer(const std::string& timer_id, std::int64_t now_ms) override;

    const RequesterState& state() const { return state_; }
    const std::vector<TransitionRecord>& transitions() const { return transitions_; }
    const AuditLog& audit() const { return audit_; }
    int ssa_accepts_emitted() const { return ssa_accepts_emitted_; }
    int bindings_stored() const { return bindings_stored_; }
    const Bytes& public_key() const { return keys_.public_key; }
    const RequesterConfig& config() const { return config_; }

private:
    Outbox handle_cd_response(const SignedEnvelope& env, std::int64_t now);
    Outbox handle_sso(const SignedEnvelope& env, std::int64_t now);
    Outbox handle_sse_confirm(const SignedEnvelope& env, std::int64_t now);
    Outbox handle_bc(const SignedEnvelope& env, std::int64_t now);
    Outbox handle_exec_result(const SignedEnvelope& env, std::int64_t now);

    void screen_candidates(const std::vector<Anri>& candidates, std::int64_t now, Outbox& out);
    void maybe_finish_session_stage(std::int64_t now, Outbox& out);
    void select_and_agree(std::int64_t now, Outbox& out);
    void abort_run(const std::string& reason, std::int64_t now, Outbox& out,
                   const std::string& on_event);
    void finalize_dcu(bool committed, std::int64_t now, Outbox& out);

    SignedEnvelope make(const AgentId& to, const Bytes& session, MsgType t, const json& body,
                        std::int64_t now);
    void transition(RequesterPhase to, const std::string& on, const Hash32* env_hash = nullptr);
    SessionAttempt* session_for(const SignedEnvelope& env);
    bool sender_key_known(const SignedEnvelope& env, Bytes& out_pk) const;

    AgentId id_;
    crypto::KeyPair keys_;
    Certificate cert_;
    AgentId ans_id_;
    Bytes ans_pk_;
    Bytes ca_root_;
    RequesterConfig config_;
    DetRng rng_;
    std::string instance_id_;

    RequesterState state_;
    ReplayWindow replay_;
    AuditLog audit_;
    std::vector<TransitionRecord> transitions_;
    std::map<std::string, std::uint64_t> out_seq_;
    Bytes discovery_session_;
    std::int64_t start_ms_ = 0;
    int ssa_accepts_emitted_ = 0;
    int bindings_stored_ = 0;
};

// -------------------------------------------------------------- provider

struct ExecOutput {
    json output;
    double quality = 0.0;
};
using SkillHandler = std::function<Result<ExecOutput>(const json& input)>;

struct ProviderConfig {
    ProtocolExtension supported{Version{1, 2, 0}, {"batch", "streaming"}, Version{1, 0, 0}};
    std::int64_t offer_deadline_rel_ms = 72000000;  // deadline offered, relative to SSO time
    double offer_quality_min = 0.95;
    double offer_penalty = 0.1;
    std::int64_t step_timeout_ms = 10000;
};

struct ProviderState {
    ProviderPhase phase = ProviderPhase::REGISTERED;
    std::optional<SessionRecord> session;
    std::optional<BindingCommitment> commitment;
    std::string abort_reason;
};

class ProviderEngine final : public Agent {
public:
    using ReputationSink =
        std::function<Status(const AgentId& id, double new_reputation, const Bytes& signature)>;

    ProviderEngine(Anri anri, crypto::KeyPair keys, Bytes ca_root, ProviderConfig config,
                   SkillHandler skill, DetRng rng, std::string instance_id = "negotiation-0");

    const AgentId& id() const override { return id_; }
    Outbox on_envelope(const SignedEnvelope& env, std::int64_t now_ms) override;
    Outbox on_timer(const std::string& timer_id, std::int64_t now_ms) override;

    // DCU writes the EWMA-updated reputation back through this sink with a
    // record re-signed by the agent key.
    void set_reputation_sink(ReputationSink sink) { reputation_sink_ = std::move(sink); }
    void set_current_record(const Anri& anri) { anri_ = anri; }

    const ProviderState& state() const { return state_; }
    const std::vector<TransitionRecord>& transitions() const { return transitions_; }
    const AuditLog& audit() const { return audit_; }
    const Bytes& public_key() const { return keys_.public_key; }
    const Anri& record() const { return anri_; }
    const ProviderConfig& config() const { return config_; }

private:
    Outbox handle_ssr(const SignedEnvelope& env, std::int64_t now);
    Outbox handle_sse_init(const SignedEnvelope& env, std::int64_t now);
    Outbox handle_ssa(const SignedEnvelope& env, std::int64_t now);
    Outbox handle_exec_request(const SignedEnvelope& env, std::int64_t now);
    Outbox handle_decision(const SignedEnvelope& env, std::int64_t now);
    Outbox handle_dcu(const SignedEnvelope& env, std::int64_t now);

    SignedEnvelope make(const AgentId& to, const Bytes& session, MsgType t, const json& body,
                        std::int64_t now);
    void transition(ProviderPhase to, const std::string& on, const Hash32* env_hash = nullptr);
    Result<json> open_session_body(const SignedEnvelope& env);

    AgentId id_;
    Anri anri_;
    crypto::KeyPair keys_;
    Bytes ca_root_;
    ProviderConfig config_;
    SkillHandler skill_;  // private to the agent, never serialized
    DetRng rng_;
    std::string instance_id_;

    ProviderState state_;
    ReplayWindow replay_;
    AuditLog audit_;
    std::vector<TransitionRecord> transitions_;
    std::map<std::string, std::uint64_t> out_seq_;
    ReputationSink reputation_sink_;

    // per-negotiation peer context
    AgentId peer_;
    Bytes peer_pk_;
    Hash32 peer_list_hash_{};   // hash of requester's supported list from SSR
    Hash32 my_list_hash_{};     // hash of the list this provider actually sent
    NegotiatedExtension negotiated_;
    Terms offered_terms_;
    crypto::EcdhKeyPair ephemeral_;
};

}  // namespace acnbp
