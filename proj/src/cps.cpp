#include "acnbp/cps.hpp"

#include <algorithm>
#include <cmath>

namespace acnbp {

bool ScoringWeights::valid() const {
    if (compatibility < 0 || security < 0 || reputation < 0 || cost < 0 || risk < 0) return false;
    return std::abs(sum() - 1.0) <= 1e-9;
}

void to_json(json& j, const ScoringWeights& v) {
    j = json{{"compatibility", v.compatibility},
             {"cost", v.cost},
             {"reputation", v.reputation},
             {"risk", v.risk},
             {"security", v.security}};
}

void from_json(const json& j, ScoringWeights& v) {
    j.at("compatibility").get_to(v.compatibility);
    j.at("security").get_to(v.security);
    j.at("reputation").get_to(v.reputation);
    j.at("cost").get_to(v.cost);
    j.at("risk").get_to(v.risk);
}

void to_json(json& j, const CandidateScore& v) {
    j = json{{"agent", v.agent},
             {"compatibility", v.compatibility},
             {"cost_utility", v.cost_utility},
             {"eliminated", v.eliminated},
             {"reputation", v.reputation},
             {"risk", v.risk},
             {"security_ok", v.security_ok},
             {"total", v.total}};
    if (v.eliminated) j["elimination_reason"] = v.elimination_reason;
}

namespace {

struct Phase12 {
    bool compat_ok = false;
    bool security_ok = false;
    double compatibility = 0.0;
    std::optional<size_t> matched_capability;
};

Phase12 screen(const CapabilityQuery& query, const Anri& anri,
               std::span<const std::uint8_t> ca_root) {
    Phase12 out;
    // Phase 1: semantic + constraint compatibility, security deferred.
    CapabilityQuery relaxed = query.relaxed_for_discovery();
    for (size_t i = 0; i < anri.capabilities.size(); ++i) {
        MatchResult m = match_capability(relaxed, anri.capabilities[i]);
        if (m.matched && (!out.matched_capability || m.similarity > out.compatibility)) {
            out.compat_ok = true;
            out.compatibility = m.similarity;
            out.matched_capability = i;
        }
    }
    if (!out.compat_ok) return out;
    // Phase 2: record integrity and the security floor on the matched capability.
    out.security_ok =
        verify_anri(anri, ca_root) &&
        security_dominates(anri.capabilities[*out.matched_capability].security, query.security_reqs);
    return out;
}

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

double cost_utility_of(const AnriMetadata& metadata, std::optional<double> cohort_min) {
    double cost = metadata.cost_per_unit.value_or(0.0);
    if (cost <= 0.0) return 1.0;
    return clamp01(cohort_min.value_or(cost) / cost);
}

}  // namespace

CandidateScore evaluate_candidate(const CapabilityQuery& query, const Anri& anri,
                                  const ScoringWeights& weights,
                                  std::span<const std::uint8_t> ca_root,
                                  std::optional<double> cohort_min_cost) {
    CandidateScore score;
    score.agent = anri.id;

    Phase12 p = screen(query, anri, ca_root);
    score.compatibility = p.compatibility;
    score.matched_capability = p.matched_capability;
    if (!p.compat_ok) {
        score.eliminated = true;
        score.elimination_reason = "compatibility";
        return score;
    }
    score.security_ok = p.security_ok;
    if (!p.security_ok) {
        score.eliminated = true;
        score.elimination_reason = "security";
        return score;
    }

    // Phases 3-5: reputation, cohort-relative cost utility, risk.
    score.reputation = anri.metadata.reputation_or_default();
    score.cost_utility = cost_utility_of(anri.metadata, cohort_min_cost);
    score.risk = anri.metadata.risk.value_or(1.0 - score.reputation);

    score.total = weights.compatibility * score.compatibility + weights.security * 1.0 +
                  weights.reputation * score.reputation + weights.cost * score.cost_utility +
                  weights.risk * (1.0 - score.risk);
    return score;
}

std::vector<CandidateScore> evaluate_cohort(const CapabilityQuery& query,
                                            std::span<const Anri> candidates,
                                            const ScoringWeights& weights,
                                            std::span<const std::uint8_t> ca_root) {
    std::optional<double> cohort_min;
    for (const Anri& anri : candidates) {
        Phase12 p = screen(query, anri, ca_root);
        if (!p.compat_ok || !p.security_ok) continue;
        double cost = anri.metadata.cost_per_unit.value_or(0.0);
        if (!cohort_min || cost < *cohort_min) cohort_min = cost;
    }
    std::vector<CandidateScore> scores;
    scores.reserve(candidates.size());
    for (const Anri& anri : candidates) {
        scores.push_back(evaluate_candidate(query, anri, weights, ca_root, cohort_min));
    }
    return scores;
}

std::vector<AgentId> rank_candidates(std::span<const CandidateScore> scores) {
    std::vector<const CandidateScore*> survivors;
    for (const CandidateScore& s : scores) {
        if (!s.eliminated) survivors.push_back(&s);
    }
    std::sort(survivors.begin(), survivors.end(),
              [](const CandidateScore* a, const CandidateScore* b) {
                  if (a->total != b->total) return a->total > b->total;
                  return a->agent < b->agent;
              });
    std::vector<AgentId> out;
    out.reserve(survivors.size());
    for (const CandidateScore* s : survivors) out.push_back(s->agent);
    return out;
}

}  // namespace acnbp
