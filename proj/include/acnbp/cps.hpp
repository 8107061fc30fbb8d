#pragma once

#include <optional>
#include <span>
#include <vector>

#include "acnbp/core_model.hpp"

namespace acnbp {

struct ScoringWeights {
    double compatibility = 0.30;
    double security = 0.25;
    double reputation = 0.20;
    double cost = 0.15;
    double risk = 0.10;

    bool valid() const;
    double sum() const { return compatibility + security + reputation + cost + risk; }
};

void to_json(json& j, const ScoringWeights& v);
void from_json(const json& j, ScoringWeights& v);

struct CandidateScore {
    AgentId agent;
    double compatibility = 0.0;
    bool security_ok = false;
    double reputation = 0.0;
    double cost_utility = 0.0;
    double risk = 0.0;
    double total = 0.0;  // 0 when eliminated
    bool eliminated = false;
    std::string elimination_reason;          // "compatibility" | "security"
    std::optional<size_t> matched_capability;  // index into the ANRI capabilities
};

void to_json(json& j, const CandidateScore& v);

// Five-phase screening of one candidate. Phase 1 scores semantic + constraint
// compatibility (security deliberately deferred so Phase 2 owns that gate and
// its elimination reason). cohort_min_cost feeds the cost-utility ratio; when
// absent the candidate is treated as the cohort minimum.
CandidateScore evaluate_candidate(const CapabilityQuery& query, const Anri& anri,
                                  const ScoringWeights& weights,
                                  std::span<const std::uint8_t> ca_root,
                                  std::optional<double> cohort_min_cost = std::nullopt);

// Evaluates every candidate against the same cohort cost floor (minimum
// cost_per_unit over Phase-1/2 survivors).
std::vector<CandidateScore> evaluate_cohort(const CapabilityQuery& query,
                                            std::span<const Anri> candidates,
                                            const ScoringWeights& weights,
                                            std::span<const std::uint8_t> ca_root);

// Survivors sorted by total descending, ties broken by AgentId ascending.
std::vector<AgentId> rank_candidates(std::span<const CandidateScore> scores);

}  // namespace acnbp
