#pragma once

// Coarse-to-fine co-design loop: diverse proposals, full grid evaluation,
// top-k selection, then alternating refinement per selected pair.

#include "codesign/eval_bridge.hpp"
#include "codesign/llm_gateway.hpp"
#include "codesign/model.hpp"
#include "codesign/prompt_forge.hpp"
#include "codesign/run_store.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string_view>
#include <vector>

namespace codesign::engine {

/// Extra attempts a coarse slot gets after a proposal could not be parsed
/// within its own retries.
inline constexpr int kRefillAttempts = 3;

struct Deps {
    const MorphologySchema* schema = nullptr;
    prompts::TaskContext task;
    prompts::PromptTemplates templates = prompts::PromptTemplates::builtin();
    llm::Provider* provider = nullptr;
    bridge::Evaluator* evaluator = nullptr;
    store::RunStore* store = nullptr; // optional; without it nothing is persisted
    std::ostream* log = nullptr;      // optional progress lines
};

struct GridOutcome {
    std::map<PairId, EvaluationResult> results;
    std::vector<PairId> ranking; // ok results, best first
    std::vector<PairId> selected;
};

/// Ok results by efficiency descending; equal efficiencies keep
/// (morphology_id, reward_id) order.
std::vector<PairId> rank_results(const std::map<PairId, EvaluationResult>& results);

/// max(1, floor(fraction * ok_count)).
std::size_t selection_count(std::size_t ok_count, double fraction);

/// Prefix of the ranking. Throws NoViableCandidates when no result is ok.
std::vector<PairId> select_top_k(const std::map<PairId, EvaluationResult>& results, double fraction);

/// Seed for one unit of work, mixed from the run seed and the unit's key.
std::uint64_t derive_seed(std::uint64_t run_seed, std::string_view key);

struct FineOutcome {
    PairId pair;
    MorphologyCandidate morphology;
    RewardCandidate reward;
    EvaluationResult result; // incumbent, never worse than the grid result
    std::vector<FineStep> steps;
    bool provider_failed = false;
};

struct RunReport {
    RunState state;
    std::optional<store::BestPair> best;
};

class Engine {
public:
    /// Throws ConfigError for an invalid config or missing dependency.
    Engine(RunConfig config, Deps deps);

    /// Proposes whatever morphologies and rewards `state` still lacks,
    /// evaluates every missing grid cell and selects the top pairs.
    /// Throws ProviderError/FixtureExhausted when the provider fails and
    /// ProviderError when a slot gets no parseable proposal at all.
    GridOutcome coarse_search(RunState& state);

    /// Alternating refinement of one selected pair. Steps already present
    /// in `state` are replayed rather than recomputed. A provider failure
    /// ends the pair's refinement with its incumbent.
    FineOutcome fine_optimize(RunState& state, const PairId& pair);

    /// Carries `state` to completion. A provider failure or an evaluator
    /// failure during the coarse stage leaves status aborted; the returned
    /// report then has no best pair unless the grid already had one.
    RunReport run(RunState state);
    RunReport run();

    /// Loads the state from the store, restores the provider cursor and
    /// continues. Requires a store.
    RunReport resume();

    const RunConfig& config() const { return config_; }

private:
    std::optional<MorphologyCandidate> propose_morphology(const RunState& state, int index);
    std::optional<RewardCandidate> propose_reward(const RunState& state, int index);
    RewardCandidate admit_reward(std::string id, const std::string& response) const;
    std::vector<prompts::RankedSample> ranked_context(const RunState& state, const PairId& pair) const;
    prompts::RankedSample sample_for(const RunState& state, const EvaluationResult& result) const;
    void note(const std::string& line) const;

    RunConfig config_;
    Deps deps_;
};

} // namespace codesign::engine
