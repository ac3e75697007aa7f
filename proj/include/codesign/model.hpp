#pragma once

// Domain types shared by every stage of the co-design engine.

#include <compare>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace codesign {

using ParamMap = std::map<std::string, double>;

struct ParamSpec {
    std::string name;
    double lower_bound = 0.0;
    double upper_bound = 1.0;
    std::string unit;
};

/// Named, bounded design space plus the structure file it renders into.
/// Placeholders in the template are written `{name}`.
struct MorphologySchema {
    std::string name;
    std::vector<ParamSpec> params;
    std::string structure_template;

    /// Throws Errc::InvalidSchema on duplicate names, empty or inverted
    /// bounds, or a template/parameter mismatch.
    void validate() const;

    const ParamSpec* find(std::string_view param) const;
    std::vector<std::string> param_names() const;

    /// Stable FNV-1a digest of names, bounds and template, hex encoded.
    std::string fingerprint() const;
};

/// Names of every `{identifier}` placeholder in `text`, in order of first
/// appearance, without duplicates.
std::vector<std::string> template_placeholders(std::string_view text);

enum class Provenance { llm_proposal, llm_refinement, fixture };
enum class RewardDialect { builtin_dsl, external_code };
enum class EvalStatus { ok, reward_parse_error, runtime_error, timeout, nonfinite };
enum class RunStatus { coarse, fine, done, aborted };
enum class FinePhase { morphology, reward };

std::string_view to_string(Provenance p);
std::string_view to_string(RewardDialect d);
std::string_view to_string(EvalStatus s);
std::string_view to_string(RunStatus s);
std::string_view to_string(FinePhase p);

Provenance provenance_from_string(std::string_view s);
RewardDialect dialect_from_string(std::string_view s);
EvalStatus eval_status_from_string(std::string_view s);
RunStatus run_status_from_string(std::string_view s);
FinePhase fine_phase_from_string(std::string_view s);

struct MorphologyCandidate {
    std::string id;
    ParamMap values;
    Provenance provenance = Provenance::llm_proposal;
    std::optional<std::string> parent_id;
    std::vector<std::string> clamped; // parameters clamped on admission

    bool operator==(const MorphologyCandidate&) const = default;
};

struct RewardCandidate {
    std::string id;
    std::string source;
    RewardDialect dialect = RewardDialect::builtin_dsl;
    Provenance provenance = Provenance::llm_proposal;
    std::optional<std::string> parent_id;

    bool operator==(const RewardCandidate&) const = default;
};

struct PairId {
    std::string morphology_id;
    std::string reward_id;

    std::string str() const { return morphology_id + "_" + reward_id; }
    auto operator<=>(const PairId&) const = default;
};

/// Outcome of training and measuring one (morphology, reward) pair.
/// Construct through `evaluated` or `failed` so the status/efficiency
/// invariant holds.
struct EvaluationResult {
    PairId pair;
    EvalStatus status = EvalStatus::runtime_error;
    double fitness = std::numeric_limits<double>::quiet_NaN();
    double volume = std::numeric_limits<double>::quiet_NaN();
    std::optional<double> efficiency;
    double train_return = std::numeric_limits<double>::quiet_NaN();
    double wall_time = 0.0;
    std::uint64_t seed = 0;
    std::string detail;

    bool ok() const noexcept { return status == EvalStatus::ok; }

    /// Efficiency for ordering; -inf for anything that is not ok.
    double score() const noexcept;

    /// Builds an ok result, or a nonfinite/runtime_error one when the
    /// measured values break the efficiency preconditions.
    static EvaluationResult evaluated(PairId pair, double fitness, double volume,
                                      double train_return, std::uint64_t seed);
    static EvaluationResult failed(PairId pair, EvalStatus status, std::string detail,
                                   std::uint64_t seed);

    bool operator==(const EvaluationResult&) const;
};

struct ProviderSpec {
    enum class Kind { scripted_mock, http_chat };
    Kind kind = Kind::scripted_mock;
    std::string fixture_path;
    std::string endpoint;
    std::string model;
    std::string api_key_env = "CODESIGN_LLM_API_KEY";

    bool operator==(const ProviderSpec&) const = default;
};

struct EvaluatorSpec {
    enum class Kind { builtin, subprocess };
    Kind kind = Kind::builtin;
    std::vector<std::string> argv;
    std::size_t workers = 2;
    double timeout_s = 1800.0;
    // Built-in trainer budget (cross-entropy method).
    int cem_population = 32;
    int cem_elites = 8;
    int cem_iterations = 20;

    bool operator==(const EvaluatorSpec&) const = default;
};

struct RunConfig {
    int n_morphologies = 25;
    int n_rewards = 5;
    double top_k_fraction = 0.05;
    int fine_max_iterations = 10;
    std::uint64_t seed = 0;
    EvaluatorSpec evaluator;
    ProviderSpec llm;
    std::int64_t training_budget = 500000;
    std::int64_t fine_training_budget = 500000;
    std::int64_t retrain_budget = 1000000;
    int llm_max_retries = 2;
    std::size_t context_budget = 24000;
    std::size_t ranked_context_size = 5;

    /// Throws Errc::ConfigError when a field is out of range.
    void validate() const;

    bool operator==(const RunConfig&) const = default;
};

struct FineStep {
    int iteration = 0;
    FinePhase phase = FinePhase::morphology;
    std::string candidate_id; // empty when no parseable proposal was obtained
    EvaluationResult result;
    bool accepted = false;

    bool operator==(const FineStep&) const = default;
};

struct RunState {
    RunConfig config;
    std::vector<MorphologyCandidate> morphologies;
    std::vector<RewardCandidate> rewards;
    std::map<PairId, EvaluationResult> grid;
    std::vector<PairId> selected;
    std::map<PairId, std::vector<FineStep>> fine_trajectories;
    std::map<std::string, MorphologyCandidate> fine_morphologies;
    std::map<std::string, RewardCandidate> fine_rewards;
    RunStatus status = RunStatus::coarse;

    const MorphologyCandidate* find_morphology(std::string_view id) const;
    const RewardCandidate* find_reward(std::string_view id) const;
};

struct ParamViolation {
    std::string param;
    double original = 0.0;
    double clamped_to = 0.0;
};

struct ValidatedMorphology {
    ParamMap values;
    std::vector<ParamViolation> violations; // soft: clamped values
};

/// Completes and clamps a parameter map against `schema`. Missing
/// parameters throw MissingParameter, NaN/inf throw NonFiniteValue and
/// names outside the schema throw ContractViolation.
ValidatedMorphology validate_morphology(const MorphologySchema& schema, const ParamMap& values);

/// fitness / volume; throws NonFiniteValue or NonPositiveVolume.
double efficiency(double fitness, double volume);

} // namespace codesign
