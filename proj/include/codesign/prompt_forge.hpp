#pragma once

// Prompt construction. Every builder is a pure function of its arguments.

#include "codesign/model.hpp"

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace codesign::prompts {

inline constexpr std::size_t kDefaultContextBudget = 24000;

/// Default markers whose presence means a reward definition leaked into
/// the environment source.
std::span<const std::string_view> reward_markers();

/// Everything the model sees about the task. `structure_template` holds the
/// structure file with every design parameter already masked.
struct TaskContext {
    std::string task_description;
    std::string environment_source; // reward definition removed
    std::string structure_template;
    std::string output_format;        // morphology answer format
    std::string reward_output_format; // reward answer format

    /// Throws ContractViolation when a field is empty, when the structure
    /// still exposes a schema parameter, when a parameter is missing from
    /// the output format, or when the environment source still carries a
    /// reward definition marker.
    void validate(const MorphologySchema& schema,
                  std::span<const std::string_view> forbidden = reward_markers()) const;
};

/// Replaces each `{name}` placeholder for the listed parameters with
/// `<MASKED:name>`. Idempotent. Throws MaskMiss when a listed parameter
/// has no occurrence, masked or not.
std::string mask_structure(std::string_view structure, std::span<const std::string> params);

/// `name: <value in [lo, hi] unit>` listing of every schema parameter.
std::string morphology_output_format(const MorphologySchema& schema);

/// Builds a context from a schema, masking its structure template.
TaskContext make_task_context(const MorphologySchema& schema, std::string task_description,
                              std::string environment_source, std::string reward_output_format);

enum class Kind { morphology, reward };

/// One earlier proposal, as shown in the diversity reflection section.
struct ArchiveEntry {
    std::string id;
    std::string body; // fenced parameter block or reward source
    std::optional<double> efficiency;
};

/// One evaluated pair for refinement prompts.
struct RankedSample {
    std::string morphology_id;
    std::string morphology_block;
    std::string reward_id;
    std::string reward_source;
    double efficiency = 0.0;
    double fitness = 0.0;
};

struct Prompt {
    std::string system;
    std::string user;
};

/// Template texts with `{{name}}` placeholders. `load` reads `<key>.txt`
/// files from a directory, keeping the built-in text for any key without a
/// file. Known keys: morph_system, reward_system, morph_propose,
/// reward_propose, morph_diversity, reward_diversity, archive_entry,
/// morph_refine, reward_refine, ranked_entry.
class PromptTemplates {
public:
    static PromptTemplates builtin();
    static PromptTemplates load(const std::string& directory);

    const std::string& get(std::string_view key) const;
    void set(std::string_view key, std::string text);

private:
    std::map<std::string, std::string, std::less<>> texts_;
};

/// Substitutes `{{name}}` placeholders. Throws ContractViolation on an
/// unknown placeholder.
std::string fill(std::string_view text, const std::map<std::string, std::string, std::less<>>& values);

/// Initial proposal prompt. With a non-empty archive a diversity reflection
/// section lists the earlier proposals, oldest first; oldest entries are
/// dropped first when the prompt would exceed `budget` characters.
Prompt build_proposal_prompt(Kind kind, const TaskContext& ctx, std::span<const ArchiveEntry> archive,
                             const PromptTemplates& templates = PromptTemplates::builtin(),
                             std::size_t budget = kDefaultContextBudget);

/// Refinement prompt around the current best pair and a ranked list (best
/// first); lowest-ranked samples are dropped first to fit `budget`.
/// Throws ContractViolation when `ranked` is empty or out of order.
Prompt build_refine_prompt(Kind kind, const TaskContext& ctx, const RankedSample& best,
                           std::span<const RankedSample> ranked,
                           const PromptTemplates& templates = PromptTemplates::builtin(),
                           std::size_t budget = kDefaultContextBudget);

} // namespace codesign::prompts
