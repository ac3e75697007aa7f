#include "codesign/prompt_forge.hpp"

#include "codesign/error.hpp"
#include "codesign/text.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace codesign::prompts {

namespace {

using Values = std::map<std::string, std::string, std::less<>>;

constexpr std::string_view kMarkers[] = {"def compute_reward", "def _get_rew", "reward =",
                                         "reward="};

const char* const kMorphSystem =
    "You are a robot designer. You choose numeric values for the masked design parameters of a "
    "robot so that it performs its task well while using as little material as possible. "
    "Answer with the parameter block in exactly the requested output format.";

const char* const kRewardSystem =
    "You are a reward engineer. You write reward functions that teach a robot controller to "
    "solve its task. Answer with a single reward function in exactly the requested output "
    "format.";

const char* const kMorphPropose =
    "Task:\n{{task}}\n\n"
    "Robot structure file (design parameters are masked):\n{{structure}}\n\n"
    "Propose values for every masked parameter.\n\n"
    "Output format:\n{{format}}\n";

const char* const kRewardPropose =
    "Task:\n{{task}}\n\n"
    "Environment source (the reward definition has been removed):\n{{environment}}\n\n"
    "Write a reward function for this task.\n\n"
    "Output format:\n{{format}}\n";

const char* const kMorphDiversity =
    "\nDesigns proposed so far ({{count}}):\n{{entries}}\n"
    "Reflect on the designs above, then propose a new design that is as different from all of "
    "them as possible while still able to solve the task.\n";

const char* const kRewardDiversity =
    "\nReward functions proposed so far ({{count}}):\n{{entries}}\n"
    "Reflect on the reward functions above, then write a new one that is as different from all "
    "of them as possible while still encouraging the task behaviour.\n";

const char* const kArchiveEntry = "[{{id}}]{{score}}\n{{body}}\n";

const char* const kMorphRefine =
    "Task:\n{{task}}\n\n"
    "Robot structure file (design parameters are masked):\n{{structure}}\n\n"
    "Current best pair (efficiency {{best_efficiency}}):\n"
    "morphology {{best_morphology_id}}:\n{{best_morphology}}\n"
    "reward {{best_reward_id}}:\n{{best_reward}}\n\n"
    "Evaluated samples, best first:\n{{ranked}}\n"
    "Study how efficiency changes across these samples and move the morphology in the "
    "direction that raises it. Change only the morphology; keep the reward function "
    "{{best_reward_id}} fixed.\n\n"
    "Output format:\n{{format}}\n";

const char* const kRewardRefine =
    "Task:\n{{task}}\n\n"
    "Environment source (the reward definition has been removed):\n{{environment}}\n\n"
    "Current best pair (efficiency {{best_efficiency}}):\n"
    "morphology {{best_morphology_id}}:\n{{best_morphology}}\n"
    "reward {{best_reward_id}}:\n{{best_reward}}\n\n"
    "Evaluated samples, best first:\n{{ranked}}\n"
    "Rewrite the reward function so that it fits the current morphology "
    "{{best_morphology_id}} better. Change only the reward; keep the morphology fixed.\n\n"
    "Output format:\n{{format}}\n";

const char* const kRankedEntry =
    "#{{rank}} efficiency {{efficiency}}, fitness {{fitness}}\n"
    "morphology {{morphology_id}}:\n{{morphology}}\n"
    "reward {{reward_id}}:\n{{reward}}\n";

std::string read_file(const std::filesystem::path& p)
{
    std::ifstream in(p);
    if (!in)
        throw Error(Errc::IoError, "cannot read " + p.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::size_t total_size(const Prompt& p) { return p.system.size() + p.user.size(); }

} // namespace

std::span<const std::string_view> reward_markers() { return kMarkers; }

void TaskContext::validate(const MorphologySchema& schema,
                           std::span<const std::string_view> forbidden) const
{
    if (task_description.empty() || environment_source.empty() || structure_template.empty() ||
        output_format.empty() || reward_output_format.empty())
        throw Error(Errc::ContractViolation, "task context has an empty field");
    for (const auto& p : schema.params) {
        if (structure_template.find("{" + p.name + "}") != std::string::npos)
            throw Error(Errc::ContractViolation, "structure template exposes " + p.name);
        if (output_format.find(p.name) == std::string::npos)
            throw Error(Errc::ContractViolation, "output format does not list " + p.name);
    }
    for (auto marker : forbidden)
        if (environment_source.find(marker) != std::string::npos)
            throw Error(Errc::ContractViolation,
                        "environment source contains a reward definition (" + std::string(marker) + ")");
}

std::string mask_structure(std::string_view structure, std::span<const std::string> params)
{
    std::string out(structure);
    for (const auto& name : params) {
        const std::string placeholder = "{" + name + "}";
        const std::string token = "<MASKED:" + name + ">";
        std::size_t hits = 0;
        for (std::size_t pos = out.find(placeholder); pos != std::string::npos;
             pos = out.find(placeholder, pos + token.size())) {
            out.replace(pos, placeholder.size(), token);
            ++hits;
        }
        if (hits == 0 && out.find(token) == std::string::npos)
            throw Error(Errc::MaskMiss, "parameter " + name + " does not occur in the structure");
    }
    return out;
}

std::string morphology_output_format(const MorphologySchema& schema)
{
    std::string out = "```\n";
    for (const auto& p : schema.params)
        out += p.name + ": <number in [" + format_real(p.lower_bound) + ", " +
               format_real(p.upper_bound) + "]" + (p.unit.empty() ? "" : " " + p.unit) + ">\n";
    out += "```";
    return out;
}

TaskContext make_task_context(const MorphologySchema& schema, std::string task_description,
                              std::string environment_source, std::string reward_output_format)
{
    const auto names = schema.param_names();
    TaskContext ctx{std::move(task_description), std::move(environment_source),
                    mask_structure(schema.structure_template, names),
                    morphology_output_format(schema), std::move(reward_output_format)};
    ctx.validate(schema);
    return ctx;
}

PromptTemplates PromptTemplates::builtin()
{
    PromptTemplates t;
    t.texts_ = {{"morph_system", kMorphSystem},         {"reward_system", kRewardSystem},
                {"morph_propose", kMorphPropose},       {"reward_propose", kRewardPropose},
                {"morph_diversity", kMorphDiversity},   {"reward_diversity", kRewardDiversity},
                {"archive_entry", kArchiveEntry},       {"morph_refine", kMorphRefine},
                {"reward_refine", kRewardRefine},       {"ranked_entry", kRankedEntry}};
    return t;
}

PromptTemplates PromptTemplates::load(const std::string& directory)
{
    namespace fs = std::filesystem;
    if (!fs::is_directory(directory))
        throw Error(Errc::ConfigError, "template directory not found: " + directory);
    PromptTemplates t = builtin();
    for (const auto& [key, text] : builtin().texts_) {
        const fs::path file = fs::path(directory) / (key + ".txt");
        if (fs::exists(file))
            t.texts_[key] = read_file(file);
    }
    return t;
}

const std::string& PromptTemplates::get(std::string_view key) const
{
    auto it = texts_.find(key);
    if (it == texts_.end())
        throw Error(Errc::ContractViolation, "unknown template " + std::string(key));
    return it->second;
}

void PromptTemplates::set(std::string_view key, std::string text)
{
    get(key);
    texts_.find(key)->second = std::move(text);
}

std::string fill(std::string_view text, const Values& values)
{
    std::string out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        const auto open = text.find("{{", i);
        if (open == std::string_view::npos) {
            out.append(text.substr(i));
            break;
        }
        const auto close = text.find("}}", open + 2);
        if (close == std::string_view::npos)
            throw Error(Errc::ContractViolation, "unterminated placeholder in template");
        out.append(text.substr(i, open - i));
        const auto name = text.substr(open + 2, close - open - 2);
        auto it = values.find(name);
        if (it == values.end())
            throw Error(Errc::ContractViolation, "unknown placeholder {{" + std::string(name) + "}}");
        out += it->second;
        i = close + 2;
    }
    return out;
}

Prompt build_proposal_prompt(Kind kind, const TaskContext& ctx, std::span<const ArchiveEntry> archive,
                             const PromptTemplates& templates, std::size_t budget)
{
    const bool morph = kind == Kind::morphology;
    Values values{{"task", ctx.task_description},
                  {"structure", ctx.structure_template},
                  {"environment", ctx.environment_source},
                  {"format", morph ? ctx.output_format : ctx.reward_output_format}};
    Prompt base{templates.get(morph ? "morph_system" : "reward_system"),
                fill(templates.get(morph ? "morph_propose" : "reward_propose"), values)};
    if (archive.empty()) {
        if (total_size(base) > budget)
            throw Error(Errc::ContextOverflow, "base prompt exceeds the context budget");
        return base;
    }

    std::vector<std::string> rendered;
    for (const auto& e : archive)
        rendered.push_back(fill(templates.get("archive_entry"),
                                {{"id", e.id},
                                 {"score", e.efficiency ? " efficiency " + format_real(*e.efficiency) : ""},
                                 {"body", e.body}}));

    // Drop oldest entries until the prompt fits.
    for (std::size_t first = 0; first < rendered.size(); ++first) {
        std::string entries;
        for (std::size_t i = first; i < rendered.size(); ++i)
            entries += rendered[i];
        Prompt p = base;
        p.user += fill(templates.get(morph ? "morph_diversity" : "reward_diversity"),
                       {{"count", std::to_string(rendered.size() - first)}, {"entries", entries}});
        if (total_size(p) <= budget)
            return p;
    }
    throw Error(Errc::ContextOverflow, "not even one archive entry fits the context budget");
}

Prompt build_refine_prompt(Kind kind, const TaskContext& ctx, const RankedSample& best,
                           std::span<const RankedSample> ranked, const PromptTemplates& templates,
                           std::size_t budget)
{
    if (ranked.empty())
        throw Error(Errc::ContractViolation, "refinement needs at least one ranked sample");
    for (std::size_t i = 1; i < ranked.size(); ++i)
        if (ranked[i].efficiency > ranked[i - 1].efficiency)
            throw Error(Errc::ContractViolation, "ranked samples must be sorted best first");

    const bool morph = kind == Kind::morphology;
    std::vector<std::string> rendered;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        const auto& s = ranked[i];
        rendered.push_back(fill(templates.get("ranked_entry"),
                                {{"rank", std::to_string(i + 1)},
                                 {"efficiency", format_real(s.efficiency)},
                                 {"fitness", format_real(s.fitness)},
                                 {"morphology_id", s.morphology_id},
                                 {"morphology", s.morphology_block},
                                 {"reward_id", s.reward_id},
                                 {"reward", s.reward_source}}));
    }

    Values values{{"task", ctx.task_description},
                  {"structure", ctx.structure_template},
                  {"environment", ctx.environment_source},
                  {"format", morph ? ctx.output_format : ctx.reward_output_format},
                  {"best_efficiency", format_real(best.efficiency)},
                  {"best_morphology_id", best.morphology_id},
                  {"best_morphology", best.morphology_block},
                  {"best_reward_id", best.reward_id},
                  {"best_reward", best.reward_source}};
    const std::string& system = templates.get(morph ? "morph_system" : "reward_system");
    const std::string& body = templates.get(morph ? "morph_refine" : "reward_refine");
    for (std::size_t keep = rendered.size(); keep > 0; --keep) {
        std::string list;
        for (std::size_t i = 0; i < keep; ++i)
            list += rendered[i];
        values["ranked"] = list;
        Prompt p{system, fill(body, values)};
        if (total_size(p) <= budget)
            return p;
    }
    throw Error(Errc::ContextOverflow, "not even one ranked sample fits the context budget");
}

} // namespace codesign::prompts
