#include "codesign/model.hpp"

#include "codesign/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <set>

namespace codesign {

namespace {

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

bool same_real(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view s, const std::string_view (&names)[N], std::string_view what)
{
    for (std::size_t i = 0; i < N; ++i)
        if (names[i] == s)
            return static_cast<Enum>(i);
    throw Error(Errc::ParseError, "unknown " + std::string(what) + " '" + std::string(s) + "'");
}

constexpr std::string_view provenance_names[] = {"llm_proposal", "llm_refinement", "fixture"};
constexpr std::string_view dialect_names[] = {"builtin_dsl", "external_code"};
constexpr std::string_view status_names[] = {"ok", "reward_parse_error", "runtime_error", "timeout",
                                             "nonfinite"};
constexpr std::string_view run_status_names[] = {"coarse", "fine", "done", "aborted"};
constexpr std::string_view phase_names[] = {"morphology", "reward"};

} // namespace

std::string_view to_string(Provenance p) { return provenance_names[static_cast<int>(p)]; }
std::string_view to_string(RewardDialect d) { return dialect_names[static_cast<int>(d)]; }
std::string_view to_string(EvalStatus s) { return status_names[static_cast<int>(s)]; }
std::string_view to_string(RunStatus s) { return run_status_names[static_cast<int>(s)]; }
std::string_view to_string(FinePhase p) { return phase_names[static_cast<int>(p)]; }

Provenance provenance_from_string(std::string_view s)
{
    return parse_enum<Provenance>(s, provenance_names, "provenance");
}
RewardDialect dialect_from_string(std::string_view s)
{
    return parse_enum<RewardDialect>(s, dialect_names, "dialect");
}
EvalStatus eval_status_from_string(std::string_view s)
{
    return parse_enum<EvalStatus>(s, status_names, "status");
}
RunStatus run_status_from_string(std::string_view s)
{
    return parse_enum<RunStatus>(s, run_status_names, "run status");
}
FinePhase fine_phase_from_string(std::string_view s)
{
    return parse_enum<FinePhase>(s, phase_names, "phase");
}

std::vector<std::string> template_placeholders(std::string_view text)
{
    std::vector<std::string> names;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] != '{' || i + 1 >= text.size() || !is_ident_start(text[i + 1]))
            continue;
        std::size_t j = i + 1;
        while (j < text.size() && is_ident_char(text[j]))
            ++j;
        if (j < text.size() && text[j] == '}') {
            std::string name(text.substr(i + 1, j - i - 1));
            if (std::find(names.begin(), names.end(), name) == names.end())
                names.push_back(std::move(name));
            i = j;
        }
    }
    return names;
}

void MorphologySchema::validate() const
{
    if (name.empty())
        throw Error(Errc::InvalidSchema, "schema name is empty");
    if (params.empty())
        throw Error(Errc::InvalidSchema, "schema '" + name + "' has no parameters");
    std::set<std::string> seen;
    for (const auto& p : params) {
        if (p.name.empty() || !is_ident_start(p.name.front()) ||
            !std::all_of(p.name.begin(), p.name.end(), is_ident_char))
            throw Error(Errc::InvalidSchema, "bad parameter name '" + p.name + "'");
        if (!seen.insert(p.name).second)
            throw Error(Errc::InvalidSchema, "duplicate parameter '" + p.name + "'");
        if (!std::isfinite(p.lower_bound) || !std::isfinite(p.upper_bound) ||
            !(p.lower_bound < p.upper_bound))
            throw Error(Errc::InvalidSchema, "parameter '" + p.name + "' needs lower < upper");
    }
    std::set<std::string> placeholders;
    for (auto& n : template_placeholders(structure_template))
        placeholders.insert(std::move(n));
    if (placeholders != seen)
        throw Error(Errc::InvalidSchema,
                    "structure template placeholders of '" + name + "' do not match its parameters");
}

const ParamSpec* MorphologySchema::find(std::string_view param) const
{
    for (const auto& p : params)
        if (p.name == param)
            return &p;
    return nullptr;
}

std::vector<std::string> MorphologySchema::param_names() const
{
    std::vector<std::string> out;
    out.reserve(params.size());
    for (const auto& p : params)
        out.push_back(p.name);
    return out;
}

std::string MorphologySchema::fingerprint() const
{
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](std::string_view s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        h ^= 0xff;
        h *= 1099511628211ULL;
    };
    char buf[64];
    mix(name);
    for (const auto& p : params) {
        mix(p.name);
        std::snprintf(buf, sizeof buf, "%.17g", p.lower_bound);
        mix(buf);
        std::snprintf(buf, sizeof buf, "%.17g", p.upper_bound);
        mix(buf);
        mix(p.unit);
    }
    mix(structure_template);
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

double EvaluationResult::score() const noexcept
{
    if (ok() && efficiency)
        return *efficiency;
    return -std::numeric_limits<double>::infinity();
}

EvaluationResult EvaluationResult::evaluated(PairId pair, double fitness, double volume,
                                             double train_return, std::uint64_t seed)
{
    EvaluationResult r;
    r.pair = std::move(pair);
    r.seed = seed;
    r.fitness = fitness;
    r.volume = volume;
    r.train_return = train_return;
    if (!std::isfinite(fitness) || !std::isfinite(volume)) {
        r.status = EvalStatus::nonfinite;
        r.detail = "non-finite fitness or volume";
        return r;
    }
    if (volume <= 0.0) {
        r.status = EvalStatus::runtime_error;
        r.detail = "volume must be positive";
        return r;
    }
    const double eff = fitness / volume;
    if (!std::isfinite(eff)) {
        r.status = EvalStatus::nonfinite;
        r.detail = "non-finite efficiency";
        return r;
    }
    r.status = EvalStatus::ok;
    r.efficiency = eff;
    return r;
}

EvaluationResult EvaluationResult::failed(PairId pair, EvalStatus status, std::string detail,
                                          std::uint64_t seed)
{
    EvaluationResult r;
    r.pair = std::move(pair);
    r.status = status == EvalStatus::ok ? EvalStatus::runtime_error : status;
    r.detail = std::move(detail);
    r.seed = seed;
    return r;
}

bool EvaluationResult::operator==(const EvaluationResult& o) const
{
    return pair == o.pair && status == o.status && same_real(fitness, o.fitness) &&
           same_real(volume, o.volume) && efficiency == o.efficiency &&
           same_real(train_return, o.train_return) && seed == o.seed && detail == o.detail;
}

void RunConfig::validate() const
{
    auto fail = [](const std::string& msg) { throw Error(Errc::ConfigError, msg); };
    if (n_morphologies < 1)
        fail("n_morphologies must be >= 1");
    if (n_rewards < 1)
        fail("n_rewards must be >= 1");
    if (!(top_k_fraction > 0.0 && top_k_fraction <= 1.0))
        fail("top_k_fraction must lie in (0, 1]");
    if (fine_max_iterations < 0)
        fail("fine_max_iterations must be >= 0");
    if (training_budget < 0 || fine_training_budget < 0 || retrain_budget < 0)
        fail("training budgets must be non-negative");
    if (llm_max_retries < 0)
        fail("llm_max_retries must be >= 0");
    if (ranked_context_size < 1)
        fail("ranked_context_size must be >= 1");
    if (evaluator.workers < 1)
        fail("evaluator.workers must be >= 1");
    if (!(evaluator.timeout_s > 0.0))
        fail("evaluator.timeout must be positive");
    if (evaluator.kind == EvaluatorSpec::Kind::subprocess && evaluator.argv.empty())
        fail("subprocess evaluator needs a command");
    if (evaluator.cem_iterations < 1 || evaluator.cem_elites < 1 ||
        evaluator.cem_elites >= evaluator.cem_population)
        fail("cem budget needs iterations >= 1 and 1 <= elites < population");
}

const MorphologyCandidate* RunState::find_morphology(std::string_view id) const
{
    for (const auto& m : morphologies)
        if (m.id == id)
            return &m;
    if (auto it = fine_morphologies.find(std::string(id)); it != fine_morphologies.end())
        return &it->second;
    return nullptr;
}

const RewardCandidate* RunState::find_reward(std::string_view id) const
{
    for (const auto& r : rewards)
        if (r.id == id)
            return &r;
    if (auto it = fine_rewards.find(std::string(id)); it != fine_rewards.end())
        return &it->second;
    return nullptr;
}

ValidatedMorphology validate_morphology(const MorphologySchema& schema, const ParamMap& values)
{
    for (const auto& [name, value] : values) {
        if (!schema.find(name))
            throw Error(Errc::ContractViolation,
                        "parameter '" + name + "' is not part of schema '" + schema.name + "'");
        if (!std::isfinite(value))
            throw Error(Errc::NonFiniteValue, "parameter '" + name + "' is not finite");
    }
    ValidatedMorphology out;
    for (const auto& p : schema.params) {
        auto it = values.find(p.name);
        if (it == values.end())
            throw Error(Errc::MissingParameter, p.name);
        const double clamped = std::clamp(it->second, p.lower_bound, p.upper_bound);
        if (clamped != it->second)
            out.violations.push_back({p.name, it->second, clamped});
        out.values[p.name] = clamped;
    }
    return out;
}

double efficiency(double fitness, double volume)
{
    if (!std::isfinite(fitness) || !std::isfinite(volume))
        throw Error(Errc::NonFiniteValue, "fitness and volume must be finite");
    if (volume <= 0.0)
        throw Error(Errc::NonPositiveVolume, "volume must be positive");
    return fitness / volume;
}

} // namespace codesign
