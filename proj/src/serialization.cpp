#include "codesign/serialization.hpp"

#include "codesign/error.hpp"

#include <cmath>
#include <limits>

namespace codesign {

namespace {

Json real_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

double real_from(const Json& j, const char* key)
{
    auto it = j.find(key);
    if (it == j.end() || it->is_null())
        return std::numeric_limits<double>::quiet_NaN();
    return it->get<double>();
}

Json optional_string(const std::optional<std::string>& s) { return s ? Json(*s) : Json(nullptr); }

std::optional<std::string> optional_string_from(const Json& j, const char* key)
{
    auto it = j.find(key);
    if (it == j.end() || it->is_null())
        return std::nullopt;
    return it->get<std::string>();
}

Json result_json(const EvaluationResult& r, bool with_timing)
{
    Json j;
    j["pair"] = r.pair;
    j["status"] = to_string(r.status);
    j["fitness"] = real_or_null(r.fitness);
    j["volume"] = real_or_null(r.volume);
    j["efficiency"] = r.efficiency ? Json(*r.efficiency) : Json(nullptr);
    j["train_return"] = real_or_null(r.train_return);
    j["seed"] = r.seed;
    j["detail"] = r.detail;
    if (with_timing)
        j["wall_time"] = r.wall_time;
    return j;
}

} // namespace

void to_json(Json& j, const ParamSpec& p)
{
    j = Json{{"name", p.name}, {"lower_bound", p.lower_bound}, {"upper_bound", p.upper_bound},
             {"unit", p.unit}};
}

void from_json(const Json& j, ParamSpec& p)
{
    p.name = j.at("name").get<std::string>();
    p.lower_bound = j.at("lower_bound").get<double>();
    p.upper_bound = j.at("upper_bound").get<double>();
    p.unit = j.value("unit", std::string{});
}

void to_json(Json& j, const MorphologySchema& s)
{
    j = Json{{"name", s.name}, {"params", s.params}, {"structure_template", s.structure_template}};
}

void from_json(const Json& j, MorphologySchema& s)
{
    s.name = j.at("name").get<std::string>();
    s.params = j.at("params").get<std::vector<ParamSpec>>();
    s.structure_template = j.at("structure_template").get<std::string>();
}

void to_json(Json& j, const MorphologyCandidate& m)
{
    j = Json{{"id", m.id},
             {"values", m.values},
             {"provenance", to_string(m.provenance)},
             {"parent_id", optional_string(m.parent_id)},
             {"clamped", m.clamped}};
}

void from_json(const Json& j, MorphologyCandidate& m)
{
    m.id = j.at("id").get<std::string>();
    m.values = j.at("values").get<ParamMap>();
    m.provenance = provenance_from_string(j.at("provenance").get<std::string>());
    m.parent_id = optional_string_from(j, "parent_id");
    m.clamped = j.value("clamped", std::vector<std::string>{});
}

void to_json(Json& j, const RewardCandidate& r)
{
    j = Json{{"id", r.id},
             {"source", r.source},
             {"dialect", to_string(r.dialect)},
             {"provenance", to_string(r.provenance)},
             {"parent_id", optional_string(r.parent_id)}};
}

void from_json(const Json& j, RewardCandidate& r)
{
    r.id = j.at("id").get<std::string>();
    r.source = j.at("source").get<std::string>();
    r.dialect = dialect_from_string(j.at("dialect").get<std::string>());
    r.provenance = provenance_from_string(j.at("provenance").get<std::string>());
    r.parent_id = optional_string_from(j, "parent_id");
}

void to_json(Json& j, const PairId& p)
{
    j = Json{{"morphology_id", p.morphology_id}, {"reward_id", p.reward_id}};
}

void from_json(const Json& j, PairId& p)
{
    p.morphology_id = j.at("morphology_id").get<std::string>();
    p.reward_id = j.at("reward_id").get<std::string>();
}

void to_json(Json& j, const EvaluationResult& r) { j = result_json(r, true); }

void from_json(const Json& j, EvaluationResult& r)
{
    r.pair = j.at("pair").get<PairId>();
    r.status = eval_status_from_string(j.at("status").get<std::string>());
    r.fitness = real_from(j, "fitness");
    r.volume = real_from(j, "volume");
    auto eff = j.find("efficiency");
    r.efficiency.reset();
    if (eff != j.end() && !eff->is_null())
        r.efficiency = eff->get<double>();
    r.train_return = real_from(j, "train_return");
    r.seed = j.value("seed", std::uint64_t{0});
    r.detail = j.value("detail", std::string{});
    r.wall_time = j.value("wall_time", 0.0);
    if (r.ok() != r.efficiency.has_value())
        throw Error(Errc::ParseError, "result for " + r.pair.str() + " breaks the status invariant");
}

void to_json(Json& j, const ProviderSpec& p)
{
    j = Json{{"kind", p.kind == ProviderSpec::Kind::scripted_mock ? "scripted_mock" : "http_chat"}};
    if (p.kind == ProviderSpec::Kind::scripted_mock) {
        j["fixture"] = p.fixture_path;
    } else {
        j["endpoint"] = p.endpoint;
        j["model"] = p.model;
        j["api_key_env"] = p.api_key_env;
    }
}

void from_json(const Json& j, ProviderSpec& p)
{
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "scripted_mock") {
        p.kind = ProviderSpec::Kind::scripted_mock;
        p.fixture_path = j.at("fixture").get<std::string>();
    } else if (kind == "http_chat") {
        p.kind = ProviderSpec::Kind::http_chat;
        p.endpoint = j.at("endpoint").get<std::string>();
        p.model = j.at("model").get<std::string>();
        p.api_key_env = j.value("api_key_env", std::string("CODESIGN_LLM_API_KEY"));
    } else {
        throw Error(Errc::ConfigError, "unknown llm kind '" + kind + "'");
    }
}

void to_json(Json& j, const EvaluatorSpec& e)
{
    j = Json{{"kind", e.kind == EvaluatorSpec::Kind::builtin ? "builtin" : "subprocess"},
             {"workers", e.workers},
             {"timeout", e.timeout_s}};
    if (e.kind == EvaluatorSpec::Kind::subprocess)
        j["argv"] = e.argv;
    else
        j["cem"] = Json{{"population", e.cem_population},
                        {"elites", e.cem_elites},
                        {"iterations", e.cem_iterations}};
}

void from_json(const Json& j, EvaluatorSpec& e)
{
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "builtin")
        e.kind = EvaluatorSpec::Kind::builtin;
    else if (kind == "subprocess")
        e.kind = EvaluatorSpec::Kind::subprocess;
    else
        throw Error(Errc::ConfigError, "unknown evaluator kind '" + kind + "'");
    e.workers = j.value("workers", std::size_t{2});
    e.timeout_s = j.value("timeout", 1800.0);
    e.argv = j.value("argv", std::vector<std::string>{});
    if (auto cem = j.find("cem"); cem != j.end()) {
        e.cem_population = cem->value("population", 32);
        e.cem_elites = cem->value("elites", 8);
        e.cem_iterations = cem->value("iterations", 20);
    }
}

void to_json(Json& j, const RunConfig& c)
{
    j = Json{{"n_morphologies", c.n_morphologies},
             {"n_rewards", c.n_rewards},
             {"top_k_fraction", c.top_k_fraction},
             {"fine_max_iterations", c.fine_max_iterations},
             {"seed", c.seed},
             {"evaluator", c.evaluator},
             {"llm", c.llm},
             {"training_budget", c.training_budget},
             {"fine_training_budget", c.fine_training_budget},
             {"retrain_budget", c.retrain_budget},
             {"llm_max_retries", c.llm_max_retries},
             {"context_budget", c.context_budget},
             {"ranked_context_size", c.ranked_context_size}};
}

void from_json(const Json& j, RunConfig& c)
{
    RunConfig d;
    c.n_morphologies = j.value("n_morphologies", d.n_morphologies);
    c.n_rewards = j.value("n_rewards", d.n_rewards);
    c.top_k_fraction = j.value("top_k_fraction", d.top_k_fraction);
    c.fine_max_iterations = j.value("fine_max_iterations", d.fine_max_iterations);
    c.seed = j.value("seed", d.seed);
    c.evaluator = j.contains("evaluator") ? j.at("evaluator").get<EvaluatorSpec>() : d.evaluator;
    c.llm = j.contains("llm") ? j.at("llm").get<ProviderSpec>() : d.llm;
    c.training_budget = j.value("training_budget", d.training_budget);
    c.fine_training_budget = j.value("fine_training_budget", c.training_budget);
    c.retrain_budget = j.value("retrain_budget", d.retrain_budget);
    c.llm_max_retries = j.value("llm_max_retries", d.llm_max_retries);
    c.context_budget = j.value("context_budget", d.context_budget);
    c.ranked_context_size = j.value("ranked_context_size", d.ranked_context_size);
}

void to_json(Json& j, const FineStep& s)
{
    j = Json{{"iteration", s.iteration},
             {"phase", to_string(s.phase)},
             {"candidate_id", s.candidate_id},
             {"result", s.result},
             {"accepted", s.accepted}};
}

void from_json(const Json& j, FineStep& s)
{
    s.iteration = j.at("iteration").get<int>();
    s.phase = fine_phase_from_string(j.at("phase").get<std::string>());
    s.candidate_id = j.at("candidate_id").get<std::string>();
    s.result = j.at("result").get<EvaluationResult>();
    s.accepted = j.at("accepted").get<bool>();
}

std::string serialize_state(const RunState& state)
{
    Json j;
    j["config"] = state.config;
    j["status"] = to_string(state.status);
    j["morphologies"] = state.morphologies;
    j["rewards"] = state.rewards;
    Json grid = Json::array();
    for (const auto& [pair, result] : state.grid)
        grid.push_back(result_json(result, false));
    j["grid"] = std::move(grid);
    j["selected"] = state.selected;
    Json fine = Json::array();
    for (const auto& [pair, steps] : state.fine_trajectories) {
        Json traj = Json::array();
        for (const auto& s : steps) {
            Json sj = s;
            sj["result"] = result_json(s.result, false);
            traj.push_back(std::move(sj));
        }
        fine.push_back(Json{{"pair", pair}, {"steps", std::move(traj)}});
    }
    j["fine_trajectories"] = std::move(fine);
    Json fm = Json::array();
    for (const auto& [id, m] : state.fine_morphologies)
        fm.push_back(m);
    j["fine_morphologies"] = std::move(fm);
    Json fr = Json::array();
    for (const auto& [id, r] : state.fine_rewards)
        fr.push_back(r);
    j["fine_rewards"] = std::move(fr);
    return j.dump(2) + "\n";
}

} // namespace codesign
