#include "codesign/engine.hpp"

#include "codesign/error.hpp"
#include "codesign/reward_lang.hpp"
#include "codesign/text.hpp"

#include <algorithm>
#include <cmath>

namespace codesign::engine {

namespace {

bool aborts_run(Errc code)
{
    switch (code) {
    case Errc::ProviderError:
    case Errc::FixtureExhausted:
    case Errc::NoViableCandidates:
    case Errc::SpawnError:
    case Errc::HandshakeTimeout:
    case Errc::ProtocolVersionMismatch:
    case Errc::WorkerFailure:
        return true;
    default:
        return false;
    }
}

bool provider_failure(Errc code) { return code == Errc::ProviderError || code == Errc::FixtureExhausted; }

std::string slot_id(char prefix, int index) { return std::string(1, prefix) + std::to_string(index); }

} // namespace

std::vector<PairId> rank_results(const std::map<PairId, EvaluationResult>& results)
{
    std::vector<PairId> ranking;
    for (const auto& [pair, r] : results)
        if (r.ok())
            ranking.push_back(pair);
    // The map iterates in pair order, so a stable sort keeps ties lexicographic.
    std::stable_sort(ranking.begin(), ranking.end(), [&](const PairId& a, const PairId& b) {
        return results.at(a).score() > results.at(b).score();
    });
    return ranking;
}

std::size_t selection_count(std::size_t ok_count, double fraction)
{
    const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(ok_count)));
    return std::min(ok_count, std::max<std::size_t>(1, k));
}

std::vector<PairId> select_top_k(const std::map<PairId, EvaluationResult>& results, double fraction)
{
    auto ranking = rank_results(results);
    if (ranking.empty())
        throw Error(Errc::NoViableCandidates, "every grid evaluation failed");
    ranking.resize(selection_count(ranking.size(), fraction));
    return ranking;
}

std::uint64_t derive_seed(std::uint64_t run_seed, std::string_view key)
{
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : key) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    std::uint64_t z = run_seed ^ h;
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Engine::Engine(RunConfig config, Deps deps) : config_(std::move(config)), deps_(std::move(deps))
{
    config_.validate();
    if (!deps_.schema || !deps_.provider || !deps_.evaluator)
        throw Error(Errc::ConfigError, "engine needs a schema, a provider and an evaluator");
    deps_.task.validate(*deps_.schema);
}

void Engine::note(const std::string& line) const
{
    if (deps_.log)
        *deps_.log << line << '\n';
}

std::optional<MorphologyCandidate> Engine::propose_morphology(const RunState& state, int index)
{
    const MorphologySchema& schema = *deps_.schema;
    std::vector<prompts::ArchiveEntry> archive;
    for (const auto& m : state.morphologies)
        archive.push_back({m.id, llm::render_params_block(m.values, schema), std::nullopt});
    const auto prompt = prompts::build_proposal_prompt(prompts::Kind::morphology, deps_.task, archive,
                                                       deps_.templates, config_.context_budget);

    const std::string id = slot_id('m', index);
    const std::function<MorphologyCandidate(const std::string&)> parse = [&](const std::string& text) {
        const auto checked = validate_morphology(schema, llm::extract_params_block(text, schema));
        MorphologyCandidate m;
        m.id = id;
        m.values = checked.values;
        m.provenance = Provenance::llm_proposal;
        for (const auto& v : checked.violations)
            m.clamped.push_back(v.param);
        return m;
    };
    llm::LlmRequest req{prompt.system, prompt.user, llm::kProposalTemperature, config_.llm_max_retries,
                        llm::Tag::morph_propose};
    for (int attempt = 0; attempt <= kRefillAttempts; ++attempt) {
        std::vector<std::string> problems;
        if (auto m = llm::complete_parsed(*deps_.provider, req, parse, &problems))
            return m;
        note(id + ": no usable proposal (" + problems.back() + ")");
    }
    return std::nullopt;
}

RewardCandidate Engine::admit_reward(std::string id, const std::string& response) const
{
    RewardCandidate r;
    r.id = std::move(id);
    r.source = llm::extract_code_block(response);
    if (auto allowed = deps_.evaluator->reward_variables()) {
        reward::check_variables(reward::parse(r.source), *allowed);
        r.dialect = RewardDialect::builtin_dsl;
    } else {
        r.dialect = RewardDialect::external_code;
    }
    return r;
}

std::optional<RewardCandidate> Engine::propose_reward(const RunState& state, int index)
{
    std::vector<prompts::ArchiveEntry> archive;
    for (const auto& r : state.rewards)
        archive.push_back({r.id, r.source, std::nullopt});
    const auto prompt = prompts::build_proposal_prompt(prompts::Kind::reward, deps_.task, archive, deps_.templates,
                                                       config_.context_budget);

    const std::string id = slot_id('r', index);
    const std::function<RewardCandidate(const std::string&)> parse = [&](const std::string& text) {
        return admit_reward(id, text);
    };
    llm::LlmRequest req{prompt.system, prompt.user, llm::kProposalTemperature, config_.llm_max_retries,
                        llm::Tag::reward_propose};
    for (int attempt = 0; attempt <= kRefillAttempts; ++attempt) {
        std::vector<std::string> problems;
        if (auto r = llm::complete_parsed(*deps_.provider, req, parse, &problems))
            return r;
        note(id + ": no usable proposal (" + problems.back() + ")");
    }
    return std::nullopt;
}

GridOutcome Engine::coarse_search(RunState& state)
{
    for (int i = static_cast<int>(state.morphologies.size()) + 1; i <= config_.n_morphologies; ++i) {
        auto m = propose_morphology(state, i);
        if (!m)
            throw Error(Errc::ProviderError, "no parseable morphology for slot " + slot_id('m', i));
        if (deps_.store)
            deps_.store->record_morphology(*m, deps_.provider->cursor());
        state.morphologies.push_back(std::move(*m));
        note("proposed " + state.morphologies.back().id);
    }
    for (int j = static_cast<int>(state.rewards.size()) + 1; j <= config_.n_rewards; ++j) {
        auto r = propose_reward(state, j);
        if (!r)
            throw Error(Errc::ProviderError, "no parseable reward for slot " + slot_id('r', j));
        if (deps_.store)
            deps_.store->record_reward(*r, deps_.provider->cursor());
        state.rewards.push_back(std::move(*r));
        note("proposed " + state.rewards.back().id);
    }

    std::vector<bridge::EvalRequest> requests;
    for (const auto& m : state.morphologies)
        for (const auto& r : state.rewards) {
            const PairId pair{m.id, r.id};
            if (!state.grid.contains(pair))
                requests.push_back({&m, &r, derive_seed(config_.seed, store::grid_key(pair)),
                                    config_.training_budget});
        }
    bridge::evaluate_all(*deps_.evaluator, requests, [&](std::size_t, const EvaluationResult& result) {
        if (deps_.store)
            deps_.store->record_grid(result);
        state.grid[result.pair] = result;
        note("grid " + result.pair.str() + " " + std::string(to_string(result.status)) +
             (result.ok() ? " efficiency " + format_real(*result.efficiency) : ""));
    });

    GridOutcome out;
    out.results = state.grid;
    out.ranking = rank_results(state.grid);
    if (state.selected.empty()) {
        state.selected = select_top_k(state.grid, config_.top_k_fraction);
        if (deps_.store)
            deps_.store->record_selection(state.selected);
    }
    out.selected = state.selected;
    return out;
}

prompts::RankedSample Engine::sample_for(const RunState& state, const EvaluationResult& result) const
{
    const auto* m = state.find_morphology(result.pair.morphology_id);
    const auto* r = state.find_reward(result.pair.reward_id);
    if (!m || !r)
        throw Error(Errc::ContractViolation, "no candidates recorded for " + result.pair.str());
    return {m->id, llm::render_params_block(m->values, *deps_.schema), r->id, r->source, *result.efficiency,
            result.fitness};
}

std::vector<prompts::RankedSample> Engine::ranked_context(const RunState& state, const PairId& pair) const
{
    std::map<PairId, EvaluationResult> pool;
    for (const auto& [p, r] : state.grid)
        if (r.ok())
            pool[p] = r;
    if (auto it = state.fine_trajectories.find(pair); it != state.fine_trajectories.end())
        for (const auto& step : it->second)
            if (step.result.ok())
                pool.emplace(step.result.pair, step.result);
    auto ranking = rank_results(pool);
    if (ranking.size() > config_.ranked_context_size)
        ranking.resize(config_.ranked_context_size);
    std::vector<prompts::RankedSample> out;
    for (const auto& p : ranking)
        out.push_back(sample_for(state, pool.at(p)));
    return out;
}

FineOutcome Engine::fine_optimize(RunState& state, const PairId& pair)
{
    const auto grid_it = state.grid.find(pair);
    const auto* m0 = state.find_morphology(pair.morphology_id);
    const auto* r0 = state.find_reward(pair.reward_id);
    if (grid_it == state.grid.end() || !grid_it->second.ok() || !m0 || !r0)
        throw Error(Errc::ContractViolation, pair.str() + " has no successful grid result");

    FineOutcome out{pair, *m0, *r0, grid_it->second, {}, false};
    const std::vector<FineStep> recorded = state.fine_trajectories[pair];
    auto find_recorded = [&](int iteration, FinePhase phase) -> const FineStep* {
        for (const auto& s : recorded)
            if (s.iteration == iteration && s.phase == phase)
                return &s;
        return nullptr;
    };

    for (int iteration = 1; iteration <= config_.fine_max_iterations && !out.provider_failed; ++iteration) {
        bool improved = false;
        for (FinePhase phase : {FinePhase::morphology, FinePhase::reward}) {
            FineStep step;
            if (const FineStep* prior = find_recorded(iteration, phase)) {
                step = *prior;
            } else {
                const bool morph = phase == FinePhase::morphology;
                const std::string cand_id =
                    pair.str() + "_i" + std::to_string(iteration) + (morph ? "_m" : "_r");
                const std::string key = store::fine_key(pair, iteration, phase);

                const auto ranked = ranked_context(state, pair);
                const auto prompt = prompts::build_refine_prompt(
                    morph ? prompts::Kind::morphology : prompts::Kind::reward, deps_.task,
                    sample_for(state, out.result), ranked, deps_.templates, config_.context_budget);
                llm::LlmRequest req{prompt.system, prompt.user, llm::kRefinementTemperature,
                                    config_.llm_max_retries, morph ? llm::Tag::morph_refine : llm::Tag::reward_refine};

                std::optional<MorphologyCandidate> new_m;
                std::optional<RewardCandidate> new_r;
                try {
                    if (morph) {
                        const std::function<MorphologyCandidate(const std::string&)> parse =
                            [&](const std::string& text) {
                                const auto checked = validate_morphology(
                                    *deps_.schema, llm::extract_params_block(text, *deps_.schema));
                                MorphologyCandidate m;
                                m.id = cand_id;
                                m.values = checked.values;
                                m.provenance = Provenance::llm_refinement;
                                m.parent_id = out.morphology.id;
                                for (const auto& v : checked.violations)
                                    m.clamped.push_back(v.param);
                                return m;
                            };
                        new_m = llm::complete_parsed(*deps_.provider, req, parse);
                    } else {
                        const std::function<RewardCandidate(const std::string&)> parse =
                            [&](const std::string& text) {
                                auto r = admit_reward(cand_id, text);
                                r.provenance = Provenance::llm_refinement;
                                r.parent_id = out.reward.id;
                                return r;
                            };
                        new_r = llm::complete_parsed(*deps_.provider, req, parse);
                    }
                } catch (const Error& e) {
                    if (!provider_failure(e.code()))
                        throw;
                    note("fine " + pair.str() + ": provider failed, keeping incumbent (" + e.what() + ")");
                    out.provider_failed = true;
                    break;
                }

                step.iteration = iteration;
                step.phase = phase;
                if (!new_m && !new_r) {
                    step.result = EvaluationResult::failed({out.morphology.id, out.reward.id},
                                                           EvalStatus::runtime_error, "no parseable proposal",
                                                           derive_seed(config_.seed, key));
                } else {
                    step.candidate_id = cand_id;
                    const MorphologyCandidate& em = new_m ? *new_m : out.morphology;
                    const RewardCandidate& er = new_r ? *new_r : out.reward;
                    step.result = deps_.evaluator->evaluate(em, er, derive_seed(config_.seed, key),
                                                            config_.fine_training_budget);
                    step.accepted = step.result.score() > out.result.score();
                }
                if (deps_.store)
                    deps_.store->record_fine_step(pair, step, new_m, new_r, deps_.provider->cursor());
                state.fine_trajectories[pair].push_back(step);
                if (new_m)
                    state.fine_morphologies[new_m->id] = *new_m;
                if (new_r)
                    state.fine_rewards[new_r->id] = *new_r;
                note("fine " + pair.str() + " iter " + std::to_string(iteration) + " " +
                     std::string(to_string(phase)) + " " + std::string(to_string(step.result.status)) +
                     (step.accepted ? " accepted" : ""));
            }

            out.steps.push_back(step);
            if (step.accepted) {
                if (step.phase == FinePhase::morphology)
                    out.morphology = *state.find_morphology(step.candidate_id);
                else
                    out.reward = *state.find_reward(step.candidate_id);
                out.result = step.result;
                improved = true;
            }
        }
        if (!improved)
            break;
    }

    if (deps_.store)
        deps_.store->mark_fine_done(pair, deps_.provider->cursor());
    return out;
}

RunReport Engine::run() { return run(RunState{}); }

RunReport Engine::run(RunState state)
{
    state.config = config_;
    auto set_status = [&](RunStatus s, std::string reason = {}) {
        state.status = s;
        if (deps_.store)
            deps_.store->set_status(s, std::move(reason));
    };
    if (state.status == RunStatus::aborted)
        state.status = state.selected.empty() ? RunStatus::coarse : RunStatus::fine;

    try {
        if (state.status == RunStatus::coarse) {
            const auto grid = coarse_search(state);
            note("selected " + std::to_string(grid.selected.size()) + " of " + std::to_string(grid.ranking.size()) +
                 " successful pairs");
            set_status(RunStatus::fine);
        }
        if (state.status == RunStatus::fine) {
            for (const auto& pair : state.selected) {
                if (deps_.store) {
                    const auto& done = deps_.store->manifest().fine_done;
                    if (std::find(done.begin(), done.end(), pair.str()) != done.end())
                        continue;
                }
                fine_optimize(state, pair);
            }
            set_status(RunStatus::done);
        }
    } catch (const Error& e) {
        if (!aborts_run(e.code()))
            throw;
        note(std::string("aborted: ") + e.what());
        set_status(RunStatus::aborted, e.what());
        return {state, store::best_result(state)};
    }

    RunReport report{state, store::best_result(state)};
    if (deps_.store) {
        deps_.store->write_report(state, "md");
        deps_.store->write_report(state, "csv");
    }
    return report;
}

RunReport Engine::resume()
{
    if (!deps_.store)
        throw Error(Errc::ConfigError, "resume needs a run store");
    RunState state = deps_.store->load_state();
    deps_.provider->restore(deps_.store->manifest().llm_cursor);
    return run(std::move(state));
}

} // namespace codesign::engine
