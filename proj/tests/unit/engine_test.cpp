#include "codesign/crawler_sim.hpp"
#include "codesign/engine.hpp"
#include "codesign/error.hpp"
#include "codesign/serialization.hpp"
#include "../support/fixture_gen.hpp"
#include "../support/temp_dir.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace codesign;
using namespace codesign::engine;
using codesign::llm::Tag;
using testsupport::TempDir;

namespace {

Errc error_of(auto&& fn)
{
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an Error";
    return Errc::IoError;
}

// Efficiency = 10 * l1 + bonus(reward source); volume fixed at 1.
class TableEvaluator : public bridge::Evaluator {
public:
    std::map<std::string, double> bonus;
    std::set<PairId> failing;
    int calls = 0;

    EvaluationResult evaluate(const MorphologyCandidate& m, const RewardCandidate& r, std::uint64_t seed,
                              std::int64_t) override
    {
        ++calls;
        const PairId pair{m.id, r.id};
        if (failing.contains(pair))
            return EvaluationResult::failed(pair, EvalStatus::runtime_error, "scripted failure", seed);
        const double fitness = 10.0 * m.values.at("l1") + (bonus.contains(r.source) ? bonus.at(r.source) : 0.0);
        return EvaluationResult::evaluated(pair, fitness, 1.0, fitness, seed);
    }
    std::size_t concurrency() const override { return 2; }
    std::optional<std::set<std::string>> reward_variables() const override
    {
        const auto& v = crawler::state_variables();
        return std::set<std::string>(v.begin(), v.end());
    }
};

std::string design(double l1)
{
    ParamMap values{{"l1", l1}, {"l2", 0.5}, {"l3", 0.5}, {"r1", 0.05}, {"r2", 0.05}, {"r3", 0.05}};
    return "Here you go:\n" + llm::render_params_block(values, crawler::crawler_schema());
}

std::string code(const std::string& src) { return "```\n" + src + "\n```"; }

RunConfig config(int nm, int nr, int fine_iters = 10)
{
    RunConfig c;
    c.n_morphologies = nm;
    c.n_rewards = nr;
    c.fine_max_iterations = fine_iters;
    c.seed = 11;
    return c;
}

struct Harness {
    explicit Harness(std::map<Tag, std::vector<std::string>> fixture, RunConfig cfg,
                     store::RunStore* store = nullptr)
        : provider(std::move(fixture)),
          engine(cfg, Deps{&crawler::crawler_schema(), crawler::crawler_task_context(),
                           prompts::PromptTemplates::builtin(), &provider, &evaluator, store, &log})
    {
    }

    llm::ScriptedMockProvider provider;
    TableEvaluator evaluator;
    std::ostringstream log;
    Engine engine;
};

EvaluationResult ok(std::string m, std::string r, double eff)
{
    return EvaluationResult::evaluated({std::move(m), std::move(r)}, eff, 1.0, eff, 0);
}

std::map<Tag, std::vector<std::string>> two_designs(std::vector<std::string> morph_refine,
                                                    std::vector<std::string> reward_refine)
{
    return {{Tag::morph_propose, {design(0.2), design(0.8)}},
            {Tag::reward_propose, {code("v")}},
            {Tag::morph_refine, std::move(morph_refine)},
            {Tag::reward_refine, std::move(reward_refine)}};
}

} // namespace

TEST(SelectTopK, PicksBestByEfficiency)
{
    std::map<PairId, EvaluationResult> r;
    r[{"m1", "r1"}] = ok("m1", "r1", 5);
    r[{"m2", "r1"}] = ok("m2", "r1", 3);
    r[{"m3", "r1"}] = ok("m3", "r1", 9);
    r[{"m4", "r1"}] = ok("m4", "r1", 1);
    EXPECT_EQ(select_top_k(r, 0.5), (std::vector<PairId>{{"m3", "r1"}, {"m1", "r1"}}));
}

TEST(SelectTopK, AllFailedHasNoViableCandidates)
{
    std::map<PairId, EvaluationResult> r;
    r[{"m1", "r1"}] = EvaluationResult::failed({"m1", "r1"}, EvalStatus::timeout, "", 0);
    EXPECT_EQ(error_of([&] { select_top_k(r, 0.5); }), Errc::NoViableCandidates);
}

TEST(SelectTopK, SingleResultSurvivesTinyFraction)
{
    std::map<PairId, EvaluationResult> r;
    r[{"m1", "r1"}] = ok("m1", "r1", 0.1);
    r[{"m1", "r2"}] = EvaluationResult::failed({"m1", "r2"}, EvalStatus::nonfinite, "", 0);
    EXPECT_EQ(select_top_k(r, 0.01), (std::vector<PairId>{{"m1", "r1"}}));
}

TEST(SelectTopK, TiesFollowPairOrder)
{
    std::map<PairId, EvaluationResult> r;
    r[{"m2", "r1"}] = ok("m2", "r1", 4);
    r[{"m1", "r2"}] = ok("m1", "r2", 4);
    r[{"m10", "r1"}] = ok("m10", "r1", 4);
    EXPECT_EQ(rank_results(r), (std::vector<PairId>{{"m1", "r2"}, {"m10", "r1"}, {"m2", "r1"}}));
}

TEST(SelectTopK, CountUsesFloorWithMinimumOne)
{
    EXPECT_EQ(selection_count(125, 0.05), 6u);
    EXPECT_EQ(selection_count(1, 0.05), 1u);
    EXPECT_EQ(selection_count(19, 0.05), 1u);
    EXPECT_EQ(selection_count(40, 0.05), 2u);
    EXPECT_EQ(selection_count(3, 1.0), 3u);
}

TEST(DeriveSeed, StableAndKeySensitive)
{
    EXPECT_EQ(derive_seed(1, "grid/m1_r1"), derive_seed(1, "grid/m1_r1"));
    EXPECT_NE(derive_seed(1, "grid/m1_r1"), derive_seed(1, "grid/m1_r2"));
    EXPECT_NE(derive_seed(1, "grid/m1_r1"), derive_seed(2, "grid/m1_r1"));
}

TEST(CoarseSearch, ProposesSequentiallyAndEvaluatesEveryPair)
{
    auto fixture = testsupport::random_fixture({4, 3, 0, 5});
    Harness h(fixture, config(4, 3));
    RunState state;
    const auto grid = h.engine.coarse_search(state);
    EXPECT_EQ(grid.results.size(), 12u);
    EXPECT_EQ(h.evaluator.calls, 12);
    EXPECT_EQ(grid.selected.size(), 1u);
    EXPECT_EQ(grid.selected.front(), grid.ranking.front());

    std::vector<std::string> morph_prompts, reward_prompts;
    for (const auto& req : h.provider.captured()) {
        EXPECT_DOUBLE_EQ(req.temperature, llm::kProposalTemperature);
        (req.tag == Tag::morph_propose ? morph_prompts : reward_prompts).push_back(req.user_prompt);
    }
    ASSERT_EQ(morph_prompts.size(), 4u);
    for (std::size_t i = 0; i < morph_prompts.size(); ++i)
        for (std::size_t j = 1; j <= 4; ++j)
            EXPECT_EQ(morph_prompts[i].find("[m" + std::to_string(j) + "]") != std::string::npos, j <= i)
                << "prompt " << i + 1 << " entry m" << j;
    ASSERT_EQ(reward_prompts.size(), 3u);
    EXPECT_EQ(reward_prompts[2].find(state.rewards[0].source) < reward_prompts[2].find(state.rewards[1].source),
              true);
}

TEST(CoarseSearch, OneByOneGridSelectsItsOnlyPair)
{
    Harness h({{Tag::morph_propose, {design(0.3)}}, {Tag::reward_propose, {code("v")}}}, config(1, 1, 0));
    const auto report = h.engine.run();
    EXPECT_EQ(report.state.grid.size(), 1u);
    EXPECT_EQ(report.state.selected, (std::vector<PairId>{{"m1", "r1"}}));
    EXPECT_EQ(report.state.status, RunStatus::done);
}

TEST(CoarseSearch, UnparseableResponsesAreRetriedThenRefilled)
{
    std::vector<std::string> junk(3, "no block here: nope");
    std::vector<std::string> morphs = junk;
    morphs.push_back(design(0.4));
    Harness h({{Tag::morph_propose, morphs}, {Tag::reward_propose, {code("v + ctrl")}}}, config(1, 1, 0));
    const auto report = h.engine.run();
    ASSERT_EQ(report.state.morphologies.size(), 1u);
    EXPECT_DOUBLE_EQ(report.state.morphologies[0].values.at("l1"), 0.4);
    const auto captured = h.provider.captured();
    ASSERT_EQ(captured.size(), 5u);
    EXPECT_EQ(captured[0].user_prompt.size() < captured[1].user_prompt.size(), true);
}

TEST(CoarseSearch, UnknownRewardVariableIsRejectedAtAdmission)
{
    Harness h({{Tag::morph_propose, {design(0.4)}}, {Tag::reward_propose, {code("height"), code("v")}}},
              config(1, 1, 0));
    const auto report = h.engine.run();
    ASSERT_EQ(report.state.rewards.size(), 1u);
    EXPECT_EQ(report.state.rewards[0].source, "v");
}

TEST(CoarseSearch, ExhaustedRefillsAbort)
{
    std::vector<std::string> junk(12, "still nothing");
    Harness h({{Tag::morph_propose, junk}}, config(1, 1));
    const auto report = h.engine.run();
    EXPECT_EQ(report.state.status, RunStatus::aborted);
    EXPECT_EQ(h.provider.cursor().at("morph_propose"), 12u);
}

TEST(FineOptimize, VerbatimIncumbentStopsAfterFirstIteration)
{
    Harness h(two_designs({design(0.8), design(0.8)}, {code("v"), code("v")}), config(2, 1));
    const auto report = h.engine.run();
    ASSERT_EQ(report.state.selected, (std::vector<PairId>{{"m2", "r1"}}));
    const auto& steps = report.state.fine_trajectories.at({"m2", "r1"});
    ASSERT_EQ(steps.size(), 2u);
    for (const auto& s : steps) {
        EXPECT_EQ(s.iteration, 1);
        EXPECT_FALSE(s.accepted);
    }
    EXPECT_EQ(report.best->pair, (PairId{"m2", "r1"}));
    for (const auto& req : h.provider.captured())
        if (req.tag == Tag::morph_refine || req.tag == Tag::reward_refine)
            EXPECT_DOUBLE_EQ(req.temperature, llm::kRefinementTemperature);
}

TEST(FineOptimize, OneImprovementGivesOneAcceptedStep)
{
    Harness h(two_designs({design(0.9), design(0.9)}, {code("v"), code("v")}), config(2, 1));
    const auto report = h.engine.run();
    const auto& steps = report.state.fine_trajectories.at({"m2", "r1"});
    ASSERT_EQ(steps.size(), 4u);
    int accepted = 0;
    for (const auto& s : steps)
        accepted += s.accepted;
    EXPECT_EQ(accepted, 1);
    EXPECT_TRUE(steps[0].accepted);
    EXPECT_EQ(steps[0].candidate_id, "m2_r1_i1_m");
    EXPECT_DOUBLE_EQ(*report.best->result.efficiency, *steps[0].result.efficiency);
    EXPECT_DOUBLE_EQ(*report.best->result.efficiency, 9.0);
    EXPECT_EQ(report.state.fine_morphologies.at("m2_r1_i1_m").parent_id, "m2");
    // The reward phase of iteration 1 runs against the accepted morphology.
    EXPECT_EQ(steps[1].result.pair, (PairId{"m2_r1_i1_m", "m2_r1_i1_r"}));
}

TEST(FineOptimize, RewardImprovementIsAccepted)
{
    Harness h(two_designs({design(0.8), design(0.8), design(0.8)}, {code("v + 0*x"), code("v")}), config(2, 1));
    h.evaluator.bonus["v + 0*x"] = 0.5;
    const auto report = h.engine.run();
    const auto& steps = report.state.fine_trajectories.at({"m2", "r1"});
    ASSERT_EQ(steps.size(), 4u);
    EXPECT_FALSE(steps[0].accepted);
    EXPECT_TRUE(steps[1].accepted);
    EXPECT_DOUBLE_EQ(*report.best->result.efficiency, 8.5);
    EXPECT_EQ(report.best->pair, (PairId{"m2", "m2_r1_i1_r"}));
}

TEST(FineOptimize, ZeroIterationsLeavesPairUnchanged)
{
    Harness h(two_designs({}, {}), config(2, 1, 0));
    RunState state;
    h.engine.coarse_search(state);
    const auto out = h.engine.fine_optimize(state, {"m2", "r1"});
    EXPECT_TRUE(out.steps.empty());
    EXPECT_EQ(out.morphology.id, "m2");
    EXPECT_EQ(out.reward.id, "r1");
    EXPECT_EQ(out.result, state.grid.at({"m2", "r1"}));
}

TEST(FineOptimize, StopsAtIterationCap)
{
    std::vector<std::string> better;
    for (int i = 1; i <= 6; ++i)
        better.push_back(design(0.8 + 0.02 * i));
    Harness h(two_designs(better, std::vector<std::string>(6, code("v"))), config(2, 1, 3));
    const auto report = h.engine.run();
    const auto& steps = report.state.fine_trajectories.at({"m2", "r1"});
    EXPECT_EQ(steps.size(), 6u);
    EXPECT_EQ(steps.back().iteration, 3);
}

TEST(FineOptimize, FailedRefinementIsNotAccepted)
{
    Harness h(two_designs({design(0.95), design(0.8)}, {code("v"), code("v")}), config(2, 1));
    h.evaluator.failing.insert({"m2_r1_i1_m", "r1"});
    const auto report = h.engine.run();
    const auto& steps = report.state.fine_trajectories.at({"m2", "r1"});
    EXPECT_EQ(steps[0].result.status, EvalStatus::runtime_error);
    EXPECT_FALSE(steps[0].accepted);
    EXPECT_EQ(report.best->pair, (PairId{"m2", "r1"}));
}

TEST(FineOptimize, UnparseableRefinementIsRecordedWithoutCandidate)
{
    Harness h(two_designs(std::vector<std::string>(3, "nothing useful"), {code("v")}), config(2, 1));
    const auto report = h.engine.run();
    const auto& steps = report.state.fine_trajectories.at({"m2", "r1"});
    ASSERT_EQ(steps.size(), 2u);
    EXPECT_TRUE(steps[0].candidate_id.empty());
    EXPECT_FALSE(steps[0].accepted);
}

TEST(FineOptimize, ProviderFailureKeepsIncumbent)
{
    Harness h(two_designs({design(0.9)}, {}), config(2, 1));
    const auto report = h.engine.run();
    EXPECT_EQ(report.state.status, RunStatus::done);
    const auto& steps = report.state.fine_trajectories.at({"m2", "r1"});
    ASSERT_EQ(steps.size(), 1u);
    EXPECT_TRUE(steps[0].accepted);
    EXPECT_DOUBLE_EQ(*report.best->result.efficiency, 9.0);
}

TEST(FineOptimize, RankedContextCarriesGridAndPairHistory)
{
    Harness h(two_designs({design(0.9), design(0.9)}, {code("v"), code("v")}), config(2, 1));
    h.engine.run();
    std::vector<std::string> refine;
    for (const auto& req : h.provider.captured())
        if (req.tag == Tag::reward_refine)
            refine.push_back(req.user_prompt);
    ASSERT_FALSE(refine.empty());
    // After the accepted morphology step the ranked list holds it and both grid cells.
    const auto& p = refine.front();
    const auto a = p.find("m2_r1_i1_m"), b = p.find("#2"), c = p.find("#3");
    EXPECT_NE(a, std::string::npos);
    EXPECT_NE(b, std::string::npos);
    EXPECT_NE(c, std::string::npos);
}

TEST(Run, EmptyFixtureAbortsAndPersists)
{
    TempDir tmp;
    const auto cfg = config(2, 1);
    auto st = store::RunStore::init(tmp.path() / "run", cfg, crawler::crawler_schema(),
                                    crawler::crawler_task_context());
    Harness h({}, cfg, &st);
    const auto report = h.engine.run();
    EXPECT_EQ(report.state.status, RunStatus::aborted);
    EXPECT_FALSE(report.best);
    const auto reopened = store::RunStore::open(tmp.path() / "run");
    EXPECT_EQ(reopened.manifest().status, RunStatus::aborted);
    EXPECT_NE(reopened.manifest().abort_reason.find("morph_propose"), std::string::npos)
        << reopened.manifest().abort_reason;
}

TEST(Run, AllGridFailuresAbort)
{
    Harness h(two_designs({}, {}), config(2, 1));
    h.evaluator.failing = {{"m1", "r1"}, {"m2", "r1"}};
    const auto report = h.engine.run();
    EXPECT_EQ(report.state.status, RunStatus::aborted);
    EXPECT_FALSE(report.best);
}

TEST(Run, PersistedRunMatchesInMemoryRunAndWritesReports)
{
    const auto fixture = testsupport::random_fixture({4, 3, 20, 9, 0.1});
    const auto cfg = config(4, 3);
    Harness plain(fixture, cfg);
    const auto expected = serialize_state(plain.engine.run().state);

    TempDir tmp;
    auto st = store::RunStore::init(tmp.path() / "run", cfg, crawler::crawler_schema(),
                                    crawler::crawler_task_context());
    Harness stored(fixture, cfg, &st);
    const auto report = stored.engine.run();
    EXPECT_EQ(serialize_state(report.state), expected);
    EXPECT_EQ(serialize_state(store::RunStore::open(tmp.path() / "run").load_state()), expected);
    EXPECT_TRUE(std::filesystem::exists(tmp.path() / "run/report/report.md"));
    EXPECT_TRUE(std::filesystem::exists(tmp.path() / "run/report/report.csv"));
    EXPECT_TRUE(store::RunStore::open(tmp.path() / "run").pending().empty());
}

TEST(Run, ResumeAfterInterruptionMatchesUninterrupted)
{
    const auto fixture = testsupport::random_fixture({3, 2, 20, 4, 0.1});
    const auto cfg = config(3, 2);
    Harness plain(fixture, cfg);
    const auto expected = serialize_state(plain.engine.run().state);

    struct Interrupt {};
    for (int stop_at : {1, 4, 7, 12, 16, 20}) {
        TempDir tmp;
        const auto dir = tmp.path() / "run";
        {
            auto st = store::RunStore::init(dir, cfg, crawler::crawler_schema(), crawler::crawler_task_context());
            int commits = 0;
            st.set_commit_hook([&](std::string_view) {
                if (++commits == stop_at)
                    throw Interrupt{};
            });
            Harness first(fixture, cfg, &st);
            try {
                first.engine.run();
            } catch (const Interrupt&) {
            }
        }
        auto st = store::RunStore::open(dir);
        Harness second(fixture, cfg, &st);
        const auto report = second.engine.resume();
        EXPECT_EQ(serialize_state(report.state), expected) << "interrupted at commit " << stop_at;
    }
}
