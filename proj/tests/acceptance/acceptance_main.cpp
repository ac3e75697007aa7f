// Acceptance checks. Each check prints one PASS/FAIL line; the exit status
// is non-zero when any check fails.

#include "codesign/crawler_sim.hpp"
#include "codesign/diversity.hpp"
#include "codesign/engine.hpp"
#include "codesign/error.hpp"
#include "codesign/eval_bridge.hpp"
#include "codesign/reward_lang.hpp"
#include "codesign/run_store.hpp"
#include "codesign/serialization.hpp"
#include "codesign/text.hpp"
#include "../support/expr_oracle.hpp"
#include "../support/fixture_gen.hpp"
#include "../support/frozen_oracles.hpp"
#include "../support/temp_dir.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <csignal>
#include <fcntl.h>
#include <fstream>
#include <functional>
#include <iostream>
#include <spawn.h>
#include <sstream>
#include <sys/wait.h>
#include <thread>

extern char** environ;

using namespace codesign;
using codesign::llm::Tag;
using testsupport::TempDir;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what)
    {
        if (!ok) {
            if (pass)
                detail << "first failure: " << what << "; ";
            pass = false;
        }
    }
};

double seconds_since(Clock::time_point start)
{
    return std::chrono::duration<double>(Clock::now() - start).count();
}

EvaluatorSpec builtin_spec(int population, int elites, int iterations, std::size_t workers = 2)
{
    EvaluatorSpec e;
    e.kind = EvaluatorSpec::Kind::builtin;
    e.workers = workers;
    e.cem_population = population;
    e.cem_elites = elites;
    e.cem_iterations = iterations;
    return e;
}

class CountingEvaluator : public bridge::Evaluator {
public:
    explicit CountingEvaluator(bridge::Evaluator& inner) : inner_(inner) {}
    EvaluationResult evaluate(const MorphologyCandidate& m, const RewardCandidate& r, std::uint64_t seed,
                              std::int64_t budget) override
    {
        ++calls;
        return inner_.evaluate(m, r, seed, budget);
    }
    std::size_t concurrency() const override { return inner_.concurrency(); }
    std::optional<std::set<std::string>> reward_variables() const override { return inner_.reward_variables(); }

    std::atomic<int> calls{0};

private:
    bridge::Evaluator& inner_;
};

engine::Deps crawler_deps(llm::Provider& provider, bridge::Evaluator& evaluator, store::RunStore* st = nullptr)
{
    return {&crawler::crawler_schema(), crawler::crawler_task_context(), prompts::PromptTemplates::builtin(),
            &provider, &evaluator, st, nullptr};
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

// ---------------------------------------------------------------------------

// Shared by the grid check and the causality check.
struct FullScaleRun {
    std::vector<llm::LlmRequest> requests;
    RunState state;
};

Verdict grid_cardinality(FullScaleRun& keep)
{
    Verdict v;
    RunConfig cfg;
    cfg.n_morphologies = 25;
    cfg.n_rewards = 5;
    cfg.top_k_fraction = 0.05;
    cfg.seed = 2025;
    cfg.evaluator = builtin_spec(16, 4, 10);

    auto provider = llm::ScriptedMockProvider(testsupport::random_fixture({25, 5, 80, 77}));
    bridge::BuiltinEvaluator builtin(cfg.evaluator);
    CountingEvaluator counting(builtin);
    engine::Engine eng(cfg, crawler_deps(provider, counting));

    const auto start = Clock::now();
    RunState state;
    const auto grid = eng.coarse_search(state);
    const int coarse_calls = counting.calls;
    const auto report = eng.run(state);
    const double elapsed = seconds_since(start);

    v.require(coarse_calls == 125, "coarse evaluations " + std::to_string(coarse_calls));
    v.require(grid.results.size() == 125, "grid size");
    v.require(grid.ranking.size() == 125, "ok results " + std::to_string(grid.ranking.size()));
    v.require(grid.selected.size() == 6, "selected " + std::to_string(grid.selected.size()));
    v.require(report.state.status == RunStatus::done, "run did not finish");
    v.require(elapsed <= 15 * 60, "took longer than 15 min");
    v.detail << coarse_calls << " grid evaluations, " << grid.selected.size() << " selected, "
             << counting.calls - coarse_calls << " fine evaluations, " << format_real(std::round(elapsed * 10) / 10)
             << " s";
    keep.requests = provider.captured();
    keep.state = report.state;
    return v;
}

Verdict deterministic_runs()
{
    Verdict v;
    RunConfig cfg;
    cfg.n_morphologies = 5;
    cfg.n_rewards = 3;
    cfg.seed = 99;
    cfg.evaluator = builtin_spec(32, 8, 20, 3);
    const auto fixture = testsupport::random_fixture({5, 3, 30, 123, 0.1});

    std::vector<std::string> states, reports;
    double slowest = 0;
    for (int i = 0; i < 2; ++i) {
        TempDir tmp;
        auto st = store::RunStore::init(tmp.path() / "run", cfg, crawler::crawler_schema(),
                                        crawler::crawler_task_context());
        auto provider = llm::ScriptedMockProvider(fixture);
        bridge::BuiltinEvaluator evaluator(cfg.evaluator);
        engine::Engine eng(cfg, crawler_deps(provider, evaluator, &st));
        const auto start = Clock::now();
        const auto report = eng.run();
        slowest = std::max(slowest, seconds_since(start));
        v.require(report.state.status == RunStatus::done, "run did not finish");
        states.push_back(serialize_state(store::RunStore::open(tmp.path() / "run").load_state()));
        reports.push_back(slurp(tmp.path() / "run/report/report.md") + slurp(tmp.path() / "run/report/report.csv"));
    }
    v.require(states[0] == states[1], "serialized states differ");
    v.require(reports[0] == reports[1], "reports differ");
    v.require(slowest <= 120, "a run took longer than 2 min");
    v.detail << "state " << states[0].size() << " bytes identical, slowest run "
             << format_real(std::round(slowest * 100) / 100) << " s";
    return v;
}

Verdict monotonicity()
{
    Verdict v;
    int pairs = 0, accepted = 0, steps = 0;
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        RunConfig cfg;
        cfg.n_morphologies = 4;
        cfg.n_rewards = 3;
        cfg.top_k_fraction = 0.5;
        cfg.seed = 1000 + trial;
        cfg.evaluator = builtin_spec(8, 2, 4);
        auto provider = llm::ScriptedMockProvider(testsupport::random_fixture({4, 3, 150, 500 + trial, 0.15}));
        bridge::BuiltinEvaluator evaluator(cfg.evaluator);
        engine::Engine eng(cfg, crawler_deps(provider, evaluator));
        const auto report = eng.run();
        const auto& st = report.state;
        v.require(st.status == RunStatus::done, "trial " + std::to_string(trial) + " did not finish");

        double best_coarse = -INFINITY;
        for (const auto& [pair, r] : st.grid)
            best_coarse = std::max(best_coarse, r.score());
        for (const auto& pair : st.selected) {
            ++pairs;
            double incumbent = st.grid.at(pair).score();
            const auto it = st.fine_trajectories.find(pair);
            if (it == st.fine_trajectories.end())
                continue;
            for (const auto& step : it->second) {
                ++steps;
                const double score = step.result.score();
                if (step.accepted) {
                    ++accepted;
                    v.require(score > incumbent, "accepted step without strict increase");
                    incumbent = score;
                } else {
                    v.require(!(score > incumbent), "improving step was rejected");
                }
            }
        }
        v.require(report.best && report.best->result.score() >= best_coarse, "final below best coarse");
    }
    v.detail << "20 runs, " << pairs << " refined pairs, " << steps << " steps, " << accepted << " accepted";
    return v;
}

Verdict causality(const FullScaleRun& run)
{
    Verdict v;
    auto check = [&](Tag tag, char prefix, std::size_t expected_count, const std::vector<std::string>& bodies) {
        std::vector<std::string> prompts;
        for (const auto& r : run.requests)
            if (r.tag == tag)
                prompts.push_back(r.user_prompt);
        v.require(prompts.size() == expected_count, std::string(llm::to_string(tag)) + " prompt count");
        for (std::size_t i = 0; i < prompts.size() && i < bodies.size(); ++i) {
            std::size_t last = 0;
            for (std::size_t j = 0; j < bodies.size(); ++j) {
                const auto pos = prompts[i].find("[" + std::string(1, prefix) + std::to_string(j + 1) + "]");
                if (j < i) {
                    v.require(pos != std::string::npos && pos >= last,
                              "prompt " + std::to_string(i + 1) + " misses or misorders entry " + std::to_string(j + 1));
                    v.require(prompts[i].find(bodies[j], pos) != std::string::npos,
                              "prompt " + std::to_string(i + 1) + " lacks the body of entry " + std::to_string(j + 1));
                    last = pos;
                } else {
                    v.require(pos == std::string::npos,
                              "prompt " + std::to_string(i + 1) + " shows later entry " + std::to_string(j + 1));
                }
            }
        }
    };
    std::vector<std::string> morph_bodies, reward_bodies;
    for (const auto& m : run.state.morphologies)
        morph_bodies.push_back(llm::render_params_block(m.values, crawler::crawler_schema()));
    for (const auto& r : run.state.rewards)
        reward_bodies.push_back(r.source);
    check(Tag::morph_propose, 'm', 25, morph_bodies);
    check(Tag::reward_propose, 'r', 5, reward_bodies);
    v.detail << "25 morphology and 5 reward prompts carry exactly their predecessors, in order";
    return v;
}

Verdict self_bleu_oracle()
{
    Verdict v;
    const auto corpus = frozen::five_doc_corpus();
    const double got = diversity::self_bleu(corpus);
    v.require(std::abs(got - frozen::five_doc_self_bleu) <= 1e-9, "five-document corpus");
    const std::vector<std::string> same(4, "reward = forward_velocity - 0.5 * control_cost");
    const double identical = diversity::self_bleu(same);
    v.require(identical == 1.0, "identical corpus is not exactly 1");
    const std::vector<std::string> disjoint = {"alpha beta gamma delta epsilon", "one two three four five"};
    const double apart = diversity::self_bleu(disjoint);
    v.require(apart <= 1e-6, "disjoint pair above 1e-6");
    v.detail << "corpus |diff| " << std::abs(got - frozen::five_doc_self_bleu) << ", identical " << identical
             << ", disjoint " << apart;
    return v;
}

Verdict cv_oracle()
{
    Verdict v;
    const MorphologySchema one{"one", {{"a", 0.0, 10.0, ""}}, "{a}"};
    const std::vector<ParamMap> pair = {{{"a", 1.0}}, {{"a", 2.0}}};
    const double cv = diversity::coefficient_of_variation(pair, one).aggregate;
    v.require(std::abs(cv - 1.0 / 3.0) <= 1e-12, "{1, 2} is not 1/3");
    // Population std of {2, 4, 4, 4, 5, 5, 7, 9} is 2, mean 5.
    std::vector<ParamMap> eight;
    for (double x : {2, 4, 4, 4, 5, 5, 7, 9})
        eight.push_back({{"a", x}});
    v.require(std::abs(diversity::coefficient_of_variation(eight, one).aggregate - 0.4) <= 1e-12, "textbook set");
    const std::vector<ParamMap> dup(5, {{"a", 3.7}});
    v.require(diversity::coefficient_of_variation(dup, one).aggregate == 0.0, "duplicates are not exactly 0");

    const auto& schema = crawler::crawler_schema();
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> unit(0.0, 1.0), scale(0.1, 10.0);
    double worst = 0;
    for (int i = 0; i < 100; ++i) {
        std::vector<ParamMap> xs, scaled;
        const double c = scale(rng);
        const int n = 2 + static_cast<int>(unit(rng) * 8);
        for (int k = 0; k < n; ++k) {
            ParamMap p;
            for (const auto& spec : schema.params)
                p[spec.name] = spec.lower_bound + unit(rng) * (spec.upper_bound - spec.lower_bound);
            ParamMap q = p;
            for (auto& [name, value] : q)
                value *= c;
            xs.push_back(p);
            scaled.push_back(q);
        }
        const double a = diversity::coefficient_of_variation(xs, schema).aggregate;
        const double b = diversity::coefficient_of_variation(scaled, schema).aggregate;
        worst = std::max(worst, std::abs(a - b));
    }
    v.require(worst <= 1e-12, "scale invariance");
    v.detail << "{1,2} -> " << format_real(cv) << ", worst scale deviation " << worst;
    return v;
}

Verdict dsl_differential()
{
    Verdict v;
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> val(-3.0, 3.0);
    int agreed = 0, both_failed = 0;
    for (int i = 0; i < 1000; ++i) {
        auto e = oracle::random_expr(rng, 6);
        const std::string text = oracle::render(*e, rng);
        std::map<std::string, double> env;
        reward::StateEnv senv;
        for (const auto& n : oracle::variable_names())
            senv[n] = env[n] = val(rng);
        const auto expected = oracle::evaluate(*e, env);
        try {
            const double got = reward::eval(reward::parse(text), senv);
            v.require(expected && oracle::close_relative(got, *expected, 1e-12), "mismatch on " + text);
            ++agreed;
        } catch (const Error& err) {
            v.require(!expected && err.code() == Errc::EvalError, "unexpected error on " + text);
            ++both_failed;
        }
    }
    auto raises = [](const std::string& src, Errc code) {
        try {
            reward::eval(reward::parse(src), {{"v", 1.0}, {"x", 0.0}});
        } catch (const Error& e) {
            return e.code() == code;
        }
        return false;
    };
    v.require(raises("v +", Errc::SyntaxError), "SyntaxError");
    v.require(raises("foo(v)", Errc::UnknownFunction), "UnknownFunction");
    v.require(raises("min(v, 1, 2)", Errc::ArityError), "ArityError");
    v.require(raises("speed", Errc::UnboundVariable), "UnboundVariable");
    v.require(raises("1/x", Errc::EvalError), "EvalError");
    v.detail << agreed << " agreed, " << both_failed << " failed on both sides; error classes raised";
    return v;
}

Verdict simulator_sanity()
{
    Verdict v;
    crawler::CrawlerMorphology m{{0.4, 0.5, 0.6}, {0.03, 0.02, 0.04}};
    const crawler::SimConfig sim;
    auto gait = [](double amplitude) {
        crawler::ControllerParams c;
        c.amplitude.fill(amplitude);
        c.frequency = {1.0, 1.3, 0.8};
        c.phase = {0.0, 1.2, 2.4};
        return c;
    };
    const auto still = crawler::simulate(m, gait(0.0), reward::parse("v"), sim);
    v.require(still.fitness == 0.0, "zero actuation moved");
    const auto constant = crawler::simulate(m, gait(0.7), reward::parse("1.0"), sim);
    v.require(constant.ret == 10.0, "constant reward return " + format_real(constant.ret));

    const auto moving = crawler::simulate(m, gait(0.9), reward::parse("v"), sim);
    crawler::CrawlerMorphology doubled = m;
    for (auto& r : doubled.radii)
        r *= 2;
    const double ratio = efficiency(moving.fitness, crawler::volume(m)) /
                         efficiency(moving.fitness, crawler::volume(doubled));
    v.require(moving.fitness != 0.0, "reference gait did not move");
    v.require(crawler::volume(doubled) == 4.0 * crawler::volume(m), "volume did not quadruple");
    v.require(ratio == 4.0, "radius doubling ratio " + format_real(ratio));
    v.detail << "still " << format_real(still.fitness) << ", return " << format_real(constant.ret)
             << ", efficiency ratio " << format_real(ratio);
    return v;
}

std::string four_sig(double x)
{
    std::ostringstream s;
    s << std::setprecision(4) << x;
    return s.str();
}

Verdict table_consistency()
{
    Verdict v;
    // Reported efficiency and fitness per method and task (Ant, Ant-Powered,
    // Ant-Desert, Ant-Jump, Hopper, Half-Cheetah, Swimmer, Walker).
    struct Row {
        const char* method;
        std::array<double, 8> eff;
        std::array<double, 8> fit;
    };
    const std::array<Row, 5> table = {{
        {"Bayesian Optimization",
         {707.13, 74.52, 223.61, 3.53, 128.00, 4242.89, 57.53, 111.95},
         {390.14, 41.11, 100.49, 1.95, 2.75, 194.82, 8.66, 2.54}},
        {"Eureka",
         {121.54, 24.91, 49.82, 7.60, 428.11, 12157.92, 23.96, 139.73},
         {8.81, 4.54, 9.08, 1.38, 6.77, 257.55, 2.56, 3.92}},
        {"Eureka (Mor.)",
         {5203.82, 1160.94, 2.51, 229.55, 609.04, 15531.26, 16335.19, 1946.60},
         {143.07, 41.52, 0.08, 5.33, 1.61, 145.09, 89.04, 2.91}},
        {"Human",
         {68.22, 26.13, 29.84, 6.83, 433.69, 11975.34, 18.86, 170.29},
         {12.43, 4.76, 5.44, 1.24, 6.86, 253.69, 2.01, 4.78}},
        {"Proposed",
         {31038.41, 32657.10, 36995.77, 902.76, 3776.66, 495373.71, 57627.40, 6665.85},
         {165.18, 70.30, 39.60, 1.48, 15.10, 135.71, 109.35, 4.17}},
    }};
    int cells = 0;
    for (const auto& row : table)
        for (std::size_t t = 0; t < 8; ++t) {
            const double volume = row.fit[t] / row.eff[t];
            const double eff = efficiency(row.fit[t], volume);
            v.require(four_sig(eff) == four_sig(row.eff[t]), std::string(row.method) + " column " + std::to_string(t));
            ++cells;
        }
    v.detail << cells << " cells reproduce to 4 significant figures";
    return v;
}

// --- crash / resume -----------------------------------------------------

pid_t spawn_cli(const std::vector<std::string>& args)
{
    std::vector<char*> argv;
    std::string prog = CODESIGN_CLI_PATH;
    argv.push_back(prog.data());
    std::vector<std::string> copy = args;
    for (auto& a : copy)
        argv.push_back(a.data());
    argv.push_back(nullptr);
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_addopen(&actions, 1, "/dev/null", O_WRONLY, 0);
    posix_spawn_file_actions_addopen(&actions, 2, "/dev/null", O_WRONLY, 0);
    pid_t pid = -1;
    const int rc = posix_spawn(&pid, prog.c_str(), &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    return rc == 0 ? pid : -1;
}

int wait_exit(pid_t pid, bool* signalled = nullptr)
{
    int status = 0;
    ::waitpid(pid, &status, 0);
    if (signalled)
        *signalled = WIFSIGNALED(status);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct Finished {
    std::string state;
    std::string report;
};

Finished read_finished(const fs::path& dir)
{
    const auto st = store::RunStore::open(dir);
    return {serialize_state(st.load_state()), slurp(dir / "report/report.md") + slurp(dir / "report/report.csv")};
}

Verdict crash_resume()
{
    Verdict v;
    TempDir tmp;
    const auto fixture = tmp.path() / "fixture.json";
    std::ofstream(fixture) << testsupport::fixture_json(testsupport::random_fixture({5, 3, 40, 8, 0.1}));
    const auto config = tmp.path() / "config.json";
    std::ofstream(config) << R"({"n_morphologies": 5, "n_rewards": 3, "top_k_fraction": 0.4, "seed": 17,
 "llm": {"kind": "scripted_mock", "fixture": "fixture.json"},
 "evaluator": {"kind": "builtin", "workers": 2, "cem": {"population": 16, "elites": 4, "iterations": 6}}})";

    const auto ref_dir = tmp.path() / "reference";
    const auto start = Clock::now();
    const int ref_code = wait_exit(spawn_cli({"run", "--config", config.string(), "--out", ref_dir.string()}));
    const double full = seconds_since(start);
    v.require(ref_code == 0, "reference run failed");
    if (ref_code != 0)
        return v;
    const auto expected = read_finished(ref_dir);

    std::mt19937_64 rng(4242);
    std::uniform_real_distribution<double> when(0.0, full);
    int interrupted = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const auto dir = tmp.path() / ("trial" + std::to_string(trial));
        const pid_t pid = spawn_cli({"run", "--config", config.string(), "--out", dir.string()});
        std::this_thread::sleep_for(std::chrono::duration<double>(when(rng)));
        ::kill(pid, SIGKILL);
        bool signalled = false;
        wait_exit(pid, &signalled);
        interrupted += signalled;

        int code = 0;
        if (!fs::exists(dir / "manifest.json"))
            code = wait_exit(spawn_cli({"run", "--config", config.string(), "--out", dir.string()}));
        else if (store::RunStore::open(dir).manifest().status != RunStatus::done)
            code = wait_exit(spawn_cli({"resume", dir.string()}));
        v.require(code == 0, "trial " + std::to_string(trial) + " did not complete");
        if (code != 0)
            continue;
        const auto got = read_finished(dir);
        v.require(got.state == expected.state, "trial " + std::to_string(trial) + " state differs");
        v.require(got.report == expected.report, "trial " + std::to_string(trial) + " report differs");
    }
    v.require(interrupted >= 10, "too few trials were actually interrupted");
    v.detail << "20 trials, " << interrupted << " killed mid-run, all resumed to the reference report";
    return v;
}

} // namespace

int main()
{
    int failures = 0;
    auto report = [&](int n, const std::string& name, const std::function<Verdict()>& check) {
        Verdict v;
        try {
            v = check();
        } catch (const std::exception& e) {
            v.pass = false;
            v.detail << "exception: " << e.what();
        }
        failures += !v.pass;
        std::cout << (v.pass ? "PASS" : "FAIL") << "  [" << n << "] " << name << ": " << v.detail.str() << std::endl;
    };

    FullScaleRun full;
    report(1, "grid cardinality and selection", [&] { return grid_cardinality(full); });
    report(2, "deterministic end-to-end", deterministic_runs);
    report(3, "fine-stage monotonicity", monotonicity);
    report(4, "diversity-reflection causality", [&] { return causality(full); });
    report(5, "Self-BLEU oracle", self_bleu_oracle);
    report(6, "coefficient-of-variation oracle", cv_oracle);
    report(7, "reward DSL differential", dsl_differential);
    report(8, "simulator sanity", simulator_sanity);
    report(9, "efficiency consistency with the reported table", table_consistency);
    report(10, "crash and resume", crash_resume);
    std::cout << (failures == 0 ? "all acceptance criteria passed" : std::to_string(failures) + " criteria failed")
              << std::endl;
    return failures == 0 ? 0 : 1;
}
