#include "codesign/cli.hpp"

#include "codesign/crawler_sim.hpp"
#include "codesign/diversity.hpp"
#include "codesign/engine.hpp"
#include "codesign/error.hpp"
#include "codesign/eval_bridge.hpp"
#include "codesign/llm_gateway.hpp"
#include "codesign/reward_lang.hpp"
#include "codesign/run_store.hpp"
#include "codesign/serialization.hpp"
#include "codesign/text.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

namespace codesign::cli {

namespace fs = std::filesystem;

namespace {

// Raised for problems with how the program was invoked; maps to exit 2.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw UsageError("cannot read " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void reject_unknown(const Json& j, std::initializer_list<std::string_view> allowed, const std::string& where)
{
    if (!j.is_object())
        throw Error(Errc::ConfigError, where + " must be an object");
    for (const auto& [key, value] : j.items())
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw Error(Errc::ConfigError, "unknown key '" + key + "' in " + where);
}

std::string resolve(const fs::path& base, const std::string& p)
{
    const fs::path path(p);
    return (path.is_absolute() ? path : fs::weakly_canonical(base / path)).string();
}

Json parse_json(const std::string& text, const std::string& what)
{
    try {
        return Json::parse(text);
    } catch (const Json::exception& e) {
        throw Error(Errc::ConfigError, what + ": " + e.what());
    }
}

struct Loaded {
    std::unique_ptr<llm::Provider> provider;
    std::unique_ptr<bridge::Evaluator> evaluator;
    prompts::PromptTemplates templates;
};

Loaded load_dependencies(const RunConfig& cfg, const MorphologySchema& schema,
                         const std::optional<std::string>& templates_dir)
{
    Loaded l;
    l.provider = llm::make_provider(cfg.llm);
    l.evaluator = bridge::make_evaluator(cfg.evaluator, schema);
    l.templates = templates_dir ? prompts::PromptTemplates::load(*templates_dir) : prompts::PromptTemplates::builtin();
    return l;
}

int finish(const engine::RunReport& report, const store::RunStore& st, std::ostream& out)
{
    out << "status " << to_string(report.state.status) << "\n";
    if (report.state.status == RunStatus::aborted)
        out << "reason " << st.manifest().abort_reason << "\n";
    if (report.best)
        out << "best " << report.best->pair.str() << " efficiency " << format_real(*report.best->result.efficiency)
            << " fitness " << format_real(report.best->result.fitness) << " volume "
            << format_real(report.best->result.volume) << "\n";
    if (report.state.status == RunStatus::done)
        out << "report " << (st.dir() / "report" / "report.md").string() << "\n";
    return report.state.status == RunStatus::done ? 0 : 1;
}

int cmd_run(const std::string& config_path, const std::string& out_dir, std::ostream& out, std::ostream& err)
{
    if (!fs::is_regular_file(config_path))
        throw UsageError("config file not found: " + config_path);
    RunSetup setup = load_run_config(config_path);
    if (!out_dir.empty())
        setup.out = fs::absolute(out_dir);
    if (!setup.out)
        throw UsageError("no output directory: pass --out or set \"out\" in the config");

    auto deps = load_dependencies(setup.config, setup.schema, setup.templates_dir);
    auto st = store::RunStore::init(*setup.out, setup.config, setup.schema, setup.task, setup.templates_dir);
    engine::Engine eng(setup.config, {&setup.schema, setup.task, deps.templates, deps.provider.get(),
                                      deps.evaluator.get(), &st, &err});
    return finish(eng.run(), st, out);
}

int cmd_resume(const std::string& dir, std::ostream& out, std::ostream& err)
{
    auto st = store::RunStore::open(dir);
    const auto& m = st.manifest();
    if (m.status == RunStatus::done) {
        out << "run already complete\n";
        return 0;
    }
    auto deps = load_dependencies(m.config, m.schema, m.templates_dir);
    const MorphologySchema schema = m.schema;
    engine::Engine eng(m.config, {&schema, m.task, deps.templates, deps.provider.get(), deps.evaluator.get(), &st,
                                  &err});
    return finish(eng.resume(), st, out);
}

int cmd_report(const std::string& dir, const std::string& format, std::ostream& out)
{
    const auto st = store::RunStore::open(dir);
    out << st.write_report(st.load_state(), format).string() << "\n";
    return 0;
}

int cmd_diversity(const std::string& dir, std::ostream& out)
{
    const auto st = store::RunStore::open(dir);
    out << diversity::render_table(diversity::report_for(st.load_state(), st.manifest().schema));
    return 0;
}

ParamMap read_morphology(const std::string& text, const MorphologySchema& schema)
{
    const Json j = Json::parse(text, nullptr, false);
    if (j.is_object()) {
        ParamMap values;
        for (const auto& [k, v] : j.items()) {
            if (!v.is_number())
                throw Error(Errc::ParseError, "parameter '" + k + "' is not a number");
            values[k] = v.get<double>();
        }
        return values;
    }
    return llm::extract_params_block(text, schema);
}

int cmd_eval_once(const std::string& morph_file, const std::string& reward_file, std::uint64_t seed,
                  std::ostream& out)
{
    const auto& schema = crawler::crawler_schema();
    const auto checked = validate_morphology(schema, read_morphology(read_file(morph_file), schema));
    MorphologyCandidate m{"m1", checked.values, Provenance::fixture, std::nullopt, {}};
    RewardCandidate r{"r1", std::string(trim(read_file(reward_file))), RewardDialect::builtin_dsl,
                      Provenance::fixture, std::nullopt};
    bridge::BuiltinEvaluator evaluator(EvaluatorSpec{});
    const auto result = evaluator.evaluate(m, r, seed, 0);
    Json j = result;
    j.erase("wall_time");
    out << j.dump(2) << "\n";
    return result.ok() ? 0 : 1;
}

int cmd_validate_reward(const std::string& file, std::ostream& out, std::ostream& err)
{
    const auto ast = reward::parse(trim(read_file(file)));
    const auto vars = reward::free_vars(ast);
    std::string list;
    for (const auto& v : vars)
        list += (list.empty() ? "" : ", ") + v;
    out << "free variables: {" << list << "}\n";
    const auto& known = crawler::state_variables();
    try {
        reward::check_variables(ast, std::set<std::string>(known.begin(), known.end()));
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    out << "ok\n";
    return 0;
}

} // namespace

RunSetup load_run_config(const fs::path& path)
{
    const fs::path base = fs::absolute(path).parent_path();
    Json j = parse_json(read_file(path), path.string());
    reject_unknown(j,
                   {"n_morphologies", "n_rewards", "top_k_fraction", "fine_max_iterations", "seed", "evaluator", "llm",
                    "training_budget", "fine_training_budget", "retrain_budget", "llm_max_retries", "context_budget",
                    "ranked_context_size", "schema", "templates_dir", "out"},
                   "config");

    RunSetup setup;
    try {
        if (j.contains("llm")) {
            auto& llm = j["llm"];
            reject_unknown(llm, {"kind", "fixture", "endpoint", "model", "api_key_env"}, "llm");
            if (llm.contains("fixture"))
                llm["fixture"] = resolve(base, llm["fixture"].get<std::string>());
        }
        if (j.contains("evaluator")) {
            auto& ev = j["evaluator"];
            reject_unknown(ev, {"kind", "workers", "timeout", "argv", "cem"}, "evaluator");
            if (ev.contains("cem"))
                reject_unknown(ev["cem"], {"population", "elites", "iterations"}, "evaluator.cem");
            if (ev.contains("argv") && !ev["argv"].empty()) {
                const auto prog = ev["argv"][0].get<std::string>();
                if (prog.find('/') != std::string::npos)
                    ev["argv"][0] = resolve(base, prog);
            }
        }
        setup.config = j.get<RunConfig>();

        const Json schema = j.value("schema", Json("crawler"));
        if (schema.is_string()) {
            if (schema.get<std::string>() != "crawler")
                throw Error(Errc::ConfigError, "unknown built-in schema '" + schema.get<std::string>() + "'");
            setup.schema = crawler::crawler_schema();
            setup.task = crawler::crawler_task_context();
        } else {
            reject_unknown(schema, {"file", "task"}, "schema");
            const auto schema_path = resolve(base, schema.at("file").get<std::string>());
            setup.schema = parse_json(read_file(schema_path), schema_path).get<MorphologySchema>();
            setup.schema.validate();
            const auto task_path = resolve(base, schema.at("task").get<std::string>());
            const Json task = parse_json(read_file(task_path), task_path);
            reject_unknown(task, {"task_description", "environment_source", "reward_output_format"}, "task file");
            setup.task = prompts::make_task_context(setup.schema, task.at("task_description").get<std::string>(),
                                                    task.at("environment_source").get<std::string>(),
                                                    task.at("reward_output_format").get<std::string>());
        }
        if (j.contains("templates_dir"))
            setup.templates_dir = resolve(base, j["templates_dir"].get<std::string>());
        if (j.contains("out"))
            setup.out = resolve(base, j["out"].get<std::string>());
    } catch (const Json::exception& e) {
        throw Error(Errc::ConfigError, path.string() + ": " + e.what());
    }
    setup.config.validate();
    return setup;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Robot morphology and reward co-design", "codesign"};
    app.require_subcommand(1);

    std::string config_path, out_dir, dir, format = "md", morph_file, reward_file, reward_path;
    std::uint64_t seed = 0;

    auto* run = app.add_subcommand("run", "Start a new run from a config file");
    run->add_option("--config", config_path, "JSON config file")->required();
    run->add_option("--out", out_dir, "Run directory (overrides the config)");

    auto* resume = app.add_subcommand("resume", "Continue an interrupted run");
    resume->add_option("dir", dir, "Run directory")->required();

    auto* report = app.add_subcommand("report", "Write the report of a run");
    report->add_option("dir", dir, "Run directory")->required();
    report->add_option("--format", format, "csv or md")->check(CLI::IsMember({"csv", "md"}));

    auto* div = app.add_subcommand("diversity", "Print diversity metrics of a run");
    div->add_option("dir", dir, "Run directory")->required();

    auto* once = app.add_subcommand("eval-once", "Train and measure one crawler design");
    once->add_option("--morphology", morph_file, "Parameter file (JSON object or name: value lines)")->required();
    once->add_option("--reward", reward_file, "Reward expression file")->required();
    once->add_option("--seed", seed, "Trainer seed")->required();

    auto* check = app.add_subcommand("validate-reward", "Parse a reward expression");
    check->add_option("file", reward_path, "Reward expression file")->required();

    std::vector<const char*> argv{"codesign"};
    for (const auto& a : args)
        argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (run->parsed())
            return cmd_run(config_path, out_dir, out, err);
        if (resume->parsed())
            return cmd_resume(dir, out, err);
        if (report->parsed())
            return cmd_report(dir, format, out);
        if (div->parsed())
            return cmd_diversity(dir, out);
        if (once->parsed())
            return cmd_eval_once(morph_file, reward_file, seed, out);
        return cmd_validate_reward(reward_path, out, err);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    } catch (const Error& e) {
        err << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
        return e.code() == Errc::ConfigError ? 2 : 1;
    }
}

} // namespace codesign::cli
