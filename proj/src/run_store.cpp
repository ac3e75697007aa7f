#include "codesign/run_store.hpp"

#include "codesign/diversity.hpp"
#include "codesign/error.hpp"
#include "codesign/text.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>
#include <unistd.h>

namespace codesign::store {

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr std::array<const char*, 5> kLayout = {"morphologies", "rewards", "grid", "fine", "report"};

// An init that was interrupted before its manifest landed leaves only
// empty layout directories behind; such a directory may be reused.
bool only_empty_layout(const fs::path& dir)
{
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(dir, ec)) {
        const auto name = entry.path().filename().string();
        const bool layout = std::find(kLayout.begin(), kLayout.end(), name) != kLayout.end();
        if (!layout || !entry.is_directory() || !fs::is_empty(entry.path(), ec))
            return false;
    }
    return !ec;
}

std::string now_utc()
{
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string read_text(const fs::path& p)
{
    std::ifstream in(p);
    if (!in)
        throw Error(Errc::CorruptRun, "missing file " + p.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

Json task_json(const prompts::TaskContext& t)
{
    return Json{{"task_description", t.task_description},
                {"environment_source", t.environment_source},
                {"structure_template", t.structure_template},
                {"output_format", t.output_format},
                {"reward_output_format", t.reward_output_format}};
}

prompts::TaskContext task_from(const Json& j)
{
    return {j.at("task_description").get<std::string>(), j.at("environment_source").get<std::string>(),
            j.at("structure_template").get<std::string>(), j.at("output_format").get<std::string>(),
            j.at("reward_output_format").get<std::string>()};
}

Json manifest_json(const Manifest& m)
{
    Json j;
    j["format"] = m.format;
    j["created"] = m.created;
    j["updated"] = m.updated;
    j["status"] = to_string(m.status);
    j["abort_reason"] = m.abort_reason;
    j["seed"] = m.config.seed;
    j["config"] = m.config;
    j["schema"] = m.schema;
    j["schema_fingerprint"] = m.schema.fingerprint();
    j["task"] = task_json(m.task);
    j["templates_dir"] = m.templates_dir ? Json(*m.templates_dir) : Json(nullptr);
    j["completed"] = m.completed;
    j["llm_cursor"] = m.llm_cursor;
    j["selected"] = m.selected ? Json(*m.selected) : Json(nullptr);
    j["fine_done"] = m.fine_done;
    return j;
}

Manifest manifest_from(const Json& j)
{
    Manifest m;
    m.format = j.at("format").get<int>();
    if (m.format != 1)
        throw Error(Errc::CorruptRun, "unsupported manifest format " + std::to_string(m.format));
    m.created = j.at("created").get<std::string>();
    m.updated = j.at("updated").get<std::string>();
    m.status = run_status_from_string(j.at("status").get<std::string>());
    m.abort_reason = j.value("abort_reason", std::string{});
    m.config = j.at("config").get<RunConfig>();
    m.schema = j.at("schema").get<MorphologySchema>();
    if (m.schema.fingerprint() != j.at("schema_fingerprint").get<std::string>())
        throw Error(Errc::CorruptRun, "schema fingerprint does not match the stored schema");
    m.task = task_from(j.at("task"));
    if (!j.at("templates_dir").is_null())
        m.templates_dir = j.at("templates_dir").get<std::string>();
    m.completed = j.at("completed").get<std::vector<std::string>>();
    m.llm_cursor = j.at("llm_cursor").get<llm::Cursor>();
    if (!j.at("selected").is_null())
        m.selected = j.at("selected").get<std::vector<PairId>>();
    m.fine_done = j.at("fine_done").get<std::vector<std::string>>();
    return m;
}

std::string cell(double v) { return std::isfinite(v) ? format_real(v) : ""; }
std::string cell(const std::optional<double>& v) { return v ? format_real(*v) : ""; }

struct Row {
    std::string stage, pair, morphology_id, reward_id, iteration, phase, status, fitness, volume, efficiency,
        accepted;
};

std::vector<Row> report_rows(const RunState& state)
{
    std::vector<Row> rows;
    auto add = [&](std::string stage, const EvaluationResult& r, std::string iteration, std::string phase,
                   std::string accepted) {
        rows.push_back({std::move(stage), r.pair.str(), r.pair.morphology_id, r.pair.reward_id, std::move(iteration),
                        std::move(phase), std::string(to_string(r.status)), cell(r.fitness), cell(r.volume),
                        cell(r.efficiency), std::move(accepted)});
    };
    for (const auto& [pair, r] : state.grid)
        add("grid", r, "", "", "");
    for (const auto& [pair, steps] : state.fine_trajectories)
        for (const auto& s : steps) {
            add("fine:" + pair.str(), s.result, std::to_string(s.iteration), std::string(to_string(s.phase)),
                s.accepted ? "yes" : "no");
            if (s.candidate_id.empty())
                rows.back().status = "no_proposal";
        }
    if (auto best = best_result(state))
        add("best", best->result, "", "", "");
    return rows;
}

} // namespace

std::string morphology_key(std::string_view id) { return "morphologies/" + std::string(id); }
std::string reward_key(std::string_view id) { return "rewards/" + std::string(id); }
std::string grid_key(const PairId& pair) { return "grid/" + pair.str(); }
std::string fine_key(const PairId& pair, int iteration, FinePhase phase)
{
    return "fine/" + pair.str() + "/iter_" + std::to_string(iteration) + "_" + std::string(to_string(phase));
}

void write_atomic(const fs::path& path, std::string_view content)
{
    const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw Error(Errc::IoError, "cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out)
            throw Error(Errc::IoError, "short write to " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec)
        throw Error(Errc::IoError, "cannot rename " + tmp.string() + ": " + ec.message());
}

RunStore RunStore::init(const fs::path& dir, const RunConfig& config, const MorphologySchema& schema,
                        const prompts::TaskContext& task, std::optional<std::string> templates_dir)
{
    config.validate();
    schema.validate();
    std::error_code ec;
    if (fs::exists(dir, ec) && !fs::is_empty(dir, ec) && !only_empty_layout(dir))
        throw Error(Errc::DirNotEmpty, dir.string() + " is not empty");
    for (const char* sub : kLayout) {
        fs::create_directories(dir / sub, ec);
        if (ec)
            throw Error(Errc::IoError, "cannot create " + (dir / sub).string() + ": " + ec.message());
    }
    Manifest m;
    m.created = m.updated = now_utc();
    m.config = config;
    m.schema = schema;
    m.task = task;
    m.templates_dir = std::move(templates_dir);
    RunStore s(dir, std::move(m));
    s.save_manifest();
    return s;
}

RunStore RunStore::open(const fs::path& dir)
{
    Manifest m;
    try {
        m = manifest_from(Json::parse(read_text(dir / kManifest)));
    } catch (const Json::exception& e) {
        throw Error(Errc::CorruptRun, std::string("unreadable manifest: ") + e.what());
    } catch (const Error& e) {
        if (e.code() == Errc::CorruptRun)
            throw;
        throw Error(Errc::CorruptRun, std::string("unreadable manifest: ") + e.what());
    }
    RunStore s(dir, std::move(m));
    s.completed_.insert(s.manifest_.completed.begin(), s.manifest_.completed.end());
    return s;
}

RunStore::RunStore(RunStore&& other) noexcept
    : dir_(std::move(other.dir_)), manifest_(std::move(other.manifest_)),
      completed_(std::move(other.completed_)), hook_(std::move(other.hook_))
{
}

bool RunStore::completed(std::string_view key) const
{
    std::lock_guard lock(mutex_);
    return completed_.contains(key);
}

void RunStore::before(std::string_view key)
{
    if (hook_)
        hook_(key);
}

void RunStore::save_manifest()
{
    manifest_.updated = now_utc();
    write_atomic(dir_ / kManifest, manifest_json(manifest_).dump(2) + "\n");
}

void RunStore::commit(const std::string& key, const Json& body, const llm::Cursor* cursor)
{
    std::lock_guard lock(mutex_);
    if (completed_.contains(key))
        throw Error(Errc::DuplicateKey, key + " is already recorded");
    before(key);
    const fs::path file = dir_ / (key + ".json");
    std::error_code ec;
    fs::create_directories(file.parent_path(), ec);
    if (ec)
        throw Error(Errc::IoError, "cannot create " + file.parent_path().string());
    write_atomic(file, body.dump(2) + "\n");
    manifest_.completed.push_back(key);
    if (cursor)
        manifest_.llm_cursor = *cursor;
    completed_.insert(key);
    save_manifest();
}

void RunStore::record_morphology(const MorphologyCandidate& m, const llm::Cursor& cursor)
{
    commit(morphology_key(m.id), Json(m), &cursor);
}

void RunStore::record_reward(const RewardCandidate& r, const llm::Cursor& cursor)
{
    commit(reward_key(r.id), Json(r), &cursor);
}

void RunStore::record_grid(const EvaluationResult& result) { commit(grid_key(result.pair), Json(result), nullptr); }

void RunStore::record_fine_step(const PairId& pair, const FineStep& step,
                                const std::optional<MorphologyCandidate>& morphology,
                                const std::optional<RewardCandidate>& reward, const llm::Cursor& cursor)
{
    Json body{{"pair", pair}, {"step", step}};
    body["morphology"] = morphology ? Json(*morphology) : Json(nullptr);
    body["reward"] = reward ? Json(*reward) : Json(nullptr);
    commit(fine_key(pair, step.iteration, step.phase), body, &cursor);
}

void RunStore::record_selection(const std::vector<PairId>& selected)
{
    std::lock_guard lock(mutex_);
    before("selection");
    manifest_.selected = selected;
    save_manifest();
}

void RunStore::mark_fine_done(const PairId& pair, std::optional<llm::Cursor> cursor)
{
    std::lock_guard lock(mutex_);
    before("fine_done/" + pair.str());
    manifest_.fine_done.push_back(pair.str());
    if (cursor)
        manifest_.llm_cursor = std::move(*cursor);
    save_manifest();
}

void RunStore::set_status(RunStatus status, std::string reason)
{
    std::lock_guard lock(mutex_);
    before("status/" + std::string(to_string(status)));
    manifest_.status = status;
    manifest_.abort_reason = std::move(reason);
    save_manifest();
}

RunState RunStore::load_state() const
{
    std::lock_guard lock(mutex_);
    RunState state;
    state.config = manifest_.config;
    state.status = manifest_.status;
    for (const auto& key : manifest_.completed) {
        const fs::path file = dir_ / (key + ".json");
        try {
            const Json j = Json::parse(read_text(file));
            if (key.starts_with("morphologies/")) {
                state.morphologies.push_back(j.get<MorphologyCandidate>());
            } else if (key.starts_with("rewards/")) {
                state.rewards.push_back(j.get<RewardCandidate>());
            } else if (key.starts_with("grid/")) {
                auto r = j.get<EvaluationResult>();
                state.grid[r.pair] = std::move(r);
            } else if (key.starts_with("fine/")) {
                const auto pair = j.at("pair").get<PairId>();
                state.fine_trajectories[pair].push_back(j.at("step").get<FineStep>());
                if (!j.at("morphology").is_null()) {
                    auto m = j.at("morphology").get<MorphologyCandidate>();
                    state.fine_morphologies[m.id] = m;
                }
                if (!j.at("reward").is_null()) {
                    auto r = j.at("reward").get<RewardCandidate>();
                    state.fine_rewards[r.id] = r;
                }
            } else {
                throw Error(Errc::CorruptRun, "unknown key " + key);
            }
        } catch (const Json::exception& e) {
            throw Error(Errc::CorruptRun, file.string() + ": " + e.what());
        } catch (const Error& e) {
            if (e.code() == Errc::CorruptRun)
                throw;
            throw Error(Errc::CorruptRun, file.string() + ": " + e.what());
        }
    }
    if (manifest_.selected)
        state.selected = *manifest_.selected;
    return state;
}

std::vector<std::string> RunStore::pending() const
{
    std::lock_guard lock(mutex_);
    std::vector<std::string> out;
    const auto& cfg = manifest_.config;
    auto want = [&](std::string key) {
        if (!completed_.contains(key))
            out.push_back(std::move(key));
    };
    for (int i = 1; i <= cfg.n_morphologies; ++i)
        want(morphology_key("m" + std::to_string(i)));
    for (int j = 1; j <= cfg.n_rewards; ++j)
        want(reward_key("r" + std::to_string(j)));
    for (int i = 1; i <= cfg.n_morphologies; ++i)
        for (int j = 1; j <= cfg.n_rewards; ++j)
            want(grid_key({"m" + std::to_string(i), "r" + std::to_string(j)}));
    if (manifest_.selected)
        for (const auto& p : *manifest_.selected)
            if (std::find(manifest_.fine_done.begin(), manifest_.fine_done.end(), p.str()) ==
                manifest_.fine_done.end())
                out.push_back("fine/" + p.str());
    return out;
}

fs::path RunStore::write_report(const RunState& state, std::string_view format) const
{
    const std::string text = render_report(state, manifest_.schema, format);
    const fs::path path = dir_ / "report" / ("report." + std::string(format));
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    write_atomic(path, text);
    return path;
}

std::optional<BestPair> best_result(const RunState& state)
{
    std::optional<BestPair> best;
    auto consider = [&](const EvaluationResult& r) {
        if (!r.ok())
            return;
        if (!best || r.score() > best->result.score() ||
            (r.score() == best->result.score() && r.pair < best->pair))
            best = BestPair{r.pair, r};
    };
    for (const auto& [pair, r] : state.grid)
        consider(r);
    for (const auto& [pair, steps] : state.fine_trajectories)
        for (const auto& s : steps)
            if (s.accepted)
                consider(s.result);
    return best;
}

std::string render_report(const RunState& state, const MorphologySchema& schema, std::string_view format)
{
    static const char* const kHeader[] = {"stage",  "pair",    "morphology_id", "reward_id",
                                          "iteration", "phase", "status",        "fitness",
                                          "volume", "efficiency", "accepted"};
    const auto rows = report_rows(state);
    auto fields = [](const Row& r) {
        return std::vector<std::string>{r.stage,  r.pair,    r.morphology_id, r.reward_id,
                                        r.iteration, r.phase, r.status,        r.fitness,
                                        r.volume, r.efficiency, r.accepted};
    };
    std::string out;
    if (format == "csv") {
        for (std::size_t i = 0; i < std::size(kHeader); ++i)
            out += (i ? "," : "") + std::string(kHeader[i]);
        out += "\n";
        for (const auto& r : rows) {
            const auto f = fields(r);
            for (std::size_t i = 0; i < f.size(); ++i)
                out += (i ? "," : "") + f[i];
            out += "\n";
        }
        return out;
    }
    if (format != "md")
        throw Error(Errc::ConfigError, "unknown report format " + std::string(format));

    out += "# Run report\n\n";
    out += "Status: " + std::string(to_string(state.status)) + "\n\n";
    if (auto best = best_result(state))
        out += "Best pair: " + best->pair.str() + " (efficiency " + cell(best->result.efficiency) + ", fitness " +
               cell(best->result.fitness) + ", volume " + cell(best->result.volume) + ")\n\n";
    else
        out += "Best pair: none (no successful evaluation)\n\n";
    out += "## Evaluations\n\n|";
    for (const char* h : kHeader)
        out += " " + std::string(h) + " |";
    out += "\n|";
    for (std::size_t i = 0; i < std::size(kHeader); ++i)
        out += "---|";
    out += "\n";
    for (const auto& r : rows) {
        out += "|";
        for (const auto& f : fields(r))
            out += " " + f + " |";
        out += "\n";
    }
    out += "\n## Diversity\n\n" + diversity::render_table(diversity::report_for(state, schema));
    return out;
}

} // namespace codesign::store
