#pragma once

// Run directories: one JSON file per durable unit plus a manifest that
// lists, in commit order, every unit that has been written.
//
//   manifest.json
//   morphologies/m1.json            rewards/r1.json
//   grid/m3_r2.json                 fine/m3_r2/iter_1_morphology.json
//   report/report.md | report.csv

#include "codesign/llm_gateway.hpp"
#include "codesign/model.hpp"
#include "codesign/prompt_forge.hpp"
#include "codesign/serialization.hpp"

#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace codesign::store {

namespace fs = std::filesystem;

std::string morphology_key(std::string_view id);
std::string reward_key(std::string_view id);
std::string grid_key(const PairId& pair);
std::string fine_key(const PairId& pair, int iteration, FinePhase phase);

/// Writes `content` to a sibling temporary file and renames it over `path`.
void write_atomic(const fs::path& path, std::string_view content);

struct Manifest {
    int format = 1;
    std::string created;
    std::string updated;
    RunStatus status = RunStatus::coarse;
    std::string abort_reason;
    RunConfig config;
    MorphologySchema schema;
    prompts::TaskContext task;
    std::optional<std::string> templates_dir;
    std::vector<std::string> completed; // commit order
    llm::Cursor llm_cursor;
    std::optional<std::vector<PairId>> selected;
    std::vector<std::string> fine_done; // pair strings whose fine stage ended
};

class RunStore {
public:
    /// Creates the layout in an empty or absent directory. Throws
    /// DirNotEmpty or IoError.
    static RunStore init(const fs::path& dir, const RunConfig& config, const MorphologySchema& schema,
                         const prompts::TaskContext& task, std::optional<std::string> templates_dir = {});

    /// Opens an existing run. Throws CorruptRun when the manifest is missing
    /// or unreadable.
    static RunStore open(const fs::path& dir);

    RunStore(RunStore&& other) noexcept;

    const fs::path& dir() const { return dir_; }
    const Manifest& manifest() const { return manifest_; }
    bool completed(std::string_view key) const;

    // Each record writes its file, then extends the manifest. Throws DuplicateKey.
    void record_morphology(const MorphologyCandidate& m, const llm::Cursor& cursor);
    void record_reward(const RewardCandidate& r, const llm::Cursor& cursor);
    void record_grid(const EvaluationResult& result);
    void record_fine_step(const PairId& pair, const FineStep& step,
                          const std::optional<MorphologyCandidate>& morphology,
                          const std::optional<RewardCandidate>& reward, const llm::Cursor& cursor);

    void record_selection(const std::vector<PairId>& selected);
    /// `cursor`, when given, replaces the stored provider cursor so responses
    /// consumed by a fine stage that ended without a record are not replayed.
    void mark_fine_done(const PairId& pair, std::optional<llm::Cursor> cursor = {});
    void set_status(RunStatus status, std::string reason = {});

    /// Rebuilds the run state from the recorded files. Throws CorruptRun
    /// when a file listed in the manifest is missing or malformed.
    RunState load_state() const;

    /// Units still to do: coarse keys not yet committed, then `fine/<pair>`
    /// for each selected pair whose fine stage has not ended.
    std::vector<std::string> pending() const;

    /// Called with the key before anything is written for it; lets tests
    /// interrupt a run at an exact point.
    void set_commit_hook(std::function<void(std::string_view)> hook) { hook_ = std::move(hook); }

    /// Writes report/report.<format> and returns its path.
    fs::path write_report(const RunState& state, std::string_view format) const;

private:
    RunStore(fs::path dir, Manifest manifest) : dir_(std::move(dir)), manifest_(std::move(manifest)) {}

    void commit(const std::string& key, const Json& body, const llm::Cursor* cursor);
    void save_manifest();
    void before(std::string_view key);

    fs::path dir_;
    Manifest manifest_;
    std::set<std::string, std::less<>> completed_;
    std::function<void(std::string_view)> hook_;
    mutable std::mutex mutex_;
};

struct BestPair {
    PairId pair;
    EvaluationResult result;
};

/// Highest-efficiency ok result over the grid and the accepted fine steps;
/// ties go to the lexicographically smaller pair.
std::optional<BestPair> best_result(const RunState& state);

/// Report text: one row per grid cell, the fine steps, the best pair and
/// (markdown only) the diversity table. Numbers are written identically in
/// both formats. Throws ConfigError for an unknown format.
std::string render_report(const RunState& state, const MorphologySchema& schema, std::string_view format);

} // namespace codesign::store
