#pragma once

// Evaluators: the in-process crawler and external worker processes that
// speak the line-delimited protocol described in docs/protocol.md.

#include "codesign/crawler_sim.hpp"
#include "codesign/model.hpp"

#include <condition_variable>
#include <functional>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace codesign::bridge {

inline constexpr int kProtocolVersion = 1;
inline constexpr double kHandshakeTimeout = 10.0;

struct EvaluatorJob {
    std::string job_id;
    PairId pair;
    std::string schema;
    ParamMap morphology;
    std::string reward_source;
    RewardDialect dialect = RewardDialect::builtin_dsl;
    std::int64_t training_budget = 0;
    std::uint64_t seed = 0;
    double timeout_s = 1800.0;

    /// Throws ContractViolation for an empty job id or a non-positive timeout.
    void validate() const;
};

/// The `evaluate` message for a job, as one line without the newline.
std::string encode_job(const EvaluatorJob& job);

/// Maps a `result` message onto an EvaluationResult. A result that claims
/// ok with a non-positive volume becomes runtime_error.
EvaluationResult decode_result(const EvaluatorJob& job, const std::string& line);

/// One child process. Its standard input and output carry the protocol;
/// standard error is inherited.
class Worker {
public:
    /// Starts the process and waits for its hello. Throws SpawnError,
    /// HandshakeTimeout or ProtocolVersionMismatch.
    static std::unique_ptr<Worker> spawn(const std::vector<std::string>& argv,
                                         double handshake_timeout_s = kHandshakeTimeout);

    ~Worker();
    Worker(const Worker&) = delete;
    Worker& operator=(const Worker&) = delete;

    const std::vector<std::string>& schemas() const { return schemas_; }
    int pid() const { return pid_; }

    /// Throws WorkerFailure when the process can no longer be written to.
    void send_line(const std::string& line);

    /// Next line, or nullopt when nothing arrived within the timeout.
    /// Throws WorkerFailure on end of stream.
    std::optional<std::string> read_line(double timeout_s);

    void kill();

private:
    Worker(int pid, int fd) : pid_(pid), fd_(fd) {}

    int pid_ = -1;
    int fd_ = -1;
    std::string buffer_;
    std::vector<std::string> schemas_;
};

/// A worker plus the command that recreates it after a failure.
class WorkerSlot {
public:
    explicit WorkerSlot(std::vector<std::string> argv, double handshake_timeout_s = kHandshakeTimeout);

    /// Runs one job. Progress lines reset the idle clock. On a timeout or a
    /// crash the worker is killed and respawned and the job is retried once;
    /// a second failure yields status timeout or runtime_error. Throws only
    /// when the respawn itself fails.
    EvaluationResult evaluate(const EvaluatorJob& job);

    const Worker& worker() const { return *worker_; }
    int respawns() const { return respawns_; }

private:
    std::vector<std::string> argv_;
    double handshake_timeout_s_;
    std::unique_ptr<Worker> worker_;
    int respawns_ = 0;
};

/// Same as WorkerSlot::evaluate.
EvaluationResult evaluate_remote(WorkerSlot& slot, const EvaluatorJob& job);

class Evaluator {
public:
    virtual ~Evaluator() = default;

    virtual EvaluationResult evaluate(const MorphologyCandidate& m, const RewardCandidate& r,
                                      std::uint64_t seed, std::int64_t training_budget) = 0;

    /// How many evaluate calls may run at once.
    virtual std::size_t concurrency() const = 0;

    /// Variables a builtin_dsl reward may use, when the evaluator restricts them.
    virtual std::optional<std::set<std::string>> reward_variables() const { return std::nullopt; }
};

class BuiltinEvaluator : public Evaluator {
public:
    explicit BuiltinEvaluator(const EvaluatorSpec& spec, crawler::SimConfig sim = {});

    EvaluationResult evaluate(const MorphologyCandidate& m, const RewardCandidate& r, std::uint64_t seed,
                              std::int64_t training_budget) override;
    std::size_t concurrency() const override { return workers_; }
    std::optional<std::set<std::string>> reward_variables() const override;

private:
    crawler::CemConfig cem_;
    crawler::SimConfig sim_;
    std::size_t workers_;
};

/// A pool of worker processes; each handles one job at a time.
class SubprocessEvaluator : public Evaluator {
public:
    /// Spawns spec.workers processes and checks each advertises `schema`.
    SubprocessEvaluator(const EvaluatorSpec& spec, std::string schema);

    EvaluationResult evaluate(const MorphologyCandidate& m, const RewardCandidate& r, std::uint64_t seed,
                              std::int64_t training_budget) override;
    std::size_t concurrency() const override { return slots_.size(); }

private:
    std::string schema_;
    double timeout_s_;
    std::vector<std::unique_ptr<WorkerSlot>> slots_;
    std::vector<bool> busy_;
    std::mutex mutex_;
    std::condition_variable idle_;
};

std::unique_ptr<Evaluator> make_evaluator(const EvaluatorSpec& spec, const MorphologySchema& schema);

struct EvalRequest {
    const MorphologyCandidate* morphology = nullptr;
    const RewardCandidate* reward = nullptr;
    std::uint64_t seed = 0;
    std::int64_t training_budget = 0;
};

/// Evaluates every request using up to evaluator.concurrency() threads.
/// `on_result` runs on the calling thread, once per request, in completion
/// order; the return value is in request order.
std::vector<EvaluationResult> evaluate_all(Evaluator& evaluator, std::span<const EvalRequest> requests,
                                           const std::function<void(std::size_t, const EvaluationResult&)>& on_result = {});

} // namespace codesign::bridge
