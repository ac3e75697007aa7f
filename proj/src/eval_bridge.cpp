#include "codesign/eval_bridge.hpp"

#include "codesign/error.hpp"
#include "codesign/serialization.hpp"

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <deque>
#include <exception>
#include <thread>
#include <variant>

#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

extern char** environ;

namespace codesign::bridge {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_until(Clock::time_point deadline)
{
    return std::chrono::duration<double>(deadline - Clock::now()).count();
}

Clock::time_point deadline_after(double seconds)
{
    return Clock::now() + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(seconds));
}

// Why a job attempt did not produce a result line.
enum class AttemptFailure { timeout, crash };

struct AttemptError {
    AttemptFailure kind;
    std::string detail;
};

} // namespace

void EvaluatorJob::validate() const
{
    if (job_id.empty())
        throw Error(Errc::ContractViolation, "job id must not be empty");
    if (!(timeout_s > 0.0))
        throw Error(Errc::ContractViolation, "job timeout must be positive");
}

std::string encode_job(const EvaluatorJob& job)
{
    Json msg = {{"type", "evaluate"},
                {"job_id", job.job_id},
                {"schema", job.schema},
                {"morphology", job.morphology},
                {"reward", {{"source", job.reward_source}, {"dialect", to_string(job.dialect)}}},
                {"training_budget", job.training_budget},
                {"seed", job.seed},
                {"timeout", job.timeout_s}};
    return msg.dump();
}

EvaluationResult decode_result(const EvaluatorJob& job, const std::string& line)
{
    const Json msg = Json::parse(line);
    const std::string status_text = msg.at("status").get<std::string>();
    const std::string detail = msg.value("detail", std::string());
    EvalStatus status = EvalStatus::runtime_error;
    try {
        status = eval_status_from_string(status_text);
    } catch (const Error&) {
        return EvaluationResult::failed(job.pair, EvalStatus::runtime_error,
                                        "worker reported unknown status " + status_text, job.seed);
    }
    if (status != EvalStatus::ok)
        return EvaluationResult::failed(job.pair, status, detail, job.seed);

    auto number = [&](const char* key) {
        const auto& v = msg.at(key);
        return v.is_null() ? std::nan("") : v.get<double>();
    };
    const double fitness = number("fitness");
    const double volume = number("volume");
    const double train_return = msg.contains("train_return") ? number("train_return") : std::nan("");
    if (!(volume > 0.0) && std::isfinite(volume))
        return EvaluationResult::failed(job.pair, EvalStatus::runtime_error,
                                        "protocol violation: ok result with non-positive volume", job.seed);
    auto result = EvaluationResult::evaluated(job.pair, fitness, volume, train_return, job.seed);
    if (!detail.empty() && result.detail.empty())
        result.detail = detail;
    return result;
}

std::unique_ptr<Worker> Worker::spawn(const std::vector<std::string>& argv, double handshake_timeout_s)
{
    if (argv.empty())
        throw Error(Errc::SpawnError, "empty worker command");
    int fds[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, fds) != 0)
        throw Error(Errc::SpawnError, std::string("socketpair: ") + std::strerror(errno));

    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, fds[1], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, fds[1], STDOUT_FILENO);

    std::vector<char*> args;
    for (const auto& a : argv)
        args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);

    pid_t pid = -1;
    const int rc = ::posix_spawnp(&pid, args[0], &actions, nullptr, args.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    ::close(fds[1]);
    if (rc != 0) {
        ::close(fds[0]);
        throw Error(Errc::SpawnError, "cannot start " + argv[0] + ": " + std::strerror(rc));
    }

    std::unique_ptr<Worker> w(new Worker(pid, fds[0]));
    std::optional<std::string> hello;
    try {
        hello = w->read_line(handshake_timeout_s);
    } catch (const Error& e) {
        throw Error(Errc::SpawnError, argv[0] + " exited before its hello: " + e.what());
    }
    if (!hello)
        throw Error(Errc::HandshakeTimeout, argv[0] + " sent no hello within " +
                                                std::to_string(handshake_timeout_s) + " s");
    Json msg;
    try {
        msg = Json::parse(*hello);
    } catch (const Json::exception&) {
        throw Error(Errc::SpawnError, "malformed hello: " + *hello);
    }
    if (!msg.is_object() || msg.value("type", "") != "hello")
        throw Error(Errc::SpawnError, "first message was not a hello: " + *hello);
    if (!msg.contains("protocol") || msg["protocol"] != kProtocolVersion)
        throw Error(Errc::ProtocolVersionMismatch,
                    "worker speaks protocol " + (msg.contains("protocol") ? msg["protocol"].dump() : "?") +
                        ", expected " + std::to_string(kProtocolVersion));
    for (const auto& s : msg.value("schemas", Json::array()))
        w->schemas_.push_back(s.get<std::string>());
    return w;
}

Worker::~Worker()
{
    if (fd_ >= 0)
        ::close(fd_);
    fd_ = -1;
    if (pid_ <= 0)
        return;
    // A well-behaved worker exits on end of input; give it a moment.
    for (int i = 0; i < 50; ++i) {
        if (::waitpid(pid_, nullptr, WNOHANG) == pid_)
            return;
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    kill();
}

void Worker::kill()
{
    if (pid_ > 0) {
        ::kill(pid_, SIGKILL);
        ::waitpid(pid_, nullptr, 0);
        pid_ = -1;
    }
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

void Worker::send_line(const std::string& line)
{
    const std::string data = line + "\n";
    std::size_t sent = 0;
    while (sent < data.size()) {
        if (fd_ < 0)
            throw Error(Errc::WorkerFailure, "worker is closed");
        const ssize_t n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR)
                continue;
            throw Error(Errc::WorkerFailure, std::string("write to worker failed: ") + std::strerror(errno));
        }
        sent += static_cast<std::size_t>(n);
    }
}

std::optional<std::string> Worker::read_line(double timeout_s)
{
    const auto deadline = deadline_after(timeout_s);
    char chunk[4096];
    for (;;) {
        if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
            std::string line = buffer_.substr(0, nl);
            buffer_.erase(0, nl + 1);
            if (!line.empty() && line.back() == '\r')
                line.pop_back();
            return line;
        }
        if (fd_ < 0)
            throw Error(Errc::WorkerFailure, "worker is closed");
        const double left = seconds_until(deadline);
        if (left <= 0.0)
            return std::nullopt;
        pollfd p{fd_, POLLIN, 0};
        const int ms = static_cast<int>(std::min(left * 1000.0 + 1.0, 1e9));
        const int rc = ::poll(&p, 1, ms);
        if (rc < 0) {
            if (errno == EINTR)
                continue;
            throw Error(Errc::WorkerFailure, std::string("poll failed: ") + std::strerror(errno));
        }
        if (rc == 0)
            continue;
        const ssize_t n = ::read(fd_, chunk, sizeof chunk);
        if (n < 0) {
            if (errno == EINTR || errno == EAGAIN)
                continue;
            throw Error(Errc::WorkerFailure, std::string("read failed: ") + std::strerror(errno));
        }
        if (n == 0)
            throw Error(Errc::WorkerFailure, "worker closed its output");
        buffer_.append(chunk, static_cast<std::size_t>(n));
    }
}

WorkerSlot::WorkerSlot(std::vector<std::string> argv, double handshake_timeout_s)
    : argv_(std::move(argv)), handshake_timeout_s_(handshake_timeout_s),
      worker_(Worker::spawn(argv_, handshake_timeout_s))
{
}

EvaluationResult WorkerSlot::evaluate(const EvaluatorJob& job)
{
    job.validate();
    const auto started = Clock::now();
    auto finish = [&](EvaluationResult r) {
        r.wall_time = std::chrono::duration<double>(Clock::now() - started).count();
        return r;
    };

    auto attempt = [&]() -> std::variant<EvaluationResult, AttemptError> {
        try {
            worker_->send_line(encode_job(job));
            for (;;) {
                auto line = worker_->read_line(job.timeout_s);
                if (!line)
                    return AttemptError{AttemptFailure::timeout,
                                        "no message for " + std::to_string(job.timeout_s) + " s"};
                Json msg;
                try {
                    msg = Json::parse(*line);
                } catch (const Json::exception&) {
                    return AttemptError{AttemptFailure::crash, "malformed line from worker: " + *line};
                }
                const std::string type = msg.value("type", "");
                if (msg.value("job_id", "") != job.job_id)
                    return AttemptError{AttemptFailure::crash, "message for a different job: " + *line};
                if (type == "progress")
                    continue;
                if (type != "result")
                    return AttemptError{AttemptFailure::crash, "unexpected message type: " + type};
                try {
                    return decode_result(job, *line);
                } catch (const Json::exception& e) {
                    return AttemptError{AttemptFailure::crash, std::string("malformed result: ") + e.what()};
                }
            }
        } catch (const Error& e) {
            if (e.code() != Errc::WorkerFailure)
                throw;
            return AttemptError{AttemptFailure::crash, e.what()};
        }
    };

    AttemptError last{AttemptFailure::crash, ""};
    for (int round = 0; round < 2; ++round) {
        if (!worker_) {
            worker_ = Worker::spawn(argv_, handshake_timeout_s_);
            ++respawns_;
        }
        auto outcome = attempt();
        if (auto* r = std::get_if<EvaluationResult>(&outcome))
            return finish(std::move(*r));
        last = std::get<AttemptError>(outcome);
        worker_->kill();
        worker_.reset();
    }
    // Leave a live worker behind for the next job.
    worker_ = Worker::spawn(argv_, handshake_timeout_s_);
    ++respawns_;
    const auto status = last.kind == AttemptFailure::timeout ? EvalStatus::timeout : EvalStatus::runtime_error;
    return finish(EvaluationResult::failed(job.pair, status, "failed twice: " + last.detail, job.seed));
}

EvaluationResult evaluate_remote(WorkerSlot& slot, const EvaluatorJob& job) { return slot.evaluate(job); }

BuiltinEvaluator::BuiltinEvaluator(const EvaluatorSpec& spec, crawler::SimConfig sim)
    : sim_(sim), workers_(std::max<std::size_t>(1, spec.workers))
{
    cem_.population = spec.cem_population;
    cem_.elites = spec.cem_elites;
    cem_.iterations = spec.cem_iterations;
    cem_.validate();
}

EvaluationResult BuiltinEvaluator::evaluate(const MorphologyCandidate& m, const RewardCandidate& r,
                                            std::uint64_t seed, std::int64_t)
{
    auto cem = cem_;
    cem.seed = seed;
    return crawler::evaluate_builtin(m, r, cem, sim_);
}

std::optional<std::set<std::string>> BuiltinEvaluator::reward_variables() const
{
    const auto& vars = crawler::state_variables();
    return std::set<std::string>(vars.begin(), vars.end());
}

SubprocessEvaluator::SubprocessEvaluator(const EvaluatorSpec& spec, std::string schema)
    : schema_(std::move(schema)), timeout_s_(spec.timeout_s)
{
    if (spec.argv.empty())
        throw Error(Errc::ConfigError, "subprocess evaluator needs a command");
    const std::size_t n = std::max<std::size_t>(1, spec.workers);
    for (std::size_t i = 0; i < n; ++i) {
        slots_.push_back(std::make_unique<WorkerSlot>(spec.argv));
        const auto& advertised = slots_.back()->worker().schemas();
        if (std::find(advertised.begin(), advertised.end(), schema_) == advertised.end())
            throw Error(Errc::ConfigError, "worker does not support schema " + schema_);
    }
    busy_.assign(n, false);
}

EvaluationResult SubprocessEvaluator::evaluate(const MorphologyCandidate& m, const RewardCandidate& r,
                                               std::uint64_t seed, std::int64_t training_budget)
{
    static std::atomic<std::uint64_t> counter{0};
    EvaluatorJob job;
    job.pair = {m.id, r.id};
    job.job_id = job.pair.str() + "-" + std::to_string(++counter);
    job.schema = schema_;
    job.morphology = m.values;
    job.reward_source = r.source;
    job.dialect = r.dialect;
    job.training_budget = training_budget;
    job.seed = seed;
    job.timeout_s = timeout_s_;

    std::size_t index = 0;
    {
        std::unique_lock lock(mutex_);
        idle_.wait(lock, [&] { return std::find(busy_.begin(), busy_.end(), false) != busy_.end(); });
        index = static_cast<std::size_t>(std::find(busy_.begin(), busy_.end(), false) - busy_.begin());
        busy_[index] = true;
    }
    auto release = [&] {
        {
            std::lock_guard lock(mutex_);
            busy_[index] = false;
        }
        idle_.notify_one();
    };
    try {
        auto result = slots_[index]->evaluate(job);
        release();
        return result;
    } catch (...) {
        release();
        throw;
    }
}

std::unique_ptr<Evaluator> make_evaluator(const EvaluatorSpec& spec, const MorphologySchema& schema)
{
    switch (spec.kind) {
    case EvaluatorSpec::Kind::builtin:
        if (schema.fingerprint() != crawler::crawler_schema().fingerprint())
            throw Error(Errc::ConfigError, "the built-in evaluator only supports the crawler schema");
        return std::make_unique<BuiltinEvaluator>(spec);
    case EvaluatorSpec::Kind::subprocess:
        return std::make_unique<SubprocessEvaluator>(spec, schema.name);
    }
    throw Error(Errc::ConfigError, "unknown evaluator kind");
}

std::vector<EvaluationResult> evaluate_all(Evaluator& evaluator, std::span<const EvalRequest> requests,
                                           const std::function<void(std::size_t, const EvaluationResult&)>& on_result)
{
    std::vector<EvaluationResult> results(requests.size());
    if (requests.empty())
        return results;

    std::mutex mutex;
    std::condition_variable ready;
    std::deque<std::size_t> finished;
    std::exception_ptr worker_error;
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};

    auto work = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= requests.size() || stop.load())
                return;
            const auto& req = requests[i];
            try {
                auto r = evaluator.evaluate(*req.morphology, *req.reward, req.seed, req.training_budget);
                std::lock_guard lock(mutex);
                results[i] = std::move(r);
                finished.push_back(i);
            } catch (...) {
                std::lock_guard lock(mutex);
                if (!worker_error)
                    worker_error = std::current_exception();
                stop = true;
            }
            ready.notify_one();
        }
    };

    const std::size_t threads = std::min(std::max<std::size_t>(1, evaluator.concurrency()), requests.size());
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t)
        pool.emplace_back(work);

    std::size_t delivered = 0;
    try {
        while (delivered < requests.size()) {
            std::unique_lock lock(mutex);
            ready.wait(lock, [&] { return !finished.empty() || worker_error; });
            if (worker_error)
                break;
            const std::size_t i = finished.front();
            finished.pop_front();
            lock.unlock();
            if (on_result)
                on_result(i, results[i]);
            ++delivered;
        }
    } catch (...) {
        stop = true;
        pool.clear();
        throw;
    }
    pool.clear();
    if (worker_error)
        std::rethrow_exception(worker_error);
    return results;
}

} // namespace codesign::bridge
