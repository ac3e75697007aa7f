#include "codesign/crawler_sim.hpp"

#include "codesign/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

namespace codesign::crawler {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Slot order must match state_variables().
enum Slot { kT, kX, kV, kDist, kSpeed, kCtrl, kU1, kU2, kU3, kSlotCount };

const char* const kStructure = R"(<crawler segments="3">
  <segment id="1" shape="capsule" length="{l1}" radius="{r1}" actuator="a1"/>
  <segment id="2" shape="capsule" length="{l2}" radius="{r2}" actuator="a2"/>
  <segment id="3" shape="capsule" length="{l3}" radius="{r3}" actuator="a3"/>
  <actuator name="a1" gear="20" range="-1 1"/>
  <actuator name="a2" gear="20" range="-1 1"/>
  <actuator name="a3" gear="20" range="-1 1"/>
</crawler>)";

const char* const kTask =
    "A three-segment crawler lies on flat ground and moves along a straight line. Each segment "
    "is a solid cylinder of density 1000 kg/m^3 driven by its own actuator. Design the crawler "
    "so that it travels as far forward as possible in 10 seconds while using as little "
    "material (volume) as possible.";

const char* const kEnvironment = R"(class CrawlerEnv:
    dt = 0.01            # seconds per step, 1000 steps per episode
    gear = 20.0          # thrust per unit actuation and metre of segment length
    drag = 0.8           # linear drag, applied as drag * mass * v
    friction = 0.1       # ground friction coefficient
    gravity = 9.81
    v_smooth = 0.01      # friction is smoothed as tanh(v / v_smooth)

    def mass(self):
        return sum(1000.0 * pi * r[i] ** 2 * l[i] for i in range(3))

    def step(self, u):   # u[j] in [-1, 1], one command per actuator
        thrust = self.gear * sum(u[j] * l[j] for j in range(3))
        m = self.mass()
        a = (thrust - self.drag * m * self.v
             - self.friction * m * self.gravity * tanh(self.v / self.v_smooth)) / m
        self.v += a * self.dt
        self.x += self.v * self.dt
        self.t += self.dt

    def observation(self):
        # Variables available to the reward expression:
        #   t      elapsed time (s)
        #   x      position (m)
        #   v      forward velocity (m/s)
        #   dist   displacement from the start position (m)
        #   speed  absolute velocity |v| (m/s)
        #   ctrl   actuation effort, sum of u[j]^2
        #   u1, u2, u3  the current actuator commands
        return dict(t=self.t, x=self.x, v=self.v, dist=self.x - self.x0, speed=abs(self.v),
                    ctrl=sum(uj * uj for uj in u), u1=u[0], u2=u[1], u3=u[2])
)";

const char* const kRewardFormat =
    "A single arithmetic expression inside one fenced block, for example\n"
    "```\nv - 0.5*ctrl\n```\n"
    "Allowed: numbers, + - * / and parentheses, the variables t, x, v, dist, speed, ctrl, u1, u2, "
    "u3, and the functions abs(a), min(a, b), max(a, b), exp(a), tanh(a), sqrt(a), "
    "clamp(a, lo, hi). The expression is evaluated after every simulation step.";

MorphologySchema make_schema()
{
    MorphologySchema s;
    s.name = "crawler";
    for (std::size_t i = 1; i <= kSegments; ++i)
        s.params.push_back({"l" + std::to_string(i), 0.05, 1.0, "m"});
    for (std::size_t i = 1; i <= kSegments; ++i)
        s.params.push_back({"r" + std::to_string(i), 0.01, 0.2, "m"});
    s.structure_template = kStructure;
    s.validate();
    return s;
}

std::array<double, ControllerParams::kDims> make_bounds(bool upper)
{
    std::array<double, ControllerParams::kDims> b{};
    for (std::size_t j = 0; j < kSegments; ++j) {
        b[j] = upper ? 1.0 : 0.0;
        b[kSegments + j] = upper ? 3.0 : 0.1;
        b[2 * kSegments + j] = upper ? kTwoPi : 0.0;
    }
    return b;
}

Rollout rollout(const CrawlerMorphology& m, const ControllerParams& ctrl,
                const reward::BoundExpression& reward, const SimConfig& cfg,
                std::vector<StepRecord>* trace)
{
    const double total_mass = mass(m, cfg);
    const int steps = cfg.steps();
    const double x0 = 0.0;
    double x = x0;
    double v = 0.0;
    double reward_sum = 0.0;
    std::array<double, kSlotCount> state{};
    if (trace)
        trace->reserve(trace->size() + static_cast<std::size_t>(steps));

    for (int k = 0; k < steps; ++k) {
        const double t = k * cfg.dt;
        std::array<double, kSegments> u{};
        double thrust = 0.0;
        double effort = 0.0;
        for (std::size_t j = 0; j < kSegments; ++j) {
            const double raw = ctrl.amplitude[j] * std::sin(kTwoPi * ctrl.frequency[j] * t + ctrl.phase[j]);
            u[j] = std::clamp(raw, -1.0, 1.0);
            thrust += u[j] * m.lengths[j];
            effort += u[j] * u[j];
        }
        thrust *= cfg.gear;
        v = step_velocity(v, thrust, total_mass, cfg);
        x += v * cfg.dt;
        if (!std::isfinite(v) || !std::isfinite(x))
            throw Error(Errc::EvalError, "simulation state became non-finite at step " + std::to_string(k));
        if (trace)
            trace->push_back({t, x, v, u});

        state[kT] = (k + 1) * cfg.dt;
        state[kX] = x;
        state[kV] = v;
        state[kDist] = x - x0;
        state[kSpeed] = std::fabs(v);
        state[kCtrl] = effort;
        state[kU1] = u[0];
        state[kU2] = u[1];
        state[kU3] = u[2];
        reward_sum += reward(state);
    }
    const double ret = reward_sum * cfg.dt;
    if (!std::isfinite(ret))
        throw Error(Errc::EvalError, "episode return is not finite");
    return {ret, x - x0};
}

} // namespace

CrawlerMorphology CrawlerMorphology::from_params(const ParamMap& values)
{
    CrawlerMorphology m;
    auto get = [&](const std::string& name) {
        auto it = values.find(name);
        if (it == values.end())
            throw Error(Errc::MissingParameter, name);
        return it->second;
    };
    for (std::size_t i = 0; i < kSegments; ++i) {
        m.lengths[i] = get("l" + std::to_string(i + 1));
        m.radii[i] = get("r" + std::to_string(i + 1));
    }
    return m;
}

ParamMap CrawlerMorphology::to_params() const
{
    ParamMap out;
    for (std::size_t i = 0; i < kSegments; ++i) {
        out["l" + std::to_string(i + 1)] = lengths[i];
        out["r" + std::to_string(i + 1)] = radii[i];
    }
    return out;
}

const MorphologySchema& crawler_schema()
{
    static const MorphologySchema schema = make_schema();
    return schema;
}

const std::vector<std::string>& state_variables()
{
    static const std::vector<std::string> names = {"t",    "x",  "v",  "dist", "speed",
                                                   "ctrl", "u1", "u2", "u3"};
    return names;
}

prompts::TaskContext crawler_task_context()
{
    return prompts::make_task_context(crawler_schema(), kTask, kEnvironment, kRewardFormat);
}

ControllerParams ControllerParams::from_vector(std::span<const double> x)
{
    if (x.size() != kDims)
        throw Error(Errc::ContractViolation, "controller vector must have 9 entries");
    ControllerParams c;
    for (std::size_t j = 0; j < kSegments; ++j) {
        c.amplitude[j] = x[j];
        c.frequency[j] = x[kSegments + j];
        c.phase[j] = x[2 * kSegments + j];
    }
    return c;
}

std::array<double, ControllerParams::kDims> ControllerParams::to_vector() const
{
    std::array<double, kDims> x{};
    for (std::size_t j = 0; j < kSegments; ++j) {
        x[j] = amplitude[j];
        x[kSegments + j] = frequency[j];
        x[2 * kSegments + j] = phase[j];
    }
    return x;
}

const std::array<double, ControllerParams::kDims>& ControllerParams::lower_bounds()
{
    static const auto b = make_bounds(false);
    return b;
}

const std::array<double, ControllerParams::kDims>& ControllerParams::upper_bounds()
{
    static const auto b = make_bounds(true);
    return b;
}

int SimConfig::steps() const { return static_cast<int>(std::lround(horizon / dt)); }

void CemConfig::validate() const
{
    if (population < 2 || elites < 1 || elites >= population)
        throw Error(Errc::ConfigError, "CEM needs 1 <= elites < population");
    if (iterations < 1)
        throw Error(Errc::ConfigError, "CEM needs at least one iteration");
    if (!(init_std_fraction > 0.0) || !(std_floor_fraction > 0.0))
        throw Error(Errc::ConfigError, "CEM standard deviations must be positive");
}

double volume(const CrawlerMorphology& m)
{
    double v = 0.0;
    for (std::size_t i = 0; i < kSegments; ++i)
        v += std::numbers::pi * m.radii[i] * m.radii[i] * m.lengths[i];
    return v;
}

double mass(const CrawlerMorphology& m, const SimConfig& cfg) { return cfg.density * volume(m); }

double step_velocity(double v, double thrust, double mass, const SimConfig& cfg)
{
    const double a = (thrust - cfg.drag * mass * v -
                      cfg.friction * mass * cfg.gravity * std::tanh(v / cfg.velocity_smoothing)) /
                     mass;
    return v + a * cfg.dt;
}

Rollout simulate(const CrawlerMorphology& m, const ControllerParams& ctrl, const reward::Ast& reward,
                 const SimConfig& cfg, std::vector<StepRecord>* trace)
{
    const reward::BoundExpression bound(reward, state_variables());
    return rollout(m, ctrl, bound, cfg, trace);
}

CemResult train_cem(const CrawlerMorphology& m, const reward::Ast& reward, const CemConfig& cem,
                    const SimConfig& sim)
{
    cem.validate();
    constexpr std::size_t D = ControllerParams::kDims;
    const auto& lo = ControllerParams::lower_bounds();
    const auto& hi = ControllerParams::upper_bounds();
    const reward::BoundExpression bound(reward, state_variables());

    std::array<double, D> mean{}, stdev{}, floor{};
    for (std::size_t d = 0; d < D; ++d) {
        const double range = hi[d] - lo[d];
        mean[d] = lo[d] + 0.5 * range;
        stdev[d] = cem.init_std_fraction * range;
        floor[d] = cem.std_floor_fraction * range;
    }

    std::mt19937_64 rng(cem.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto pop = static_cast<std::size_t>(cem.population);
    const auto elites = static_cast<std::size_t>(cem.elites);
    std::vector<std::array<double, D>> samples(pop);
    std::vector<double> scores(pop);
    std::vector<std::size_t> order(pop);

    CemResult result;
    result.best_return = kNegInf;
    result.best = ControllerParams::from_vector(mean);

    for (int it = 0; it < cem.iterations; ++it) {
        double finite_sum = 0.0;
        std::size_t finite_count = 0;
        for (std::size_t i = 0; i < pop; ++i) {
            for (std::size_t d = 0; d < D; ++d)
                samples[i][d] = std::clamp(mean[d] + stdev[d] * normal(rng), lo[d], hi[d]);
            try {
                scores[i] = rollout(m, ControllerParams::from_vector(samples[i]), bound, sim, nullptr).ret;
                finite_sum += scores[i];
                ++finite_count;
            } catch (const Error& e) {
                if (e.code() != Errc::EvalError)
                    throw;
                scores[i] = kNegInf;
            }
            if (scores[i] > result.best_return) {
                result.best_return = scores[i];
                result.best = ControllerParams::from_vector(samples[i]);
            }
        }
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
        result.history.push_back(
            {finite_count ? finite_sum / static_cast<double>(finite_count) : kNegInf,
             scores[order.front()]});

        for (std::size_t d = 0; d < D; ++d) {
            double mu = 0.0;
            for (std::size_t e = 0; e < elites; ++e)
                mu += samples[order[e]][d];
            mu /= static_cast<double>(elites);
            double var = 0.0;
            for (std::size_t e = 0; e < elites; ++e) {
                const double diff = samples[order[e]][d] - mu;
                var += diff * diff;
            }
            mean[d] = mu;
            stdev[d] = std::max(std::sqrt(var / static_cast<double>(elites)), floor[d]);
        }
    }
    return result;
}

EvaluationResult evaluate_builtin(const MorphologyCandidate& m, const RewardCandidate& reward,
                                  const CemConfig& cem, const SimConfig& sim)
{
    const PairId pair{m.id, reward.id};
    const auto started = std::chrono::steady_clock::now();
    auto finish = [&](EvaluationResult r) {
        r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        return r;
    };
    try {
        if (reward.dialect != RewardDialect::builtin_dsl)
            return finish(EvaluationResult::failed(pair, EvalStatus::reward_parse_error,
                                                   "built-in evaluator only accepts the expression dialect",
                                                   cem.seed));
        reward::Ast ast = [&] {
            try {
                auto a = reward::parse(reward.source);
                const auto& vars = state_variables();
                reward::check_variables(a, {vars.begin(), vars.end()});
                return a;
            } catch (const Error& e) {
                throw Error(Errc::ParseError, e.what());
            }
        }();
        const auto morph = CrawlerMorphology::from_params(m.values);
        const auto trained = train_cem(morph, ast, cem, sim);
        if (!std::isfinite(trained.best_return))
            return finish(EvaluationResult::failed(pair, EvalStatus::nonfinite,
                                                   "every controller produced a non-finite rollout", cem.seed));
        const auto measured = simulate(morph, trained.best, ast, sim);
        return finish(EvaluationResult::evaluated(pair, measured.fitness, volume(morph), measured.ret, cem.seed));
    } catch (const Error& e) {
        switch (e.code()) {
        case Errc::ParseError:
            return finish(EvaluationResult::failed(pair, EvalStatus::reward_parse_error, e.what(), cem.seed));
        case Errc::EvalError:
        case Errc::NonFiniteValue:
            return finish(EvaluationResult::failed(pair, EvalStatus::nonfinite, e.what(), cem.seed));
        default:
            return finish(EvaluationResult::failed(pair, EvalStatus::runtime_error, e.what(), cem.seed));
        }
    } catch (const std::exception& e) {
        return finish(EvaluationResult::failed(pair, EvalStatus::runtime_error, e.what(), cem.seed));
    }
}

} // namespace codesign::crawler
