#pragma once

// Built-in evaluator: a three-segment crawler on a line, open-loop
// sinusoidal actuation, and a cross-entropy-method controller trainer.

#include "codesign/model.hpp"
#include "codesign/prompt_forge.hpp"
#include "codesign/reward_lang.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace codesign::crawler {

inline constexpr std::size_t kSegments = 3;

struct CrawlerMorphology {
    std::array<double, kSegments> lengths{};
    std::array<double, kSegments> radii{};

    /// Reads l1..l3 and r1..r3; throws MissingParameter.
    static CrawlerMorphology from_params(const ParamMap& values);
    ParamMap to_params() const;
};

/// l1..l3 in [0.05, 1.0] m and r1..r3 in [0.01, 0.2] m.
const MorphologySchema& crawler_schema();

/// Variables a reward expression may read: t, x, v, dist, speed, ctrl,
/// u1, u2, u3. `ctrl` is the squared actuation summed over actuators.
const std::vector<std::string>& state_variables();

/// Task description, environment source and output formats for prompts.
prompts::TaskContext crawler_task_context();

struct ControllerParams {
    static constexpr std::size_t kDims = 3 * kSegments;
    std::array<double, kSegments> amplitude{};
    std::array<double, kSegments> frequency{};
    std::array<double, kSegments> phase{};

    static ControllerParams from_vector(std::span<const double> x);
    std::array<double, kDims> to_vector() const;
    static const std::array<double, kDims>& lower_bounds();
    static const std::array<double, kDims>& upper_bounds();
    bool operator==(const ControllerParams&) const = default;
};

struct SimConfig {
    double dt = 0.01;
    double horizon = 10.0;
    double density = 1000.0;
    double gear = 20.0;
    double drag = 0.8;
    double friction = 0.1;
    double gravity = 9.81;
    double velocity_smoothing = 0.01;

    int steps() const;
};

struct CemConfig {
    int population = 32;
    int elites = 8;
    int iterations = 20;
    double init_std_fraction = 0.25;
    double std_floor_fraction = 0.01;
    std::uint64_t seed = 0;

    void validate() const;
};

struct StepRecord {
    double t = 0.0;
    double x = 0.0;
    double v = 0.0;
    std::array<double, kSegments> u{};
};

struct Rollout {
    double ret = 0.0;
    double fitness = 0.0;
};

double volume(const CrawlerMorphology& m);
double mass(const CrawlerMorphology& m, const SimConfig& cfg);

/// One semi-implicit velocity update.
double step_velocity(double v, double thrust, double mass, const SimConfig& cfg);

/// Rolls the controller out for the configured horizon. The return is the
/// per-step rewards summed, then scaled by dt. Throws EvalError when the
/// reward fails or the state stops being finite.
Rollout simulate(const CrawlerMorphology& m, const ControllerParams& ctrl, const reward::Ast& reward,
                 const SimConfig& cfg = {}, std::vector<StepRecord>* trace = nullptr);

struct CemIteration {
    double mean_return = 0.0; // over finite-scored individuals; -inf if none
    double best_return = 0.0;
};

struct CemResult {
    ControllerParams best;
    double best_return = 0.0;
    std::vector<CemIteration> history;
};

/// Throws only for bad configuration or a reward reading unknown
/// variables; individuals whose rollout fails score -inf.
CemResult train_cem(const CrawlerMorphology& m, const reward::Ast& reward, const CemConfig& cem,
                    const SimConfig& sim = {});

/// Parses, trains, re-simulates the best controller and measures it.
/// Never throws; failures are encoded in the status.
EvaluationResult evaluate_builtin(const MorphologyCandidate& m, const RewardCandidate& reward,
                                  const CemConfig& cem, const SimConfig& sim = {});

} // namespace codesign::crawler
