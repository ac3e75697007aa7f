#pragma once

// Randomized scripted-provider fixtures for the crawler task.

#include "codesign/crawler_sim.hpp"
#include "codesign/llm_gateway.hpp"
#include "codesign/serialization.hpp"

#include <array>
#include <cstdint>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace testsupport {

using codesign::llm::Tag;
using Fixture = std::map<Tag, std::vector<std::string>>;

struct FixtureSpec {
    int morphologies = 5;
    int rewards = 3;
    int refinements = 20; // per refine tag
    std::uint64_t seed = 1;
    double garbage_rate = 0.0; // share of unparseable responses mixed in
};

inline std::string morphology_response(std::mt19937_64& rng)
{
    std::ostringstream out;
    out << "Proposed design:\n```\n" << std::setprecision(4);
    for (const auto& p : codesign::crawler::crawler_schema().params) {
        std::uniform_real_distribution<double> u(p.lower_bound, p.upper_bound);
        out << p.name << ": " << u(rng) << "\n";
    }
    out << "```\n";
    return out.str();
}

inline std::string reward_response(std::mt19937_64& rng)
{
    static const std::array<const char*, 12> terms = {
        "v", "dist", "speed", "0.5*v", "tanh(v)", "min(v, 1)", "x", "2*v", "-0.1*ctrl", "-0.05*ctrl",
        "-0.01*abs(u1)", "-0.2*(u2*u2)"};
    std::uniform_int_distribution<std::size_t> pick(0, terms.size() - 1);
    std::uniform_int_distribution<int> count(1, 3);
    std::string expr = "v";
    const int n = count(rng);
    for (int i = 0; i < n; ++i) {
        std::string t = terms[pick(rng)];
        expr += t.front() == '-' ? " - " + t.substr(1) : " + " + t;
    }
    return "Reward:\n```\n" + expr + "\n```\n";
}

inline Fixture random_fixture(const FixtureSpec& spec)
{
    std::mt19937_64 rng(spec.seed);
    std::bernoulli_distribution garbage(spec.garbage_rate);
    Fixture f;
    auto fill = [&](Tag tag, int n, bool morph) {
        for (int i = 0; i < n; ++i) {
            if (garbage(rng))
                f[tag].push_back("I would rather not answer in the requested format.");
            f[tag].push_back(morph ? morphology_response(rng) : reward_response(rng));
        }
    };
    fill(Tag::morph_propose, spec.morphologies, true);
    fill(Tag::reward_propose, spec.rewards, false);
    fill(Tag::morph_refine, spec.refinements, true);
    fill(Tag::reward_refine, spec.refinements, false);
    return f;
}

inline std::string fixture_json(const Fixture& f)
{
    codesign::Json j = codesign::Json::object();
    for (const auto& [tag, responses] : f)
        j[std::string(codesign::llm::to_string(tag))] = responses;
    return j.dump(2);
}

} // namespace testsupport
