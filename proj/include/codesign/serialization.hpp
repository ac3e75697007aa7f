#pragma once

// Text-object (JSON) encoding of the domain types. Field names are stable;
// non-finite reals are written as null.

#include "codesign/model.hpp"
#include "codesign/text.hpp"

#include "json.hpp"

#include <string>

namespace codesign {

using Json = nlohmann::json;

void to_json(Json& j, const ParamSpec& p);
void from_json(const Json& j, ParamSpec& p);
void to_json(Json& j, const MorphologySchema& s);
void from_json(const Json& j, MorphologySchema& s);
void to_json(Json& j, const MorphologyCandidate& m);
void from_json(const Json& j, MorphologyCandidate& m);
void to_json(Json& j, const RewardCandidate& r);
void from_json(const Json& j, RewardCandidate& r);
void to_json(Json& j, const PairId& p);
void from_json(const Json& j, PairId& p);
void to_json(Json& j, const EvaluationResult& r);
void from_json(const Json& j, EvaluationResult& r);
void to_json(Json& j, const ProviderSpec& p);
void from_json(const Json& j, ProviderSpec& p);
void to_json(Json& j, const EvaluatorSpec& e);
void from_json(const Json& j, EvaluatorSpec& e);
void to_json(Json& j, const RunConfig& c);
void from_json(const Json& j, RunConfig& c);
void to_json(Json& j, const FineStep& s);
void from_json(const Json& j, FineStep& s);

/// Canonical, byte-stable encoding of a RunState. Volatile fields
/// (wall-clock timings) are left out so equal runs serialize equally.
std::string serialize_state(const RunState& state);

} // namespace codesign
