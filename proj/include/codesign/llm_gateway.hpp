#pragma once

// Completion providers (scripted mock, HTTP chat) and the parsers that pull
// structured proposals out of free-form responses.

#include "codesign/model.hpp"

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace codesign::llm {

enum class Tag { morph_propose, reward_propose, morph_refine, reward_refine };

std::string_view to_string(Tag tag);
Tag tag_from_string(std::string_view s);

inline constexpr double kProposalTemperature = 1.0;
inline constexpr double kRefinementTemperature = 0.3;

struct LlmRequest {
    std::string system_prompt;
    std::string user_prompt;
    double temperature = kProposalTemperature;
    int max_retries = 2;
    Tag tag = Tag::morph_propose;

    /// Throws ContractViolation for empty prompts or negative retries.
    void validate() const;
};

/// Responses consumed so far, per tag name. Persisted with a run so a
/// resumed scripted provider continues where the interrupted one stopped.
using Cursor = std::map<std::string, std::size_t>;

class Provider {
public:
    virtual ~Provider() = default;

    /// Raw response text. Throws ProviderError or FixtureExhausted.
    virtual std::string complete(const LlmRequest& request) = 0;

    virtual Cursor cursor() const { return {}; }
    virtual void restore(const Cursor&) {}
};

/// Replays canned responses in fixture order, one queue per tag, and keeps
/// every request it receives for inspection.
class ScriptedMockProvider : public Provider {
public:
    /// Fixture format: {"morph_propose": ["...", ...], "reward_propose": [...], ...}.
    static ScriptedMockProvider from_file(const std::string& path);
    static ScriptedMockProvider from_json_text(std::string_view text);

    explicit ScriptedMockProvider(std::map<Tag, std::vector<std::string>> responses);
    ScriptedMockProvider(ScriptedMockProvider&& other) noexcept;

    std::string complete(const LlmRequest& request) override;
    Cursor cursor() const override;
    void restore(const Cursor& cursor) override;

    std::vector<LlmRequest> captured() const;

private:
    mutable std::mutex mutex_;
    std::map<Tag, std::vector<std::string>> responses_;
    std::map<Tag, std::size_t> next_;
    std::vector<LlmRequest> captured_;
};

/// Chat-completion style endpoint. The API key is read from the
/// environment variable named in the spec at call time.
class HttpChatProvider : public Provider {
public:
    explicit HttpChatProvider(ProviderSpec spec);

    std::string complete(const LlmRequest& request) override;

private:
    ProviderSpec spec_;
};

/// Throws ConfigError when a scripted fixture is missing or empty.
std::unique_ptr<Provider> make_provider(const ProviderSpec& spec);

/// Last fenced block of `response` (or the whole text without fences),
/// parsed as `name: number` lines. Lines naming other keys are ignored.
/// Throws ParseError on a non-numeric value or a missing schema parameter.
ParamMap extract_params_block(std::string_view response, const MorphologySchema& schema);

/// Contents of the last fenced code block, or the trimmed response when it
/// has no fences. Throws ParseError when the result is empty.
std::string extract_code_block(std::string_view response);

/// Fenced `name: value` listing in schema order; inverse of extract_params_block.
std::string render_params_block(const ParamMap& values, const MorphologySchema& schema);

/// Text appended to a request after an unusable response.
std::string corrective_instruction(std::string_view problem);

/// Asks for a completion and parses it; a ParseError-class failure triggers
/// up to request.max_retries re-prompts carrying a corrective instruction.
/// Returns nullopt when every attempt failed to parse. Provider failures
/// propagate.
template <typename T>
std::optional<T> complete_parsed(Provider& provider, LlmRequest request,
                                 const std::function<T(const std::string&)>& parse,
                                 std::vector<std::string>* problems = nullptr);

} // namespace codesign::llm

#include "codesign/detail/llm_gateway_impl.hpp"
