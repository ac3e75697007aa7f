#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include "codesign/llm_gateway.hpp"

#include "codesign/error.hpp"
#include "codesign/serialization.hpp"
#include "codesign/text.hpp"

#include <cctype>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

namespace codesign::llm {

namespace {

constexpr Tag kAllTags[] = {Tag::morph_propose, Tag::reward_propose, Tag::morph_refine,
                            Tag::reward_refine};

bool is_language_tag(std::string_view line)
{
    for (char c : line)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '+' && c != '-')
            return false;
    return true;
}

// Body of the last complete ``` pair, or nullopt when there is none.
std::optional<std::string_view> last_fenced_block(std::string_view text)
{
    std::vector<std::size_t> fences;
    for (std::size_t pos = text.find("```"); pos != std::string_view::npos;
         pos = text.find("```", pos + 3))
        fences.push_back(pos);
    if (fences.size() < 2)
        return std::nullopt;
    const std::size_t pairs = fences.size() / 2;
    const std::size_t open = fences[2 * (pairs - 1)] + 3;
    const std::size_t close = fences[2 * (pairs - 1) + 1];
    std::string_view body = text.substr(open, close - open);
    if (auto nl = body.find('\n'); nl != std::string_view::npos && is_language_tag(trim(body.substr(0, nl))))
        body.remove_prefix(nl + 1);
    return body;
}

struct Endpoint {
    std::string origin; // scheme://host[:port]
    std::string path;
};

Endpoint split_endpoint(const std::string& url)
{
    const auto scheme = url.find("://");
    if (scheme == std::string::npos)
        throw Error(Errc::ConfigError, "endpoint must be an absolute URL: " + url);
    const auto slash = url.find('/', scheme + 3);
    if (slash == std::string::npos)
        return {url, "/"};
    return {url.substr(0, slash), url.substr(slash)};
}

} // namespace

std::string_view to_string(Tag tag)
{
    switch (tag) {
    case Tag::morph_propose: return "morph_propose";
    case Tag::reward_propose: return "reward_propose";
    case Tag::morph_refine: return "morph_refine";
    case Tag::reward_refine: return "reward_refine";
    }
    return "?";
}

Tag tag_from_string(std::string_view s)
{
    for (Tag t : kAllTags)
        if (to_string(t) == s)
            return t;
    throw Error(Errc::ConfigError, "unknown request tag: " + std::string(s));
}

void LlmRequest::validate() const
{
    if (system_prompt.empty() || user_prompt.empty())
        throw Error(Errc::ContractViolation, "request prompts must be non-empty");
    if (max_retries < 0)
        throw Error(Errc::ContractViolation, "max_retries must be >= 0");
    if (!(temperature >= 0.0))
        throw Error(Errc::ContractViolation, "temperature must be >= 0");
}

ScriptedMockProvider ScriptedMockProvider::from_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(Errc::ConfigError, "cannot read fixture " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return from_json_text(buf.str());
}

ScriptedMockProvider ScriptedMockProvider::from_json_text(std::string_view text)
{
    Json doc;
    try {
        doc = Json::parse(text);
    } catch (const Json::exception& e) {
        throw Error(Errc::ConfigError, std::string("fixture is not valid JSON: ") + e.what());
    }
    if (!doc.is_object())
        throw Error(Errc::ConfigError, "fixture must be a JSON object");
    std::map<Tag, std::vector<std::string>> responses;
    for (const auto& [key, value] : doc.items()) {
        const Tag tag = tag_from_string(key);
        if (!value.is_array())
            throw Error(Errc::ConfigError, "fixture entry " + key + " must be an array");
        for (const auto& r : value) {
            if (!r.is_string())
                throw Error(Errc::ConfigError, "fixture responses must be strings");
            responses[tag].push_back(r.get<std::string>());
        }
    }
    return ScriptedMockProvider(std::move(responses));
}

ScriptedMockProvider::ScriptedMockProvider(std::map<Tag, std::vector<std::string>> responses)
    : responses_(std::move(responses))
{
}

ScriptedMockProvider::ScriptedMockProvider(ScriptedMockProvider&& other) noexcept
{
    std::lock_guard lock(other.mutex_);
    responses_ = std::move(other.responses_);
    next_ = std::move(other.next_);
    captured_ = std::move(other.captured_);
}

std::string ScriptedMockProvider::complete(const LlmRequest& request)
{
    request.validate();
    std::lock_guard lock(mutex_);
    captured_.push_back(request);
    auto& queue = responses_[request.tag];
    auto& index = next_[request.tag];
    if (index >= queue.size())
        throw Error(Errc::FixtureExhausted,
                    "no scripted response left for " + std::string(to_string(request.tag)));
    return queue[index++];
}

Cursor ScriptedMockProvider::cursor() const
{
    std::lock_guard lock(mutex_);
    Cursor out;
    for (const auto& [tag, n] : next_)
        if (n > 0)
            out[std::string(to_string(tag))] = n;
    return out;
}

void ScriptedMockProvider::restore(const Cursor& cursor)
{
    std::lock_guard lock(mutex_);
    next_.clear();
    for (const auto& [name, n] : cursor)
        next_[tag_from_string(name)] = n;
}

std::vector<LlmRequest> ScriptedMockProvider::captured() const
{
    std::lock_guard lock(mutex_);
    return captured_;
}

HttpChatProvider::HttpChatProvider(ProviderSpec spec) : spec_(std::move(spec))
{
    if (spec_.endpoint.empty())
        throw Error(Errc::ConfigError, "http_chat provider needs an endpoint");
    split_endpoint(spec_.endpoint);
}

std::string HttpChatProvider::complete(const LlmRequest& request)
{
    request.validate();
    const char* key = std::getenv(spec_.api_key_env.c_str());
    if (key == nullptr || *key == '\0')
        throw Error(Errc::ProviderError, "auth: environment variable " + spec_.api_key_env + " is not set");

    const auto [origin, path] = split_endpoint(spec_.endpoint);
    Json body = {{"model", spec_.model},
                 {"temperature", request.temperature},
                 {"messages",
                  Json::array({{{"role", "system"}, {"content", request.system_prompt}},
                               {{"role", "user"}, {"content", request.user_prompt}}})}};
    const std::string payload = body.dump();

    std::string last_problem;
    for (int attempt = 0; attempt <= request.max_retries; ++attempt) {
        if (attempt > 0)
            std::this_thread::sleep_for(std::chrono::milliseconds(200 * attempt));
        httplib::Client client(origin);
        client.set_connection_timeout(10);
        client.set_read_timeout(300);
        client.set_bearer_token_auth(key);
        auto res = client.Post(path, payload, "application/json");
        if (!res) {
            last_problem = "transport: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 401 || res->status == 403)
            throw Error(Errc::ProviderError, "auth: endpoint rejected credentials (HTTP " +
                                                 std::to_string(res->status) + ")");
        if (res->status == 429 || res->status >= 500) {
            last_problem = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200)
            throw Error(Errc::ProviderError, "HTTP " + std::to_string(res->status) + ": " + res->body);
        try {
            const Json doc = Json::parse(res->body);
            return doc.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const Json::exception& e) {
            throw Error(Errc::ProviderError, std::string("malformed response: ") + e.what());
        }
    }
    throw Error(Errc::ProviderError, "gave up after " + std::to_string(request.max_retries + 1) +
                                         " attempts: " + last_problem);
}

std::unique_ptr<Provider> make_provider(const ProviderSpec& spec)
{
    switch (spec.kind) {
    case ProviderSpec::Kind::scripted_mock:
        return std::make_unique<ScriptedMockProvider>(ScriptedMockProvider::from_file(spec.fixture_path));
    case ProviderSpec::Kind::http_chat:
        return std::make_unique<HttpChatProvider>(spec);
    }
    throw Error(Errc::ConfigError, "unknown provider kind");
}

ParamMap extract_params_block(std::string_view response, const MorphologySchema& schema)
{
    const std::string_view body = last_fenced_block(response).value_or(response);
    ParamMap out;
    for (auto line : split_lines(body)) {
        line = trim(line);
        if (line.starts_with("- ") || line.starts_with("* "))
            line = trim(line.substr(2));
        const auto colon = line.find(':');
        if (colon == std::string_view::npos)
            continue;
        const std::string name(trim(line.substr(0, colon)));
        if (schema.find(name) == nullptr)
            continue;
        double value = 0.0;
        const auto text = trim(line.substr(colon + 1));
        if (!parse_real(text, value))
            throw Error(Errc::ParseError, "value for " + name + " is not a number: " + std::string(text));
        out[name] = value;
    }
    for (const auto& p : schema.params)
        if (!out.contains(p.name))
            throw Error(Errc::ParseError, "response has no value for " + p.name);
    return out;
}

std::string extract_code_block(std::string_view response)
{
    const std::string_view body = last_fenced_block(response).value_or(response);
    const auto code = trim(body);
    if (code.empty())
        throw Error(Errc::ParseError, "response contains no code");
    return std::string(code);
}

std::string render_params_block(const ParamMap& values, const MorphologySchema& schema)
{
    std::string out = "```\n";
    for (const auto& p : schema.params) {
        auto it = values.find(p.name);
        if (it == values.end())
            throw Error(Errc::MissingParameter, p.name);
        out += p.name + ": " + format_real(it->second) + "\n";
    }
    out += "```";
    return out;
}

std::string corrective_instruction(std::string_view problem)
{
    return "\n\nYour previous response could not be used (" + std::string(problem) +
           "). Reply again and follow the output format exactly.";
}

} // namespace codesign::llm
