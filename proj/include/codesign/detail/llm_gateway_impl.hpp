#pragma once

#include "codesign/error.hpp"

namespace codesign::llm {

namespace detail {

// Failures of the response itself, as opposed to the provider.
inline bool is_response_error(Errc code)
{
    switch (code) {
    case Errc::ParseError:
    case Errc::MissingParameter:
    case Errc::NonFiniteValue:
    case Errc::SyntaxError:
    case Errc::UnknownFunction:
    case Errc::ArityError:
    case Errc::UnboundVariable:
        return true;
    default:
        return false;
    }
}

} // namespace detail

template <typename T>
std::optional<T> complete_parsed(Provider& provider, LlmRequest request,
                                 const std::function<T(const std::string&)>& parse,
                                 std::vector<std::string>* problems)
{
    request.validate();
    const std::string base_prompt = request.user_prompt;
    for (int attempt = 0; attempt <= request.max_retries; ++attempt) {
        const std::string response = provider.complete(request);
        try {
            return parse(response);
        } catch (const Error& e) {
            if (!detail::is_response_error(e.code()))
                throw;
            if (problems)
                problems->push_back(e.what());
            request.user_prompt = base_prompt + corrective_instruction(e.what());
        }
    }
    return std::nullopt;
}

} // namespace codesign::llm
