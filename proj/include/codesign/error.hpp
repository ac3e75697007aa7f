#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace codesign {

enum class Errc {
    MissingParameter,
    NonFiniteValue,
    NonPositiveVolume,
    InvalidSchema,
    ProviderError,
    FixtureExhausted,
    ParseError,
    MaskMiss,
    ContextOverflow,
    ContractViolation,
    TooFewSamples,
    AllParamsDegenerate,
    EmptyDocument,
    SyntaxError,
    UnknownFunction,
    ArityError,
    UnboundVariable,
    EvalError,
    SpawnError,
    HandshakeTimeout,
    ProtocolVersionMismatch,
    WorkerFailure,
    NoViableCandidates,
    DirNotEmpty,
    IoError,
    DuplicateKey,
    CorruptRun,
    ConfigError,
};

std::string_view to_string(Errc code);

/// Every domain failure in the engine surfaces as this exception; `code()`
/// identifies the failure class named in the interface contracts.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message);

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

/// Reward-language syntax errors carry the byte offset of the offending token.
class SyntaxError : public Error {
public:
    SyntaxError(std::size_t position, const std::string& message);

    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

} // namespace codesign
