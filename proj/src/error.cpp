#include "codesign/error.hpp"

namespace codesign {

std::string_view to_string(Errc code)
{
    switch (code) {
    case Errc::MissingParameter: return "MissingParameter";
    case Errc::NonFiniteValue: return "NonFiniteValue";
    case Errc::NonPositiveVolume: return "NonPositiveVolume";
    case Errc::InvalidSchema: return "InvalidSchema";
    case Errc::ProviderError: return "ProviderError";
    case Errc::FixtureExhausted: return "FixtureExhausted";
    case Errc::ParseError: return "ParseError";
    case Errc::MaskMiss: return "MaskMiss";
    case Errc::ContextOverflow: return "ContextOverflow";
    case Errc::ContractViolation: return "ContractViolation";
    case Errc::TooFewSamples: return "TooFewSamples";
    case Errc::AllParamsDegenerate: return "AllParamsDegenerate";
    case Errc::EmptyDocument: return "EmptyDocument";
    case Errc::SyntaxError: return "SyntaxError";
    case Errc::UnknownFunction: return "UnknownFunction";
    case Errc::ArityError: return "ArityError";
    case Errc::UnboundVariable: return "UnboundVariable";
    case Errc::EvalError: return "EvalError";
    case Errc::SpawnError: return "SpawnError";
    case Errc::HandshakeTimeout: return "HandshakeTimeout";
    case Errc::ProtocolVersionMismatch: return "ProtocolVersionMismatch";
    case Errc::WorkerFailure: return "WorkerFailure";
    case Errc::NoViableCandidates: return "NoViableCandidates";
    case Errc::DirNotEmpty: return "DirNotEmpty";
    case Errc::IoError: return "IoError";
    case Errc::DuplicateKey: return "DuplicateKey";
    case Errc::CorruptRun: return "CorruptRun";
    case Errc::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

Error::Error(Errc code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code)
{
}

SyntaxError::SyntaxError(std::size_t position, const std::string& message)
    : Error(Errc::SyntaxError, message + " at position " + std::to_string(position)),
      position_(position)
{
}

} // namespace codesign
