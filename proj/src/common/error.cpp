#include "nusa/error.hpp"

#include <array>
#include <utility>

namespace nusa {
namespace {

constexpr std::array<std::pair<ErrorCode, std::string_view>, 23> kNames{{
    {ErrorCode::InvalidInput, "InvalidInput"},
    {ErrorCode::DuplicateLayer, "DuplicateLayer"},
    {ErrorCode::LayerNotFound, "LayerNotFound"},
    {ErrorCode::AlreadyExists, "AlreadyExists"},
    {ErrorCode::InvalidGrant, "InvalidGrant"},
    {ErrorCode::NotFound, "NotFound"},
    {ErrorCode::NotAuthorized, "NotAuthorized"},
    {ErrorCode::InvalidOperation, "InvalidOperation"},
    {ErrorCode::IdentityLeakRejected, "IdentityLeakRejected"},
    {ErrorCode::InvalidField, "InvalidField"},
    {ErrorCode::NoData, "NoData"},
    {ErrorCode::AuthFailed, "AuthFailed"},
    {ErrorCode::SessionExpired, "SessionExpired"},
    {ErrorCode::InvalidStage, "InvalidStage"},
    {ErrorCode::InvalidPayload, "InvalidPayload"},
    {ErrorCode::DuplicateTicket, "DuplicateTicket"},
    {ErrorCode::RequiresMasterTerminal, "RequiresMasterTerminal"},
    {ErrorCode::ProtocolError, "ProtocolError"},
    {ErrorCode::WrongPassphrase, "WrongPassphrase"},
    {ErrorCode::RandomnessFailure, "RandomnessFailure"},
    {ErrorCode::ValidationError, "ValidationError"},
    {ErrorCode::ParseError, "ParseError"},
    {ErrorCode::IoError, "IoError"},
}};

std::string compose(ErrorCode code, const std::string& message) {
    std::string out{to_string(code)};
    if (!message.empty()) {
        out += ": ";
        out += message;
    }
    return out;
}

} // namespace

std::string_view to_string(ErrorCode code) noexcept {
    for (const auto& [c, name] : kNames) {
        if (c == code) return name;
    }
    return "Unknown";
}

std::optional<ErrorCode> error_code_from_string(std::string_view name) noexcept {
    for (const auto& [c, n] : kNames) {
        if (n == name) return c;
    }
    return std::nullopt;
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(compose(code, message)), code_(code) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

} // namespace nusa
