#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace nusa {

// Names double as wire-protocol error codes and must stay stable.
enum class ErrorCode {
    InvalidInput,
    DuplicateLayer,
    LayerNotFound,
    AlreadyExists,
    InvalidGrant,
    NotFound,
    NotAuthorized,
    InvalidOperation,
    IdentityLeakRejected,
    InvalidField,
    NoData,
    AuthFailed,
    SessionExpired,
    InvalidStage,
    InvalidPayload,
    DuplicateTicket,
    RequiresMasterTerminal,
    ProtocolError,
    WrongPassphrase,
    RandomnessFailure,
    ValidationError,
    ParseError,
    IoError,
};

std::string_view to_string(ErrorCode code) noexcept;
std::optional<ErrorCode> error_code_from_string(std::string_view name) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message);

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message = {});

} // namespace nusa
