#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <string>

#include <json.hpp>

#include "nusa/als/dispatcher.hpp"
#include "nusa/als/socket_server.hpp"

namespace nusa::terminal {

/// Carries one JSON request to the ALS and returns its JSON response. Both
/// implementations go through the textual wire encoding.
class Transport {
public:
    virtual ~Transport() = default;
    virtual nlohmann::json call(const nlohmann::json& request) = 0;
};

/// Same process, no socket: requests are serialized, handed to a dispatcher
/// connection and the response parsed back.
class InProcessTransport final : public Transport {
public:
    explicit InProcessTransport(als::Dispatcher& dispatcher);
    nlohmann::json call(const nlohmann::json& request) override;

private:
    std::mutex mutex_;
    als::Dispatcher::Connection connection_;
};

class SocketTransport final : public Transport {
public:
    explicit SocketTransport(const std::filesystem::path& socket_path);
    nlohmann::json call(const nlohmann::json& request) override;

private:
    std::mutex mutex_;
    als::LineChannel channel_;
};

/// Typed request helper: returns the payload or throws nusa::Error carrying the
/// server's error code.
class AlsClient {
public:
    explicit AlsClient(std::unique_ptr<Transport> transport);

    nlohmann::json request(const std::string& op, const nlohmann::json& args = nlohmann::json::object());

    void set_token(std::string token) { token_ = std::move(token); }
    const std::string& token() const noexcept { return token_; }

private:
    std::unique_ptr<Transport> transport_;
    std::string token_;
};

} // namespace nusa::terminal
