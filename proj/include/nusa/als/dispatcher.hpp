#pragma once

#include <functional>
#include <map>
#include <string>
#include <string_view>

#include <json.hpp>

#include "nusa/als/service.hpp"

namespace nusa::als {

inline constexpr std::string_view kProtocolVersion = "nusa/1";

/// Newline-delimited JSON front end for AlsService.
///
/// Request:  {"token": "...", "op": "...", "args": {...}}
/// Response: {"status": "ok", "payload": ...}
///         | {"status": "error", "error": "<ErrorCode name>", "message": "..."}
///
/// Each connection starts with {"op": "hello", "version": "nusa/1"}.
class Dispatcher {
public:
    explicit Dispatcher(AlsService& service);

    class Connection {
    public:
        explicit Connection(Dispatcher& dispatcher) : dispatcher_(&dispatcher) {}

        std::string handle_line(std::string_view line);
        nlohmann::json handle(const nlohmann::json& request);
        bool handshaken() const noexcept { return handshaken_; }

    private:
        Dispatcher* dispatcher_;
        bool handshaken_ = false;
    };

    Connection connect() { return Connection(*this); }

    /// Handles one post-handshake request; never throws.
    nlohmann::json dispatch(const nlohmann::json& request);

    static nlohmann::json ok(nlohmann::json payload = nlohmann::json::object());
    static nlohmann::json error(ErrorCode code, const std::string& message);

private:
    using Handler = std::function<nlohmann::json(const std::string& token, const nlohmann::json& args)>;

    void install();

    AlsService& service_;
    std::map<std::string, Handler, std::less<>> handlers_;
};

} // namespace nusa::als
