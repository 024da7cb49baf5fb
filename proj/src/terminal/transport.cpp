#include "nusa/terminal/transport.hpp"

#include "nusa/error.hpp"

namespace nusa::terminal {

using nlohmann::json;

namespace {

json hello() { return {{"op", "hello"}, {"version", als::kProtocolVersion}}; }

void expect_ok(const json& response) {
    if (response.value("status", std::string{}) != "ok") {
        fail(ErrorCode::ProtocolError, "handshake rejected: " + response.dump());
    }
}

} // namespace

InProcessTransport::InProcessTransport(als::Dispatcher& dispatcher) : connection_(dispatcher.connect()) {
    expect_ok(json::parse(connection_.handle_line(hello().dump())));
}

json InProcessTransport::call(const json& request) {
    std::lock_guard lock(mutex_);
    return json::parse(connection_.handle_line(request.dump()));
}

SocketTransport::SocketTransport(const std::filesystem::path& socket_path)
    : channel_(als::LineChannel::connect_unix(socket_path)) {
    expect_ok(call(hello()));
}

json SocketTransport::call(const json& request) {
    std::lock_guard lock(mutex_);
    channel_.write_line(request.dump());
    const auto line = channel_.read_line();
    if (!line) fail(ErrorCode::IoError, "ALS closed the connection");
    return json::parse(*line);
}

AlsClient::AlsClient(std::unique_ptr<Transport> transport) : transport_(std::move(transport)) {
    if (!transport_) fail(ErrorCode::InvalidInput, "client needs a transport");
}

json AlsClient::request(const std::string& op, const json& args) {
    const json response = transport_->call({{"token", token_}, {"op", op}, {"args", args}});
    if (response.value("status", std::string{}) == "ok") return response.value("payload", json::object());
    const auto name = response.value("error", std::string{"ProtocolError"});
    const auto code = error_code_from_string(name).value_or(ErrorCode::ProtocolError);
    std::string message = response.value("message", std::string{});
    if (message.starts_with(name + ": ")) message.erase(0, name.size() + 2);
    if (message == name) message.clear();
    throw Error(code, message);
}

} // namespace nusa::terminal
