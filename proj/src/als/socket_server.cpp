#include "nusa/als/socket_server.hpp"

#include <algorithm>
#include <cerrno>
#include <cstring>

#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include "nusa/error.hpp"

namespace nusa::als {
namespace {

sockaddr_un make_address(const std::filesystem::path& path) {
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    const auto s = path.string();
    if (s.size() >= sizeof(addr.sun_path)) fail(ErrorCode::InvalidInput, "socket path too long: " + s);
    std::memcpy(addr.sun_path, s.c_str(), s.size() + 1);
    return addr;
}

} // namespace

LineChannel::~LineChannel() {
    if (fd_ >= 0) ::close(fd_);
}

LineChannel::LineChannel(LineChannel&& other) noexcept : fd_(other.fd_), buffer_(std::move(other.buffer_)) {
    other.fd_ = -1;
}

LineChannel& LineChannel::operator=(LineChannel&& other) noexcept {
    if (this != &other) {
        if (fd_ >= 0) ::close(fd_);
        fd_ = other.fd_;
        buffer_ = std::move(other.buffer_);
        other.fd_ = -1;
    }
    return *this;
}

LineChannel LineChannel::connect_unix(const std::filesystem::path& path) {
    const int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
    if (fd < 0) fail(ErrorCode::IoError, std::string("socket: ") + std::strerror(errno));
    LineChannel channel(fd);
    const auto addr = make_address(path);
    if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
        fail(ErrorCode::IoError, "connect " + path.string() + ": " + std::strerror(errno));
    }
    return channel;
}

std::optional<std::string> LineChannel::read_line() {
    for (;;) {
        if (const auto pos = buffer_.find('\n'); pos != std::string::npos) {
            std::string line = buffer_.substr(0, pos);
            buffer_.erase(0, pos + 1);
            return line;
        }
        char chunk[4096];
        const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
        if (n == 0) return std::nullopt;
        if (n < 0) {
            if (errno == EINTR) continue;
            return std::nullopt;
        }
        buffer_.append(chunk, static_cast<std::size_t>(n));
    }
}

void LineChannel::write_line(std::string_view line) {
    std::string framed(line);
    framed.push_back('\n');
    std::size_t sent = 0;
    while (sent < framed.size()) {
        const ssize_t n = ::send(fd_, framed.data() + sent, framed.size() - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            fail(ErrorCode::IoError, std::string("send: ") + std::strerror(errno));
        }
        sent += static_cast<std::size_t>(n);
    }
}

void LineChannel::shutdown() noexcept {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

SocketServer::SocketServer(Dispatcher& dispatcher, std::filesystem::path socket_path)
    : dispatcher_(dispatcher), path_(std::move(socket_path)) {}

SocketServer::~SocketServer() { stop(); }

void SocketServer::start() {
    if (running_) return;
    std::error_code ec;
    std::filesystem::remove(path_, ec);
    listen_fd_ = ::socket(AF_UNIX, SOCK_STREAM, 0);
    if (listen_fd_ < 0) fail(ErrorCode::IoError, std::string("socket: ") + std::strerror(errno));
    const auto addr = make_address(path_);
    if (::bind(listen_fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listen_fd_, 64) != 0) {
        const std::string why = std::strerror(errno);
        ::close(listen_fd_);
        listen_fd_ = -1;
        fail(ErrorCode::IoError, "bind/listen " + path_.string() + ": " + why);
    }
    running_ = true;
    acceptor_ = std::thread([this] { accept_loop(); });
}

void SocketServer::stop() {
    if (!running_.exchange(false)) return;
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    listen_fd_ = -1;
    if (acceptor_.joinable()) acceptor_.join();
    std::vector<std::thread> workers;
    {
        std::lock_guard lock(workers_mutex_);
        for (const int fd : client_fds_) ::shutdown(fd, SHUT_RDWR);
        workers.swap(workers_);
    }
    for (auto& w : workers) {
        if (w.joinable()) w.join();
    }
    std::error_code ec;
    std::filesystem::remove(path_, ec);
}

void SocketServer::accept_loop() {
    while (running_) {
        const int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) {
            if (errno == EINTR) continue;
            break;
        }
        std::lock_guard lock(workers_mutex_);
        if (!running_) {
            ::close(fd);
            break;
        }
        client_fds_.push_back(fd);
        workers_.emplace_back([this, fd] { serve(fd); });
    }
}

void SocketServer::serve(int fd) {
    LineChannel channel(fd);
    auto connection = dispatcher_.connect();
    try {
        while (auto line = channel.read_line()) {
            if (line->empty()) continue;
            channel.write_line(connection.handle_line(*line));
        }
    } catch (const Error&) {
        // peer went away mid-write
    }
    std::lock_guard lock(workers_mutex_);
    std::erase(client_fds_, fd);
}

} // namespace nusa::als
