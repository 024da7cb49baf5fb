#pragma once

#include <atomic>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "nusa/als/dispatcher.hpp"

namespace nusa::als {

/// Owns a connected stream socket and frames newline-delimited messages.
class LineChannel {
public:
    explicit LineChannel(int fd) noexcept : fd_(fd) {}
    ~LineChannel();

    LineChannel(LineChannel&& other) noexcept;
    LineChannel& operator=(LineChannel&& other) noexcept;
    LineChannel(const LineChannel&) = delete;
    LineChannel& operator=(const LineChannel&) = delete;

    static LineChannel connect_unix(const std::filesystem::path& path);

    /// nullopt on orderly EOF.
    std::optional<std::string> read_line();
    void write_line(std::string_view line);
    void shutdown() noexcept;
    int fd() const noexcept { return fd_; }

private:
    int fd_ = -1;
    std::string buffer_;
};

/// Serves a Dispatcher on a local (AF_UNIX) stream socket, one thread per connection.
class SocketServer {
public:
    SocketServer(Dispatcher& dispatcher, std::filesystem::path socket_path);
    ~SocketServer();

    SocketServer(const SocketServer&) = delete;
    SocketServer& operator=(const SocketServer&) = delete;

    void start();
    void stop();
    const std::filesystem::path& socket_path() const noexcept { return path_; }

private:
    void accept_loop();
    void serve(int fd);

    Dispatcher& dispatcher_;
    std::filesystem::path path_;
    int listen_fd_ = -1;
    std::atomic<bool> running_{false};
    std::thread acceptor_;
    std::mutex workers_mutex_;
    std::vector<std::thread> workers_;
    std::vector<int> client_fds_;
};

} // namespace nusa::als
