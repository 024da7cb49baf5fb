#pragma once

#include <chrono>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "nusa/time.hpp"

namespace nusa::testbed {

/// Runs named background tasks (grant sweeps, master syncs) on a fixed
/// interval and keeps one timestamped log line per task run.
class SweepDaemon {
public:
    /// A task returns a short summary for the log.
    struct Task {
        std::string name;
        std::function<std::string()> run;
    };

    /// Throws ValidationError for a zero interval.
    SweepDaemon(std::chrono::milliseconds interval, std::vector<Task> tasks, const Clock& clock);
    ~SweepDaemon();

    SweepDaemon(const SweepDaemon&) = delete;
    SweepDaemon& operator=(const SweepDaemon&) = delete;

    void start();
    /// Returns after the current tick, if any, has finished. No task runs afterwards.
    void stop();
    /// Runs every task once on the calling thread.
    void tick();

    std::vector<std::string> log_lines() const;
    std::size_t ticks() const;
    void set_log_sink(std::function<void(const std::string&)> sink) { sink_ = std::move(sink); }

private:
    void loop();

    std::chrono::milliseconds interval_;
    std::vector<Task> tasks_;
    const Clock& clock_;
    std::function<void(const std::string&)> sink_;

    mutable std::mutex mutex_;
    std::mutex tick_mutex_;
    std::condition_variable cv_;
    bool running_ = false;
    std::size_t ticks_ = 0;
    std::vector<std::string> log_;
    std::thread thread_;
};

} // namespace nusa::testbed
