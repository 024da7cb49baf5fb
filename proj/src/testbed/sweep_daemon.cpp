#include "nusa/testbed/sweep_daemon.hpp"

#include "nusa/error.hpp"

namespace nusa::testbed {

SweepDaemon::SweepDaemon(std::chrono::milliseconds interval, std::vector<Task> tasks, const Clock& clock)
    : interval_(interval), tasks_(std::move(tasks)), clock_(clock) {
    if (interval_.count() <= 0) fail(ErrorCode::ValidationError, "sweep interval must be positive");
}

SweepDaemon::~SweepDaemon() { stop(); }

void SweepDaemon::start() {
    std::lock_guard lock(mutex_);
    if (running_) return;
    running_ = true;
    thread_ = std::thread([this] { loop(); });
}

void SweepDaemon::stop() {
    {
        std::lock_guard lock(mutex_);
        if (!running_) return;
        running_ = false;
    }
    cv_.notify_all();
    if (thread_.joinable()) thread_.join();
}

void SweepDaemon::loop() {
    std::unique_lock lock(mutex_);
    while (running_) {
        if (cv_.wait_for(lock, interval_, [this] { return !running_; })) break;
        lock.unlock();
        tick();
        lock.lock();
    }
}

void SweepDaemon::tick() {
    std::lock_guard serial(tick_mutex_);
    for (const auto& task : tasks_) {
        std::string summary;
        try {
            summary = task.run();
        } catch (const std::exception& e) {
            summary = std::string("failed: ") + e.what();
        }
        const std::string line = format_utc(clock_.now()) + " " + task.name + " " + summary;
        {
            std::lock_guard lock(mutex_);
            log_.push_back(line);
        }
        if (sink_) sink_(line);
    }
    std::lock_guard lock(mutex_);
    ++ticks_;
}

std::vector<std::string> SweepDaemon::log_lines() const {
    std::lock_guard lock(mutex_);
    return log_;
}

std::size_t SweepDaemon::ticks() const {
    std::lock_guard lock(mutex_);
    return ticks_;
}

} // namespace nusa::testbed
