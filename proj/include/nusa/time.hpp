#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace nusa {

/// Seconds since the Unix epoch, UTC.
using Timestamp = std::int64_t;

/// Closed interval [start, end].
struct Window {
    Timestamp start = 0;
    Timestamp end = 0;

    bool contains(Timestamp t) const noexcept { return start <= t && t <= end; }
    friend bool operator==(const Window&, const Window&) = default;
};

/// Empty list means permanently valid.
bool windows_cover(const std::vector<Window>& windows, Timestamp t) noexcept;

/// True when the list is non-empty and every window ended strictly before `now`.
bool windows_expired(const std::vector<Window>& windows, Timestamp now) noexcept;

void to_json(nlohmann::json& j, const Window& w);
void from_json(const nlohmann::json& j, Window& w);

std::string format_utc(Timestamp t);

class Clock {
public:
    virtual ~Clock() = default;
    virtual Timestamp now() const = 0;
};

class SystemClock final : public Clock {
public:
    Timestamp now() const override;
};

/// Test and scenario clock; thread-safe.
class ManualClock final : public Clock {
public:
    explicit ManualClock(Timestamp start = 1'700'000'000) : now_(start) {}

    Timestamp now() const override { return now_.load(); }
    void set(Timestamp t) { now_.store(t); }
    void advance(std::int64_t seconds) { now_.fetch_add(seconds); }

private:
    std::atomic<Timestamp> now_;
};

} // namespace nusa
