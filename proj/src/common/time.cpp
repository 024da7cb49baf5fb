#include "nusa/time.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>

#include "nusa/error.hpp"

namespace nusa {

bool windows_cover(const std::vector<Window>& windows, Timestamp t) noexcept {
    if (windows.empty()) return true;
    return std::any_of(windows.begin(), windows.end(), [t](const Window& w) { return w.contains(t); });
}

bool windows_expired(const std::vector<Window>& windows, Timestamp now) noexcept {
    if (windows.empty()) return false;
    return std::all_of(windows.begin(), windows.end(), [now](const Window& w) { return w.end < now; });
}

void to_json(nlohmann::json& j, const Window& w) { j = nlohmann::json::array({w.start, w.end}); }

void from_json(const nlohmann::json& j, Window& w) {
    if (!j.is_array() || j.size() != 2) fail(ErrorCode::InvalidInput, "window must be [start, end]");
    w.start = j.at(0).get<Timestamp>();
    w.end = j.at(1).get<Timestamp>();
    if (w.end < w.start) fail(ErrorCode::InvalidInput, "window end precedes start");
}

std::string format_utc(Timestamp t) {
    const std::time_t tt = static_cast<std::time_t>(t);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

Timestamp SystemClock::now() const {
    using namespace std::chrono;
    return duration_cast<seconds>(system_clock::now().time_since_epoch()).count();
}

} // namespace nusa
