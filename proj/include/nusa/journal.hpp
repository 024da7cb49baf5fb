#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <vector>

#include <json.hpp>

namespace nusa {

/// Append-only newline-delimited JSON file. A default-constructed journal is
/// disabled and every call is a no-op, which gives purely in-memory stores.
class Journal {
public:
    Journal() = default;
    explicit Journal(std::filesystem::path path);

    bool enabled() const noexcept { return !path_.empty(); }
    const std::filesystem::path& path() const noexcept { return path_; }

    /// Invokes `apply` for each stored entry in order. Throws ParseError on a corrupt line.
    void replay(const std::function<void(const nlohmann::json&)>& apply) const;

    void append(const nlohmann::json& entry);

    /// Atomically replaces the file content (compaction).
    void rewrite(const std::vector<nlohmann::json>& entries);

private:
    void open_for_append();

    std::filesystem::path path_;
    std::ofstream out_;
};

} // namespace nusa
