#include "nusa/journal.hpp"

#include <string>

#include "nusa/error.hpp"

namespace nusa {

Journal::Journal(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    open_for_append();
}

void Journal::open_for_append() {
    out_.close();
    out_.open(path_, std::ios::app | std::ios::binary);
    if (!out_) fail(ErrorCode::IoError, "cannot open journal " + path_.string());
}

void Journal::replay(const std::function<void(const nlohmann::json&)>& apply) const {
    if (!enabled()) return;
    std::ifstream in(path_, std::ios::binary);
    if (!in) return;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json entry;
        try {
            entry = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            fail(ErrorCode::ParseError, path_.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        apply(entry);
    }
}

void Journal::append(const nlohmann::json& entry) {
    if (!enabled()) return;
    out_ << entry.dump() << '\n';
    out_.flush();
    if (!out_) fail(ErrorCode::IoError, "journal write failed: " + path_.string());
}

void Journal::rewrite(const std::vector<nlohmann::json>& entries) {
    if (!enabled()) return;
    const auto tmp = std::filesystem::path(path_.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
        if (!out) fail(ErrorCode::IoError, "cannot write " + tmp.string());
        for (const auto& e : entries) out << e.dump() << '\n';
        out.flush();
        if (!out) fail(ErrorCode::IoError, "compaction write failed: " + tmp.string());
    }
    out_.close();
    std::filesystem::rename(tmp, path_);
    open_for_append();
}

} // namespace nusa
