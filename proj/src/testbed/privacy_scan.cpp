#include "nusa/testbed/privacy_scan.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "nusa/error.hpp"

namespace nusa::testbed {

using nlohmann::json;

void to_json(json& j, const TruthEntry& t) {
    j = {{"fiscal_code", t.identity.fiscal_code},
         {"surname", t.identity.surname},
         {"given_name", t.identity.given_name},
         {"birthdate", t.identity.birthdate},
         {"pid", t.pid.hex()}};
}

void from_json(const json& j, TruthEntry& t) {
    t.identity.fiscal_code = j.at("fiscal_code").get<std::string>();
    t.identity.surname = j.value("surname", std::string{});
    t.identity.given_name = j.value("given_name", std::string{});
    t.identity.birthdate = j.value("birthdate", std::string{});
    t.pid = crypto::PatientIdentifier::from_hex(j.at("pid").get<std::string>());
}

std::vector<TruthEntry> load_truth(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) fail(ErrorCode::IoError, "cannot read " + file.string());
    std::vector<TruthEntry> truth;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            truth.push_back(json::parse(line).get<TruthEntry>());
        } catch (const json::exception& e) {
            fail(ErrorCode::ParseError, file.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return truth;
}

void save_truth(const std::filesystem::path& file, const std::vector<TruthEntry>& truth) {
    std::ofstream out(file, std::ios::trunc);
    if (!out) fail(ErrorCode::IoError, "cannot write " + file.string());
    for (const auto& t : truth) out << json(t).dump() << '\n';
}

void to_json(json& j, const Violation& v) { j = {{"file", v.file}, {"line", v.line}, {"reason", v.reason}}; }

namespace {

enum class Side { Registry, Ehr, Als };

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

bool is_word(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

// Whole-word match so "Ross" does not hit "Rossetti".
bool contains_word(const std::string& haystack, const std::string& needle) {
    if (needle.empty()) return false;
    for (auto pos = haystack.find(needle); pos != std::string::npos; pos = haystack.find(needle, pos + 1)) {
        const bool left = pos == 0 || !is_word(haystack[pos - 1]);
        const auto end = pos + needle.size();
        const bool right = end >= haystack.size() || !is_word(haystack[end]);
        if (left && right) return true;
    }
    return false;
}

struct Needles {
    std::vector<std::string> pids;        // lowercase hex
    std::vector<std::string> identities;  // lowercase fiscal codes and surnames
};

} // namespace

std::vector<Violation> privacy_scan(const std::filesystem::path& state_dir, const std::vector<TruthEntry>& truth) {
    Needles needles;
    for (const auto& t : truth) {
        needles.pids.push_back(lower(t.pid.hex()));
        needles.identities.push_back(lower(t.identity.fiscal_code));
        if (!t.identity.surname.empty()) needles.identities.push_back(lower(t.identity.surname));
    }

    std::vector<std::filesystem::path> files;
    if (std::filesystem::exists(state_dir)) {
        for (const auto& entry : std::filesystem::recursive_directory_iterator(state_dir)) {
            if (entry.is_regular_file()) files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());

    std::vector<Violation> violations;
    for (const auto& path : files) {
        const auto rel = std::filesystem::relative(path, state_dir);
        const auto top = rel.begin()->string();
        Side side;
        if (top == "pr") {
            side = Side::Registry;
        } else if (top == "als") {
            side = Side::Als;
        } else if (top.rfind("ehr", 0) == 0) {
            side = Side::Ehr;
        } else {
            continue;
        }

        std::ifstream in(path, std::ios::binary);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto text = lower(line);
            const bool has_pid = std::any_of(needles.pids.begin(), needles.pids.end(),
                                             [&](const std::string& p) { return text.find(p) != std::string::npos; });
            const bool has_identity =
                std::any_of(needles.identities.begin(), needles.identities.end(),
                            [&](const std::string& id) { return contains_word(text, id); });
            std::string reason;
            if (has_pid && has_identity) {
                reason = "PID next to identity";
            } else if (side == Side::Registry && has_pid) {
                reason = "PID in registry";
            } else if (side == Side::Ehr && has_identity) {
                reason = "identity in EHR store";
            }
            if (!reason.empty()) violations.push_back(Violation{rel.generic_string(), lineno, reason});
        }
    }
    return violations;
}

} // namespace nusa::testbed
