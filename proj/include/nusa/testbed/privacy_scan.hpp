#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "nusa/crypto/layered.hpp"
#include "nusa/identity.hpp"

namespace nusa::testbed {

/// Harness-held ground truth: which PID belongs to which identity.
struct TruthEntry {
    Identity identity;
    crypto::PatientIdentifier pid;
};

void to_json(nlohmann::json& j, const TruthEntry& t);
void from_json(const nlohmann::json& j, TruthEntry& t);

std::vector<TruthEntry> load_truth(const std::filesystem::path& file);
void save_truth(const std::filesystem::path& file, const std::vector<TruthEntry>& truth);

struct Violation {
    std::string file;  // relative to the scanned directory
    std::size_t line = 0;
    std::string reason;

    friend bool operator==(const Violation&, const Violation&) = default;
};

void to_json(nlohmann::json& j, const Violation& v);

/// Scans every deployment-side file (pr/, ehr*/, als/) under `state_dir` line
/// by line. A line is a violation when it
///   - holds a PID next to any identity string (fiscal code or surname),
///   - is in a PR file and holds any PID, or
///   - is in an EHR file and holds any identity string.
/// Client-side files under terminals/ are skipped. At most one violation per line.
std::vector<Violation> privacy_scan(const std::filesystem::path& state_dir, const std::vector<TruthEntry>& truth);

} // namespace nusa::testbed
