#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nusa/crypto/obfuscation.hpp"
#include "nusa/terminal/terminal.hpp"
#include "nusa/testbed/privacy_scan.hpp"
#include "nusa/time.hpp"

namespace nusa::testbed {

/// Actor name reserved for steps run by the harness itself (clock, sweeps,
/// legacy imports, fault injection).
inline constexpr std::string_view kHarnessActor = "harness";

struct ActorSpec {
    std::string name;
    std::string principal;
    terminal::TerminalKind terminal = terminal::TerminalKind::Master;
    std::optional<std::string> fiscal_code;  // patient actors
};

struct Step {
    std::size_t line = 0;
    std::string actor;
    std::string op;
    nlohmann::json args = nlohmann::json::object();
    std::string expect = "ok";  // "ok" or an error code name
    nlohmann::json check = nlohmann::json::object();
    bool concurrent = false;  // independent of the previous step; may overlap it
};

/// A scenario file is JSON lines: one header object naming the actors, then
/// one object per step. Blank lines and lines starting with "//" are ignored.
struct Scenario {
    std::string name;
    std::uint64_t seed = 0;
    std::size_t ehr_stores = 2;
    std::vector<std::size_t> read_only_stores;
    std::uint32_t work_factor = 1024;
    std::int64_t session_lifetime_s = 30 * 60;
    Timestamp start_time = 1'700'000'000;
    std::size_t expect_violations = 0;
    std::vector<ActorSpec> actors;
    std::vector<Step> steps;

    /// Throws ParseError with the offending line number.
    static Scenario parse(std::istream& in, const std::string& source = "<scenario>");
    static Scenario load(const std::filesystem::path& file);
};

/// Operations a step may name.
const std::vector<std::string>& known_operations();

struct StepOutcome {
    std::size_t index = 0;
    std::size_t line = 0;
    std::string actor;
    std::string op;
    std::string expect;
    std::string outcome;  // "ok", an error code name, or "CheckFailed"
    bool passed = false;
    std::string detail;
    double elapsed_ms = 0;
};

struct Report {
    std::string scenario;
    std::uint64_t seed = 0;
    std::vector<StepOutcome> steps;
    std::vector<Violation> violations;
    std::size_t expected_violations = 0;
    double total_ms = 0;

    bool steps_passed() const;
    bool scan_passed() const { return violations.size() == expected_violations; }
    bool passed() const { return steps_passed() && scan_passed(); }

    /// Everything but timing is deterministic for a given scenario and seed;
    /// timing sits under its own key.
    nlohmann::json to_json(bool with_timing = true) const;
};

struct RunOptions {
    std::filesystem::path state_dir;  // must not hold a previous deployment
    std::optional<std::uint64_t> seed;  // overrides the header seed
    bool parallel_actors = false;
};

struct RunResult {
    Report report;
    std::vector<TruthEntry> truth;
};

/// Boots a fresh deployment in `options.state_dir`, runs every step in order,
/// then scans the state directory against the harness ground truth.
RunResult run_scenario(const Scenario& scenario, const RunOptions& options);

} // namespace nusa::testbed
