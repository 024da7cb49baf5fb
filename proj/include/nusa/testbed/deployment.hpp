#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nusa/als/dispatcher.hpp"
#include "nusa/als/service.hpp"
#include "nusa/ehr/ehr_store.hpp"
#include "nusa/registry/patient_registry.hpp"
#include "nusa/terminal/terminal.hpp"
#include "nusa/time.hpp"

namespace nusa::testbed {

struct PrincipalConfig {
    std::string id;
    als::PrincipalKind kind = als::PrincipalKind::MD;
    std::string credential;
    std::optional<std::string> fiscal_code;  // patients only
};

struct DeploymentConfig {
    std::filesystem::path state_dir;
    std::size_t ehr_count = 2;
    std::vector<std::size_t> read_only_stores;
    std::filesystem::path registry_path;               // default: <state_dir>/pr/registry.journal
    std::vector<std::filesystem::path> ehr_paths;      // default: <state_dir>/ehr<i>/records.journal
    std::uint32_t work_factor = crypto::kDefaultWorkFactor;
    std::int64_t session_lifetime_s = 30 * 60;
    std::filesystem::path socket;
    std::string salt = "nusa-testbed";
    std::optional<Timestamp> manual_clock_start;       // unset = system clock
    std::int64_t sweep_interval_s = 0;
    std::vector<PrincipalConfig> principals;

    /// Reads a JSON config file. Relative paths resolve against the file's directory.
    static DeploymentConfig load(const std::filesystem::path& file);
};

void from_json(const nlohmann::json& j, PrincipalConfig& p);
void from_json(const nlohmann::json& j, DeploymentConfig& c);

/// One PR, N EHR stores and an ALS wired together over a state directory:
///   <state>/pr/  <state>/ehr<i>/  <state>/als/     deployment side
///   <state>/terminals/<device>/                    client side (not scanned)
class Deployment {
public:
    explicit Deployment(DeploymentConfig config);

    Deployment(const Deployment&) = delete;
    Deployment& operator=(const Deployment&) = delete;

    const DeploymentConfig& config() const noexcept { return config_; }
    als::AlsService& als() noexcept { return *als_; }
    als::Dispatcher& dispatcher() noexcept { return *dispatcher_; }
    registry::PatientRegistry& registry() noexcept { return *registry_; }
    ehr::EhrStore& store(std::size_t i) { return *stores_.at(i); }
    std::size_t store_count() const noexcept { return stores_.size(); }
    /// Null when running on the system clock.
    ManualClock* manual_clock() noexcept { return manual_clock_.get(); }
    const Clock& clock() const noexcept { return *clock_; }

    void enroll(const PrincipalConfig& principal);
    const PrincipalConfig& principal(const std::string& id) const;

    /// In-process terminal for an enrolled principal. `device` names its
    /// directory under terminals/.
    std::unique_ptr<terminal::Terminal> open_terminal(const std::string& principal_id, terminal::TerminalKind kind,
                                                      terminal::KeyStore keys, const std::string& device);

    std::filesystem::path terminals_dir() const { return config_.state_dir / "terminals"; }

private:
    DeploymentConfig config_;
    std::shared_ptr<ManualClock> manual_clock_;
    std::shared_ptr<const Clock> clock_;
    std::shared_ptr<registry::PatientRegistry> registry_;
    std::vector<std::shared_ptr<ehr::EhrStore>> stores_;
    std::unique_ptr<als::AlsService> als_;
    std::unique_ptr<als::Dispatcher> dispatcher_;
    std::map<std::string, PrincipalConfig> principals_;
};

} // namespace nusa::testbed
