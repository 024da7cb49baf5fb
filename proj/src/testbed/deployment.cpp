#include "nusa/testbed/deployment.hpp"

#include <algorithm>
#include <fstream>

#include "nusa/error.hpp"
#include "nusa/terminal/transport.hpp"

namespace nusa::testbed {

using nlohmann::json;

void from_json(const json& j, PrincipalConfig& p) {
    p.id = j.at("id").get<std::string>();
    const auto kind = j.value("kind", std::string("md"));
    if (kind == "md") {
        p.kind = als::PrincipalKind::MD;
    } else if (kind == "patient") {
        p.kind = als::PrincipalKind::PATIENT;
    } else {
        fail(ErrorCode::ValidationError, "principal kind must be md or patient");
    }
    p.credential = j.value("credential", "pw-" + p.id);
    if (j.contains("fiscal_code")) p.fiscal_code = j.at("fiscal_code").get<std::string>();
}

void from_json(const json& j, DeploymentConfig& c) {
    c.state_dir = j.at("state_dir").get<std::string>();
    c.ehr_count = j.value("ehr_count", std::size_t{2});
    c.read_only_stores = j.value("read_only_stores", std::vector<std::size_t>{});
    c.registry_path = j.value("registry_path", std::string{});
    for (const auto& p : j.value("ehr_paths", std::vector<std::string>{})) c.ehr_paths.emplace_back(p);
    c.work_factor = j.value("work_factor", crypto::kDefaultWorkFactor);
    c.session_lifetime_s = j.value("session_lifetime_s", std::int64_t{30 * 60});
    c.socket = j.value("socket", std::string{});
    c.salt = j.value("salt", std::string("nusa-testbed"));
    if (j.contains("manual_clock_start")) c.manual_clock_start = j.at("manual_clock_start").get<Timestamp>();
    c.sweep_interval_s = j.value("sweep_interval_s", std::int64_t{0});
    c.principals = j.value("principals", std::vector<PrincipalConfig>{});
}

DeploymentConfig DeploymentConfig::load(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) fail(ErrorCode::IoError, "cannot read config " + file.string());
    DeploymentConfig config;
    try {
        config = json::parse(in).get<DeploymentConfig>();
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, file.string() + ": " + e.what());
    }
    const auto base = file.parent_path();
    auto resolve = [&](std::filesystem::path& p) {
        if (!p.empty() && p.is_relative()) p = base / p;
    };
    resolve(config.state_dir);
    resolve(config.registry_path);
    resolve(config.socket);
    for (auto& p : config.ehr_paths) resolve(p);
    return config;
}

Deployment::Deployment(DeploymentConfig config) : config_(std::move(config)) {
    if (config_.state_dir.empty()) fail(ErrorCode::ValidationError, "state_dir is required");
    if (config_.ehr_count == 0) fail(ErrorCode::ValidationError, "at least one EHR store is required");
    if (!config_.ehr_paths.empty() && config_.ehr_paths.size() != config_.ehr_count) {
        fail(ErrorCode::ValidationError, "ehr_paths must name every store");
    }
    if (config_.work_factor == 0) fail(ErrorCode::ValidationError, "work_factor must be positive");
    std::filesystem::create_directories(config_.state_dir);

    if (config_.manual_clock_start) {
        manual_clock_ = std::make_shared<ManualClock>(*config_.manual_clock_start);
        clock_ = manual_clock_;
    } else {
        clock_ = std::make_shared<SystemClock>();
    }

    auto registry_path = config_.registry_path;
    if (registry_path.empty()) registry_path = config_.state_dir / "pr" / "registry.journal";
    std::filesystem::create_directories(registry_path.parent_path());
    registry_ = std::make_shared<registry::PatientRegistry>(registry_path);

    for (std::size_t i = 0; i < config_.ehr_count; ++i) {
        auto path = config_.ehr_paths.empty()
                        ? config_.state_dir / ("ehr" + std::to_string(i)) / "records.journal"
                        : config_.ehr_paths[i];
        std::filesystem::create_directories(path.parent_path());
        const bool editable = std::find(config_.read_only_stores.begin(), config_.read_only_stores.end(), i) ==
                              config_.read_only_stores.end();
        stores_.push_back(std::make_shared<ehr::EhrStore>("ehr" + std::to_string(i), path, editable));
    }

    als::AlsConfig als_config;
    als_config.session_lifetime_s = config_.session_lifetime_s;
    als_config.state_dir = config_.state_dir / "als";
    als_ = std::make_unique<als::AlsService>(registry_, stores_, clock_, als_config);
    dispatcher_ = std::make_unique<als::Dispatcher>(*als_);

    for (const auto& p : config_.principals) enroll(p);
}

void Deployment::enroll(const PrincipalConfig& principal) {
    als_->enroll(principal.id, principal.kind, principal.credential, principal.fiscal_code);
    principals_[principal.id] = principal;
}

const PrincipalConfig& Deployment::principal(const std::string& id) const {
    const auto it = principals_.find(id);
    if (it == principals_.end()) fail(ErrorCode::NotFound, "unknown principal " + id);
    return it->second;
}

std::unique_ptr<terminal::Terminal> Deployment::open_terminal(const std::string& principal_id,
                                                              terminal::TerminalKind kind, terminal::KeyStore keys,
                                                              const std::string& device) {
    const auto& p = principal(principal_id);
    const auto dir = terminals_dir() / device;
    std::filesystem::create_directories(dir);

    terminal::TerminalOptions options;
    options.principal_id = p.id;
    options.credential = p.credential;
    options.kind = kind;
    if (kind == terminal::TerminalKind::Master) options.local_db = dir / "patients.journal";
    const auto salt = as_bytes(config_.salt);
    options.salt.assign(salt.begin(), salt.end());
    options.work_factor = config_.work_factor;
    return std::make_unique<terminal::Terminal>(
        std::move(options), std::make_unique<terminal::InProcessTransport>(*dispatcher_), std::move(keys));
}

} // namespace nusa::testbed
