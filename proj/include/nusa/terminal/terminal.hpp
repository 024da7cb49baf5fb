#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nusa/als/service.hpp"
#include "nusa/crypto/obfuscation.hpp"
#include "nusa/terminal/keystore.hpp"
#include "nusa/terminal/local_db.hpp"
#include "nusa/terminal/transport.hpp"

namespace nusa::terminal {

enum class TerminalKind { Master, Slave, Patient };

std::string_view to_string(TerminalKind kind) noexcept;
TerminalKind terminal_kind_from_string(std::string_view name);

enum class KeyLossReason { PmdLoss, SmdLoss };

struct TerminalOptions {
    std::string principal_id;
    std::string credential;
    TerminalKind kind = TerminalKind::Master;
    std::filesystem::path local_db;      // master only; empty = in memory
    std::filesystem::path keystore_file;  // empty = not persisted
    std::string passphrase;
    Bytes salt;  // deployment salt for obfuscation keys
    std::uint32_t work_factor = crypto::kDefaultWorkFactor;
};

struct ObfuscatedInput {
    std::string text;
    std::vector<std::string> keywords;
};

/// One patient of a legacy ambulatory database.
struct LegacyPatient {
    Identity identity;
    ehr::FieldMap clear;
    std::map<std::string, ObfuscatedInput> obfuscated;
    std::vector<std::size_t> stores{0};
};

void from_json(const nlohmann::json& j, LegacyPatient& p);
void to_json(nlohmann::json& j, const LegacyPatient& p);

struct ItemResult {
    std::string fiscal_code;
    std::optional<ErrorCode> error;
    std::string message;

    bool ok() const noexcept { return !error.has_value(); }
};

struct DecodedView {
    std::size_t store = 0;
    ehr::RecordView view;
    std::map<std::string, std::string> revealed;  // deobfuscated visible fields
};

struct PatientLookup {
    Identity identity;
    crypto::PatientIdentifier pid;
    std::vector<DecodedView> views;
};

struct SyncResult {
    std::size_t fetched = 0;
    std::size_t refreshed = 0;  // records whose cached copy changed
    std::size_t pushed = 0;
    std::vector<ItemResult> errors;
};

/// Client side of every protocol flow: an MD master or slave terminal, or a
/// patient terminal. Holds the principal's keys; a master also holds the local
/// identity <-> PID database.
class Terminal {
public:
    Terminal(TerminalOptions options, std::unique_ptr<Transport> transport, KeyStore keys);

    void login();

    const std::string& principal_id() const noexcept { return options_.principal_id; }
    TerminalKind kind() const noexcept { return options_.kind; }
    const KeyStore& keys() const noexcept { return keys_; }
    const LocalDatabase& local() const noexcept { return local_; }
    AlsClient& client() noexcept { return client_; }

    // Population (master).
    std::vector<ItemResult> master_populate(const std::vector<LegacyPatient>& patients);
    std::vector<ItemResult> master_populate_file(const std::filesystem::path& file);

    // Query (any MD terminal).
    PatientLookup lookup_patient(const IdentityQuery& query);
    crypto::PatientIdentifier resolve_pid(const IdentityQuery& query);

    // Record maintenance.
    std::size_t update_record(const IdentityQuery& query, const ehr::RecordDelta& delta);
    void edit_local(const IdentityQuery& query, const std::string& field, const nlohmann::json& value);
    std::size_t attach_legacy(const IdentityQuery& query, std::size_t store, const ehr::FieldMap& match);
    void remove_patient(const IdentityQuery& query);
    SyncResult sync_master();

    // Delegation.
    std::vector<als::TicketId> offer_delegation(const std::vector<IdentityQuery>& patients, const std::string& smd_id,
                                                const std::vector<Window>& windows = {});
    std::vector<als::Ticket> inbox();
    void accept_offered(const als::Ticket& ticket);
    std::vector<als::Ticket> pending_accepted();
    void finalize_accepted(const als::Ticket& ticket, std::optional<std::vector<Window>> windows = std::nullopt);
    void revoke(const IdentityQuery& patient, const std::string& principal_id);

    // Key loss.
    als::RecoveryResult regenerate_key(KeyLossReason reason);

    // Patient side.
    als::Ticket patient_request_access();
    PatientLookup patient_view();
    void patient_set_visibility(const std::string& field, const std::string& md_id, bool hidden);

    /// SHA-256("nusa-owner" || key || PID): presented by the patient to prove record ownership.
    crypto::Digest owner_proof(const crypto::PatientIdentifier& pid) const;

private:
    void require_master() const;
    void require_md() const;
    void require_patient() const;
    crypto::ObfuscationKey obfuscation_key(const Identity& identity) const;
    std::vector<DecodedView> decode(const Identity& identity, const nlohmann::json& views) const;
    std::pair<nlohmann::json, crypto::PatientIdentifier> resolve(const IdentityQuery& query);
    void persist_keys() const;

    TerminalOptions options_;
    AlsClient client_;
    KeyStore keys_;
    LocalDatabase local_;
};

} // namespace nusa::terminal
