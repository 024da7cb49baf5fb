#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nusa/crypto/layered.hpp"
#include "nusa/ehr/ehr_store.hpp"
#include "nusa/error.hpp"
#include "nusa/identity.hpp"
#include "nusa/journal.hpp"
#include "nusa/registry/patient_registry.hpp"
#include "nusa/time.hpp"

namespace nusa::als {

using crypto::LayeredCiphertext;
using crypto::PatientIdentifier;
using registry::RecordId;

using TicketId = std::uint64_t;

enum class PrincipalKind { MD, PATIENT };
enum class TicketKind { Delegation, Access };
enum class TicketStage { OFFERED, ACCEPTED, COMPLETED };

std::string_view to_string(PrincipalKind kind) noexcept;
std::string_view to_string(TicketKind kind) noexcept;
std::string_view to_string(TicketStage stage) noexcept;
PrincipalKind principal_kind_from_string(std::string_view name);

struct Session {
    std::string principal_id;
    PrincipalKind kind = PrincipalKind::MD;
    std::string token;  // 16 random bytes, hex
    Timestamp expiry = 0;
};

/// Staged handshake state for delegation (grantee = SMD) and patient access
/// (grantee = patient). Payload carries one layer at OFFERED and two at ACCEPTED.
struct Ticket {
    TicketId id = 0;
    TicketKind kind = TicketKind::Delegation;
    std::string pmd_id;
    std::string grantee_id;
    RecordId record_id = 0;
    TicketStage stage = TicketStage::OFFERED;
    LayeredCiphertext payload;
    std::vector<Window> windows;  // proposed validity, echoed back to the PMD

    friend bool operator==(const Ticket&, const Ticket&) = default;
};

struct EpidAnswer {
    RecordId record_id = 0;
    Identity identity;
    LayeredCiphertext epid;
};

struct StoreView {
    std::size_t store = 0;
    ehr::RecordView view;
    friend bool operator==(const StoreView&, const StoreView&) = default;
};

struct StoreHit {
    std::size_t store = 0;
    ehr::SearchHit hit;
};

struct PopulateRecord {
    std::size_t store = 0;
    ehr::MedicalRecord record;
};

struct EpidReplacement {
    LayeredCiphertext old_epid;
    LayeredCiphertext new_epid;
};

struct ItemError {
    std::size_t index = 0;
    ErrorCode code = ErrorCode::NotFound;
    std::string message;
};

struct RecoveryResult {
    std::size_t replaced = 0;
    std::vector<ItemError> errors;
};

struct SmdRecoveryResult {
    std::size_t revoked = 0;
    std::vector<TicketId> tickets;
};

struct AlsConfig {
    std::int64_t session_lifetime_s = 30 * 60;
    std::filesystem::path state_dir;  // empty = nothing persisted
};

void to_json(nlohmann::json& j, const StoreView& v);
void from_json(const nlohmann::json& j, StoreView& v);
void to_json(nlohmann::json& j, const Ticket& t);
void from_json(const nlohmann::json& j, Ticket& t);
void to_json(nlohmann::json& j, const Session& s);

/// Aggregation and Login Server. Authenticates principals, runs every protocol
/// flow against the registry and EHR stores, and queues the staged tickets.
///
/// It holds no decryption keys and never records an (identity, PID) pair: PIDs
/// pass through fetch/update/remove calls but are neither logged nor journaled
/// here. Submitted ciphertexts are checked on layer metadata only.
class AlsService {
public:
    /// Test hook invoked between the phases of multi-store writes.
    using FaultInjector = std::function<void(std::string_view phase)>;

    AlsService(std::shared_ptr<registry::PatientRegistry> registry,
               std::vector<std::shared_ptr<ehr::EhrStore>> stores, std::shared_ptr<const Clock> clock,
               AlsConfig config = {});

    AlsService(const AlsService&) = delete;
    AlsService& operator=(const AlsService&) = delete;

    // Out-of-band provisioning.
    void enroll(const std::string& principal_id, PrincipalKind kind, const std::string& credential,
                std::optional<std::string> fiscal_code = std::nullopt);

    Session authenticate(const std::string& principal_id, const std::string& credential);
    Session renew(const std::string& token);
    void register_key(const std::string& token, const crypto::KeyId& key_id);

    // Population and query.
    RecordId populate(const std::string& token, const Identity& identity, const LayeredCiphertext& epid,
                      const std::vector<PopulateRecord>& records);
    EpidAnswer query_patient_epid(const std::string& token, const IdentityQuery& query);
    std::vector<StoreView> fetch_records(const std::string& token, const PatientIdentifier& pid);
    std::vector<registry::PatientListing> list_patients(const std::string& token);

    // Record maintenance. `store` restricts the write to one store.
    std::size_t update_record(const std::string& token, const PatientIdentifier& pid, const ehr::RecordDelta& delta,
                              std::optional<std::size_t> store = std::nullopt);
    std::size_t replace_record(const std::string& token, const PatientIdentifier& pid,
                               const ehr::MedicalRecord& record, std::optional<std::size_t> store = std::nullopt);
    std::size_t attach_legacy(const std::string& token, std::size_t store, const ehr::FieldMap& match,
                              const PatientIdentifier& pid);

    // Delegation.
    std::vector<TicketId> delegate_offer(const std::string& token, const std::vector<IdentityQuery>& patients,
                                         const std::string& smd_id, const std::vector<Window>& windows = {});
    /// OFFERED tickets addressed to the caller.
    std::vector<Ticket> inbox(const std::string& token);
    void accept_delegation(const std::string& token, TicketId id, const LayeredCiphertext& eepid);
    /// ACCEPTED tickets waiting for the caller as PMD.
    std::vector<Ticket> pmd_inbox(const std::string& token);
    void complete_delegation(const std::string& token, TicketId id, const LayeredCiphertext& epid_smd,
                             const std::vector<Window>& windows);
    void revoke_grant(const std::string& token, const IdentityQuery& patient, const std::string& principal_id);

    // Patient access.
    Ticket patient_access_request(const std::string& token);
    void accept_access(const std::string& token, TicketId id, const LayeredCiphertext& eepid);
    void complete_access(const std::string& token, TicketId id, const LayeredCiphertext& epid_patient,
                         const std::vector<Window>& windows = {});
    void claim_record(const std::string& token, const PatientIdentifier& pid, const crypto::Digest& verifier);
    void set_obfuscation_visibility(const std::string& token, const PatientIdentifier& pid,
                                    const crypto::Digest& owner_proof, const std::string& field,
                                    const std::string& md_id, bool hidden);

    // Removal and key loss.
    std::size_t remove_patient_stage1(const std::string& token, const PatientIdentifier& pid);
    void remove_patient_stage2(const std::string& token, const LayeredCiphertext& epid);
    RecoveryResult recover_pmd_key(const std::string& token, const std::vector<EpidReplacement>& items);
    SmdRecoveryResult recover_smd_key(const std::string& token, const crypto::KeyId& new_key_id);

    // Search and statistics over clear data.
    std::vector<StoreHit> keyword_search(const std::string& token, const std::vector<std::string>& terms);
    double stats(const std::string& token, const std::string& field, ehr::Statistic statistic);

    // Background duties.
    std::size_t sweep_expired();

    std::optional<Ticket> ticket(TicketId id) const;
    std::vector<std::string> log_lines() const;
    std::size_t store_count() const noexcept { return stores_.size(); }
    const registry::PatientRegistry& registry() const noexcept { return *registry_; }
    const ehr::EhrStore& store(std::size_t i) const { return *stores_.at(i); }
    Timestamp now() const { return clock_->now(); }

    void set_fault_injector(FaultInjector injector);

private:
    struct Principal {
        PrincipalKind kind = PrincipalKind::MD;
        crypto::Digest credential_digest{};
        std::optional<std::string> fiscal_code;
    };

    Session require_session(const std::string& token);
    Session require(const std::string& token, PrincipalKind kind);
    void log(const std::string& line);
    void fault(std::string_view phase);
    TicketId queue_ticket_locked(Ticket ticket);
    void persist_ticket_locked(const Ticket& ticket);
    void drop_ticket_locked(TicketId id);
    bool pending_exists_locked(RecordId record, const std::string& grantee, TicketKind kind) const;
    void accept_ticket(const Session& caller, TicketId id, const LayeredCiphertext& eepid, TicketKind kind);
    void complete_ticket(const Session& caller, TicketId id, const LayeredCiphertext& epid, TicketKind kind,
                         const std::vector<Window>& windows);
    registry::PersonalRecord own_patient_record(const Session& caller) const;
    void require_patient_grant(const Session& caller) const;
    std::vector<std::size_t> target_stores(const PatientIdentifier& pid, std::optional<std::size_t> store) const;

    std::shared_ptr<registry::PatientRegistry> registry_;
    std::vector<std::shared_ptr<ehr::EhrStore>> stores_;
    std::shared_ptr<const Clock> clock_;
    AlsConfig config_;

    mutable std::mutex state_mutex_;  // principals, sessions, tickets
    std::mutex flow_mutex_;           // serializes multi-step writes
    std::map<std::string, Principal> principals_;
    std::map<std::string, Session> sessions_;
    std::map<TicketId, Ticket> tickets_;
    std::map<std::string, std::size_t> outstanding_stage1_;
    TicketId next_ticket_ = 1;
    Journal ticket_journal_;

    mutable std::mutex log_mutex_;
    std::vector<std::string> log_;
    std::ofstream log_file_;
    FaultInjector fault_injector_;
};

} // namespace nusa::als
