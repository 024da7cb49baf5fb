#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "nusa/crypto/layered.hpp"
#include "nusa/identity.hpp"
#include "nusa/journal.hpp"
#include "nusa/time.hpp"

namespace nusa::registry {

using RecordId = std::uint64_t;

enum class Role { PMD, SMD, PATIENT };

std::string_view to_string(Role role) noexcept;
Role role_from_string(std::string_view name);

struct AccessGrant {
    std::string principal_id;
    Role role = Role::PMD;
    crypto::LayeredCiphertext epid;  // exactly one layer, keyed by the principal
    std::vector<Window> windows;      // empty = always valid

    bool valid_at(Timestamp t) const noexcept { return windows_cover(windows, t); }
    friend bool operator==(const AccessGrant&, const AccessGrant&) = default;
};

struct PersonalRecord {
    RecordId id = 0;
    Identity identity;
    std::vector<AccessGrant> grants;

    const AccessGrant* grant_of(std::string_view principal) const noexcept;
    const AccessGrant& pmd_grant() const;
};

struct PatientListing {
    RecordId record_id = 0;
    Identity identity;
    AccessGrant grant;
};

void to_json(nlohmann::json& j, const AccessGrant& g);
void from_json(const nlohmann::json& j, AccessGrant& g);
void to_json(nlohmann::json& j, const PersonalRecord& r);
void from_json(const nlohmann::json& j, PersonalRecord& r);

/// Identity records and access grants. Never holds a plaintext PID: every
/// grant carries an EPID under exactly one layer.
///
/// Mutations are serialized through an exclusive lock and journaled before the
/// in-memory index changes; reads share the lock and see a consistent snapshot.
class PatientRegistry {
public:
    /// Empty path keeps the registry in memory. An existing journal is replayed.
    explicit PatientRegistry(std::filesystem::path journal_path = {});

    PatientRegistry(const PatientRegistry&) = delete;
    PatientRegistry& operator=(const PatientRegistry&) = delete;

    /// Records the principal's current public key id. Grants are checked against it.
    void bind_key(const std::string& principal_id, const crypto::KeyId& key_id);
    std::optional<crypto::KeyId> bound_key(const std::string& principal_id) const;

    RecordId create_entry(const Identity& identity, const AccessGrant& pmd_grant);

    /// Expired and absent grants both report NotAuthorized.
    AccessGrant lookup_grant(const IdentityQuery& query, const std::string& principal_id, Timestamp at) const;

    /// The single record matching `query`. NotFound / InvalidInput (ambiguous).
    PersonalRecord find(const IdentityQuery& query) const;
    std::optional<PersonalRecord> record(RecordId id) const;

    void add_grant(RecordId id, const AccessGrant& grant);
    void revoke_grant(RecordId id, const std::string& principal_id);
    std::size_t sweep_expired(Timestamp now);
    std::vector<PatientListing> list_patients_of(const std::string& principal_id, Timestamp at) const;

    /// Every grant held by the principal, valid or not.
    std::vector<PatientListing> grants_held_by(const std::string& principal_id) const;

    void remove_entry(RecordId id);
    void replace_grant_epid(RecordId id, const std::string& principal_id, const crypto::LayeredCiphertext& epid);

    /// Record whose grant for `principal_id` carries exactly `epid`.
    std::optional<RecordId> find_by_grant_epid(const std::string& principal_id,
                                               const crypto::LayeredCiphertext& epid) const;

    nlohmann::json dump() const;
    std::size_t size() const;
    std::size_t grant_count() const;

private:
    void check_grant_shape(const AccessGrant& grant) const;
    const PersonalRecord& find_locked(const IdentityQuery& query) const;
    PersonalRecord& record_locked(RecordId id);
    void apply(const nlohmann::json& entry);
    void compact_locked();

    mutable std::shared_mutex mutex_;
    Journal journal_;
    std::map<RecordId, PersonalRecord> records_;
    std::map<std::string, crypto::KeyId> keys_;
    RecordId next_id_ = 1;
};

} // namespace nusa::registry
