#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nusa/crypto/layered.hpp"
#include "nusa/crypto/obfuscation.hpp"
#include "nusa/journal.hpp"

namespace nusa::ehr {

using crypto::ObfuscatedBlob;
using crypto::PatientIdentifier;

/// Clear values are JSON strings or numbers.
using FieldMap = std::map<std::string, nlohmann::json>;

struct MedicalRecord {
    PatientIdentifier pid;
    FieldMap clear_fields;
    std::map<std::string, ObfuscatedBlob> obfuscated_fields;
    std::map<std::string, std::set<std::string>> hidden_for;  // field -> denied MD ids

    friend bool operator==(const MedicalRecord&, const MedicalRecord&) = default;
};

struct LegacyRecord {
    std::string native_key;
    FieldMap payload;
    std::optional<PatientIdentifier> pid;

    friend bool operator==(const LegacyRecord&, const LegacyRecord&) = default;
};

/// What a requester gets back: hidden obfuscated fields are already removed and
/// the visibility map is not exposed.
struct RecordView {
    PatientIdentifier pid;
    FieldMap clear_fields;
    std::map<std::string, ObfuscatedBlob> obfuscated_fields;
    std::vector<FieldMap> legacy;

    friend bool operator==(const RecordView&, const RecordView&) = default;
};

struct RecordDelta {
    FieldMap set_clear;
    std::vector<std::string> erase_clear;
    std::map<std::string, ObfuscatedBlob> set_obfuscated;
    std::vector<std::string> erase_obfuscated;

    bool empty() const noexcept {
        return set_clear.empty() && erase_clear.empty() && set_obfuscated.empty() && erase_obfuscated.empty();
    }
};

struct SearchHit {
    PatientIdentifier pid;
    std::string field;

    friend auto operator<=>(const SearchHit&, const SearchHit&) = default;
};

enum class Statistic { Mean, Variance, Count };

Statistic statistic_from_string(std::string_view name);

/// Population statistics; NoData on an empty sample.
double compute_statistic(std::span<const double> values, Statistic statistic);

/// Throws IdentityLeakRejected when a field name is on the identity deny-list or
/// a string value (or keyword) looks like a fiscal code.
void check_identity_leak(const FieldMap& clear, const std::map<std::string, ObfuscatedBlob>& obfuscated = {});
bool looks_like_fiscal_code(std::string_view value);

void to_json(nlohmann::json& j, const MedicalRecord& r);
void from_json(const nlohmann::json& j, MedicalRecord& r);
void to_json(nlohmann::json& j, const LegacyRecord& r);
void from_json(const nlohmann::json& j, LegacyRecord& r);
void to_json(nlohmann::json& j, const RecordView& v);
void from_json(const nlohmann::json& j, RecordView& v);
void to_json(nlohmann::json& j, const RecordDelta& d);
void from_json(const nlohmann::json& j, RecordDelta& d);
void to_json(nlohmann::json& j, const SearchHit& h);
void from_json(const nlohmann::json& j, SearchHit& h);

/// One EHR store: medical data keyed by PID, no identities. Same single-writer /
/// multi-reader contract and journal framing as the registry.
class EhrStore {
public:
    explicit EhrStore(std::string name, std::filesystem::path journal_path = {}, bool editable = true);

    EhrStore(const EhrStore&) = delete;
    EhrStore& operator=(const EhrStore&) = delete;

    const std::string& name() const noexcept { return name_; }
    bool editable() const noexcept { return editable_; }

    void insert(const MedicalRecord& record);
    RecordView query_by_pid(const PatientIdentifier& pid, const std::string& requester) const;
    bool contains(const PatientIdentifier& pid) const;

    void update(const PatientIdentifier& pid, const RecordDelta& delta);
    void replace(const PatientIdentifier& pid, const MedicalRecord& record);
    void remove_by_pid(const PatientIdentifier& pid);

    void add_legacy(const LegacyRecord& record);
    /// One JSON LegacyRecord per line; returns the number imported.
    std::size_t import_legacy(const std::filesystem::path& file);
    /// Equality match over "native_key" and payload fields. Returns records attached.
    std::size_t attach_pid_to_legacy(const FieldMap& match, const PatientIdentifier& pid);

    std::vector<SearchHit> keyword_search(std::span<const std::string> terms, const std::string& requester) const;
    void set_visibility(const PatientIdentifier& pid, const std::string& field, const std::string& md_id, bool hidden);

    /// Ownership verifier for patient-driven visibility changes; first claim wins.
    void claim_owner(const PatientIdentifier& pid, const crypto::Digest& verifier);
    bool owner_matches(const PatientIdentifier& pid, const crypto::Digest& verifier) const;
    bool has_owner(const PatientIdentifier& pid) const;

    std::vector<double> numeric_values(const std::string& field) const;
    double stats(const std::string& field, Statistic statistic) const;

    nlohmann::json dump() const;
    std::size_t size() const;

private:
    struct Entry {
        MedicalRecord record;
        std::optional<crypto::Digest> owner;
    };

    void apply(const nlohmann::json& entry);
    void commit(const nlohmann::json& entry);

    std::string name_;
    bool editable_;
    mutable std::shared_mutex mutex_;
    Journal journal_;
    std::map<PatientIdentifier, Entry> records_;
    std::vector<LegacyRecord> legacy_;
};

} // namespace nusa::ehr
