#include "nusa/registry/patient_registry.hpp"

#include <algorithm>
#include <mutex>

#include "nusa/error.hpp"

namespace nusa::registry {

using nlohmann::json;

std::string_view to_string(Role role) noexcept {
    switch (role) {
    case Role::PMD: return "PMD";
    case Role::SMD: return "SMD";
    case Role::PATIENT: return "PATIENT";
    }
    return "?";
}

Role role_from_string(std::string_view name) {
    if (name == "PMD") return Role::PMD;
    if (name == "SMD") return Role::SMD;
    if (name == "PATIENT") return Role::PATIENT;
    fail(ErrorCode::InvalidInput, "unknown role " + std::string(name));
}

const AccessGrant* PersonalRecord::grant_of(std::string_view principal) const noexcept {
    const auto it = std::find_if(grants.begin(), grants.end(),
                                 [&](const AccessGrant& g) { return g.principal_id == principal; });
    return it == grants.end() ? nullptr : &*it;
}

const AccessGrant& PersonalRecord::pmd_grant() const {
    const auto it = std::find_if(grants.begin(), grants.end(), [](const AccessGrant& g) { return g.role == Role::PMD; });
    if (it == grants.end()) fail(ErrorCode::InvalidGrant, "record without PMD grant");
    return *it;
}

void to_json(json& j, const AccessGrant& g) {
    j = {{"principal", g.principal_id}, {"role", to_string(g.role)}, {"epid", g.epid}, {"windows", g.windows}};
}

void from_json(const json& j, AccessGrant& g) {
    g.principal_id = j.at("principal").get<std::string>();
    g.role = role_from_string(j.at("role").get<std::string>());
    g.epid = j.at("epid").get<crypto::LayeredCiphertext>();
    g.windows = j.value("windows", std::vector<Window>{});
}

void to_json(json& j, const PersonalRecord& r) {
    j = {{"id", r.id}, {"identity", r.identity}, {"grants", r.grants}};
}

void from_json(const json& j, PersonalRecord& r) {
    r.id = j.at("id").get<RecordId>();
    r.identity = j.at("identity").get<Identity>();
    r.grants = j.at("grants").get<std::vector<AccessGrant>>();
}

PatientRegistry::PatientRegistry(std::filesystem::path journal_path) {
    if (journal_path.empty()) return;
    journal_ = Journal(std::move(journal_path));
    journal_.replay([this](const json& entry) { apply(entry); });
}

void PatientRegistry::apply(const json& e) {
    const auto op = e.at("op").get<std::string>();
    if (op == "bind_key") {
        keys_[e.at("principal").get<std::string>()] =
            fixed_from_hex<crypto::kKeyIdSize>(e.at("key_id").get<std::string>());
    } else if (op == "create" || op == "record") {
        PersonalRecord rec;
        if (op == "record") {
            rec = e.at("record").get<PersonalRecord>();
        } else {
            rec.id = e.at("id").get<RecordId>();
            rec.identity = e.at("identity").get<Identity>();
            rec.grants.push_back(e.at("grant").get<AccessGrant>());
        }
        next_id_ = std::max(next_id_, rec.id + 1);
        records_[rec.id] = std::move(rec);
    } else if (op == "add_grant") {
        record_locked(e.at("id").get<RecordId>()).grants.push_back(e.at("grant").get<AccessGrant>());
    } else if (op == "revoke") {
        auto& grants = record_locked(e.at("id").get<RecordId>()).grants;
        const auto principal = e.at("principal").get<std::string>();
        std::erase_if(grants, [&](const AccessGrant& g) { return g.principal_id == principal; });
    } else if (op == "remove") {
        records_.erase(e.at("id").get<RecordId>());
    } else if (op == "replace_epid") {
        auto& rec = record_locked(e.at("id").get<RecordId>());
        const auto principal = e.at("principal").get<std::string>();
        for (auto& g : rec.grants) {
            if (g.principal_id == principal) g.epid = e.at("epid").get<crypto::LayeredCiphertext>();
        }
    } else if (op == "meta") {
        next_id_ = std::max(next_id_, e.at("next_id").get<RecordId>());
    } else {
        fail(ErrorCode::ParseError, "unknown registry journal op " + op);
    }
}

PersonalRecord& PatientRegistry::record_locked(RecordId id) {
    const auto it = records_.find(id);
    if (it == records_.end()) fail(ErrorCode::NotFound, "no registry record " + std::to_string(id));
    return it->second;
}

void PatientRegistry::bind_key(const std::string& principal_id, const crypto::KeyId& key_id) {
    if (principal_id.empty()) fail(ErrorCode::InvalidInput, "empty principal id");
    std::unique_lock lock(mutex_);
    const json entry = {{"op", "bind_key"}, {"principal", principal_id}, {"key_id", to_hex(key_id)}};
    journal_.append(entry);
    apply(entry);
}

std::optional<crypto::KeyId> PatientRegistry::bound_key(const std::string& principal_id) const {
    std::shared_lock lock(mutex_);
    const auto it = keys_.find(principal_id);
    if (it == keys_.end()) return std::nullopt;
    return it->second;
}

void PatientRegistry::check_grant_shape(const AccessGrant& grant) const {
    if (grant.principal_id.empty()) fail(ErrorCode::InvalidGrant, "grant without principal");
    if (grant.epid.layer_count() != 1) fail(ErrorCode::InvalidGrant, "EPID must carry exactly one layer");
    const auto it = keys_.find(grant.principal_id);
    if (it == keys_.end() || it->second != grant.epid.layers.front().key_id) {
        fail(ErrorCode::InvalidGrant, "EPID layer is not keyed by " + grant.principal_id);
    }
    if (grant.role == Role::PMD && !grant.windows.empty()) {
        fail(ErrorCode::InvalidGrant, "PMD grants cannot carry validity windows");
    }
    for (const auto& w : grant.windows) {
        if (w.end < w.start) fail(ErrorCode::InvalidGrant, "window end precedes start");
    }
}

RecordId PatientRegistry::create_entry(const Identity& identity, const AccessGrant& pmd_grant) {
    if (identity.fiscal_code.empty()) fail(ErrorCode::InvalidInput, "identity without fiscal code");
    std::unique_lock lock(mutex_);
    if (pmd_grant.role != Role::PMD) fail(ErrorCode::InvalidGrant, "initial grant must be PMD");
    check_grant_shape(pmd_grant);
    for (const auto& [id, rec] : records_) {
        if (rec.identity.fiscal_code == identity.fiscal_code) {
            fail(ErrorCode::AlreadyExists, "fiscal code already registered");
        }
    }
    const RecordId id = next_id_;
    const json entry = {{"op", "create"}, {"id", id}, {"identity", identity}, {"grant", pmd_grant}};
    journal_.append(entry);
    apply(entry);
    return id;
}

const PersonalRecord& PatientRegistry::find_locked(const IdentityQuery& query) const {
    validate(query);
    const PersonalRecord* hit = nullptr;
    for (const auto& [id, rec] : records_) {
        if (!matches(query, rec.identity)) continue;
        if (hit) fail(ErrorCode::InvalidInput, "identity query is ambiguous");
        hit = &rec;
    }
    if (!hit) fail(ErrorCode::NotFound, "no patient matches the query");
    return *hit;
}

PersonalRecord PatientRegistry::find(const IdentityQuery& query) const {
    std::shared_lock lock(mutex_);
    return find_locked(query);
}

std::optional<PersonalRecord> PatientRegistry::record(RecordId id) const {
    std::shared_lock lock(mutex_);
    const auto it = records_.find(id);
    if (it == records_.end()) return std::nullopt;
    return it->second;
}

AccessGrant PatientRegistry::lookup_grant(const IdentityQuery& query, const std::string& principal_id,
                                          Timestamp at) const {
    std::shared_lock lock(mutex_);
    const PersonalRecord& rec = find_locked(query);
    const AccessGrant* grant = rec.grant_of(principal_id);
    if (!grant || !grant->valid_at(at)) fail(ErrorCode::NotAuthorized, "no valid grant");
    return *grant;
}

void PatientRegistry::add_grant(RecordId id, const AccessGrant& grant) {
    std::unique_lock lock(mutex_);
    const PersonalRecord& rec = record_locked(id);
    if (grant.role == Role::PMD) fail(ErrorCode::InvalidGrant, "record already has a PMD");
    check_grant_shape(grant);
    if (rec.grant_of(grant.principal_id)) fail(ErrorCode::AlreadyExists, "principal already holds a grant");
    const json entry = {{"op", "add_grant"}, {"id", id}, {"grant", grant}};
    journal_.append(entry);
    apply(entry);
}

void PatientRegistry::revoke_grant(RecordId id, const std::string& principal_id) {
    std::unique_lock lock(mutex_);
    const PersonalRecord& rec = record_locked(id);
    const AccessGrant* grant = rec.grant_of(principal_id);
    if (!grant) fail(ErrorCode::NotFound, "no grant for principal");
    if (grant->role == Role::PMD) fail(ErrorCode::InvalidOperation, "PMD grants are removed with the patient");
    const json entry = {{"op", "revoke"}, {"id", id}, {"principal", principal_id}};
    journal_.append(entry);
    apply(entry);
}

std::size_t PatientRegistry::sweep_expired(Timestamp now) {
    std::unique_lock lock(mutex_);
    std::size_t removed = 0;
    for (auto& [id, rec] : records_) {
        removed += std::erase_if(rec.grants, [now](const AccessGrant& g) {
            return g.role != Role::PMD && windows_expired(g.windows, now);
        });
    }
    compact_locked();
    return removed;
}

void PatientRegistry::compact_locked() {
    if (!journal_.enabled()) return;
    std::vector<json> entries;
    entries.push_back({{"op", "meta"}, {"next_id", next_id_}});
    for (const auto& [principal, key_id] : keys_) {
        entries.push_back({{"op", "bind_key"}, {"principal", principal}, {"key_id", to_hex(key_id)}});
    }
    for (const auto& [id, rec] : records_) entries.push_back({{"op", "record"}, {"record", rec}});
    journal_.rewrite(entries);
}

std::vector<PatientListing> PatientRegistry::list_patients_of(const std::string& principal_id, Timestamp at) const {
    std::shared_lock lock(mutex_);
    std::vector<PatientListing> out;
    for (const auto& [id, rec] : records_) {
        const AccessGrant* g = rec.grant_of(principal_id);
        if (g && g->valid_at(at)) out.push_back({id, rec.identity, *g});
    }
    return out;
}

std::vector<PatientListing> PatientRegistry::grants_held_by(const std::string& principal_id) const {
    std::shared_lock lock(mutex_);
    std::vector<PatientListing> out;
    for (const auto& [id, rec] : records_) {
        if (const AccessGrant* g = rec.grant_of(principal_id)) out.push_back({id, rec.identity, *g});
    }
    return out;
}

void PatientRegistry::remove_entry(RecordId id) {
    std::unique_lock lock(mutex_);
    record_locked(id);
    const json entry = {{"op", "remove"}, {"id", id}};
    journal_.append(entry);
    apply(entry);
}

void PatientRegistry::replace_grant_epid(RecordId id, const std::string& principal_id,
                                         const crypto::LayeredCiphertext& epid) {
    std::unique_lock lock(mutex_);
    const PersonalRecord& rec = record_locked(id);
    const AccessGrant* grant = rec.grant_of(principal_id);
    if (!grant) fail(ErrorCode::NotFound, "no grant for principal");
    AccessGrant replacement = *grant;
    replacement.epid = epid;
    check_grant_shape(replacement);
    const json entry = {{"op", "replace_epid"}, {"id", id}, {"principal", principal_id}, {"epid", epid}};
    journal_.append(entry);
    apply(entry);
}

std::optional<RecordId> PatientRegistry::find_by_grant_epid(const std::string& principal_id,
                                                            const crypto::LayeredCiphertext& epid) const {
    std::shared_lock lock(mutex_);
    for (const auto& [id, rec] : records_) {
        const AccessGrant* g = rec.grant_of(principal_id);
        if (g && g->epid == epid) return id;
    }
    return std::nullopt;
}

json PatientRegistry::dump() const {
    std::shared_lock lock(mutex_);
    json keys = json::object();
    for (const auto& [principal, key_id] : keys_) keys[principal] = to_hex(key_id);
    json records = json::array();
    for (const auto& [id, rec] : records_) records.push_back(rec);
    return {{"keys", keys}, {"records", records}};
}

std::size_t PatientRegistry::size() const {
    std::shared_lock lock(mutex_);
    return records_.size();
}

std::size_t PatientRegistry::grant_count() const {
    std::shared_lock lock(mutex_);
    std::size_t n = 0;
    for (const auto& [id, rec] : records_) n += rec.grants.size();
    return n;
}

} // namespace nusa::registry
