#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nusa/als/service.hpp"
#include "nusa/ehr/ehr_store.hpp"
#include "nusa/identity.hpp"
#include "nusa/journal.hpp"

namespace nusa::terminal {

/// A master terminal's association of a patient with his PID and medical data.
struct LocalPatientEntry {
    Identity identity;
    crypto::PatientIdentifier pid;
    std::vector<als::StoreView> cached;
    ehr::FieldMap dirty;  // local clear-field edits not yet pushed

    bool is_dirty() const noexcept { return !dirty.empty(); }
};

void to_json(nlohmann::json& j, const LocalPatientEntry& e);
void from_json(const nlohmann::json& j, LocalPatientEntry& e);

/// Journaled local database of a master terminal, keyed by fiscal code.
class LocalDatabase {
public:
    explicit LocalDatabase(std::filesystem::path journal_path = {});

    const LocalPatientEntry* find(const std::string& fiscal_code) const;
    const LocalPatientEntry* find(const IdentityQuery& query) const;
    std::vector<LocalPatientEntry> entries() const;
    std::size_t size() const noexcept { return entries_.size(); }

    void put(const LocalPatientEntry& entry);
    void remove(const std::string& fiscal_code);

private:
    Journal journal_;
    std::map<std::string, LocalPatientEntry> entries_;
};


} // namespace nusa::terminal
